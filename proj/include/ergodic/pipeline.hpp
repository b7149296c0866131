#pragma once

// One-shot orchestration of the whole analysis on a single map: critical-orbit
// diagnostics, cycle detection and renormalization, induced and full-Markov
// construction with the tower, density estimates, correlation decay and the
// CLT, finishing with a concordance verdict between the decay regime
// predicted from the diagnostics and the regime measured on correlations.

#include <cstdint>
#include <vector>

#include "ergodic/cycle_finder.hpp"
#include "ergodic/full_markov_tower.hpp"
#include "ergodic/inducer.hpp"
#include "ergodic/measure_stats.hpp"

namespace ergodic {

struct PipelineOptions {
    std::uint64_t seed = 1;
    int threads = 0;           // <= 0: environment variable, then hardware
    int diag_horizon = 200;
    int max_cycle_period = 32;
    double omega_hcap = 0.4;
    double markov_w_min = 1e-14;
    int bins = 4096;
    long birkhoff_points = 1000000;
    int birkhoff_seeds = 4;
    long birkhoff_burn = 10000;
    int corr_n_max = 32;
    long corr_orbit = 1000000;
    int corr_seeds = 8;
    long clt_block = 1000;
    long clt_samples = 10000;
    int distortion_depth = 30;
    int distortion_samples = 4000;
};

struct ConcordanceVerdict {
    Regime predicted = Regime::inconclusive;
    Regime measured = Regime::inconclusive;
    bool noise_floor = false;  // correlations vanished before a fit was possible
    bool match = false;
};

struct FullReport {
    DiagTables tables;                            // of the input map
    std::vector<SummabilityVerdict> summability;  // one per one-sided record
    std::vector<IntervalCycle> cycles;
    int period = 1;          // minimal-cycle period the analysis renormalized to
    Interval cycle_interval{0.0, 1.0};
    PiecewiseMap analyzed;   // the input map, or its renormalization when period > 1
    DiagTables analyzed_tables;
    InducerParams params;
    InducedMap induced;
    OmegaChoice omega;
    FullMarkovMap markov;
    TailVerdict tail;
    DistortionCheck distortion;
    Tower tower;
    DensityEstimate density_ulam;
    DensityEstimate density_birkhoff;
    CorrelationReport corr;  // carries the data even when the fit was skipped
    CLTReport clt;
    ConcordanceVerdict verdict;
};

// Substream purposes, shared between full-report and the standalone
// subcommands so that a standalone run reproduces its slice of the report.
namespace streams {
constexpr std::uint64_t birkhoff = 0xB1;
constexpr std::uint64_t corr = 0xC0;
constexpr std::uint64_t clt = 0xC1;
constexpr std::uint64_t distortion = 0xD0;
} // namespace streams

// Derived parameter seeds for one purpose under one master seed.
std::vector<std::uint64_t> derived_seeds(std::uint64_t master, std::uint64_t purpose,
                                         int count);

FullReport run_full_report(const PiecewiseMap& m, const PipelineOptions& opt);

} // namespace ergodic
