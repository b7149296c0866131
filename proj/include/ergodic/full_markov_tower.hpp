#pragma once

// Full Markov return map on a critical neighbourhood Omega and its tower
// extension: witness-window selection around the preimages of c, the capture
// construction of the return partition {w~, R} with f^R(w~) = Omega, return
// time tails with a decay-regime verdict, the separation-time distortion
// check, and the tower step / projection semantics.

#include <cstdint>
#include <vector>

#include "ergodic/inducer.hpp"
#include "ergodic/orbit_diagnostics.hpp"

namespace ergodic {

struct DensityFailureError : ErgodicError {
    int depth;
    double gap;
    DensityFailureError(int depth_, double gap_)
        : ErgodicError("DensityFailure",
                       "preimage gaps never fall below the large scale; depth " +
                           std::to_string(depth_) + ", gap " + std::to_string(gap_)),
          depth(depth_), gap(gap_) {}
};

struct CoverageTooLowError : ErgodicError {
    explicit CoverageTooLowError(double coverage)
        : ErgodicError("CoverageTooLow",
                       "certified coverage " + std::to_string(coverage) +
                           " below the 0.99 precondition") {}
};

struct InsufficientPairsError : ErgodicError {
    long pairs;
    explicit InsufficientPairsError(long pairs_)
        : ErgodicError("InsufficientPairs",
                       "only " + std::to_string(pairs_) +
                           " sampled pairs reach separation time 3"),
          pairs(pairs_) {}
};

struct OmegaChoice {
    Interval omega;
    int t0 = 0;          // least preimage depth with gaps <= delta' (end gaps doubled)
    double max_gap = 0.0;  // the gap achieved at depth t0
    // Every pull-back component of Omega up to window_depth, each containing
    // one preimage of c; sorted by (t, u). The lemma_ok subset additionally
    // meets the width cap delta'/10 and the middle-fifth placement.
    std::vector<CaptureWindow> windows;
    int window_depth = 0;
    long lemma_windows = 0;
};

// Selects Omega = (c - h, c + h) at the largest h allowed by the geometry
// (h_cap, the distance to the ends of jstar, and half the distance to other
// critical points), computes the density depth t0, and harvests the witness
// windows. Throws DensityFailureError when the preimage lattice never
// reaches gaps <= delta_prime by max_depth.
OmegaChoice choose_omega(const PiecewiseMap& m, Interval jstar, int critical_index,
                         double delta_prime, double h_cap, int max_depth = 20);

struct FullMarkovMap {
    Interval omega;
    int t0 = 0;
    double xi = 0.0;  // smallest |w~| / |piece at capture time|
    std::vector<CapturedElement> Q;  // sorted by left endpoint of w~
    long long gcd_R = 0;
    double coverage = 0.0;  // sum |w~| / |Omega|
    double unresolved_mass = 0.0;
    double max_residual = 0.0;  // worst endpoint mismatch against the ends of Omega
    long max_R = 0;
    InducerParams params;  // as used: delta'' tightened to min(delta'/3, |Omega|)
};

// Runs the capture engine on J = Omega: every piece whose image wraps a
// witness window (or Omega itself) yields an element w~ with f^R(w~) = Omega,
// R = free time + witness depth. Mass never captured within the budgets is
// reported as unresolved; throws ErgodicError("LeakBudgetExceeded") past the
// leak budget.
FullMarkovMap build_full_markov(const PiecewiseMap& m, const OmegaChoice& oc,
                                const InducerParams& params, const DiagTables& tables,
                                int threads = 1);

// tail[n] = (mass of elements with R > n + unresolved mass) / |Omega| for
// n = 0 .. max_R. Non-increasing; the floor tail[max_R] is the unresolved
// fraction.
std::vector<double> return_tail(const FullMarkovMap& fm);

enum class TailRegime { summable, polynomial, stretched, exponential, unclassified };
const char* tail_regime_name(TailRegime r);
int tail_regime_rank(TailRegime r);  // faster decay = larger rank

// Regime of a short positive tail: trims the unresolved floor, then fits
// exponential and power-law models on what remains (>= 8 points needed).
// rate receives beta (exponential) or alpha (polynomial) when non-null.
TailRegime classify_short_tail(const std::vector<double>& tail, double* rate = nullptr);

struct TailVerdict {
    TailRegime measured = TailRegime::unclassified;
    TailRegime predicted = TailRegime::unclassified;
    double measured_rate = 0.0;
    double predicted_rate = 0.0;
    bool match = false;  // measured decay at least as fast as predicted
};

// Prediction from the critical-orbit tables: exponential gamma_n gives an
// exponential tail, stretched gives stretched, d_n ~ n^-alpha with alpha > 1
// gives polynomial, and converging summability series alone give a summable
// tail with no rate. The prediction is an upper bound on the tail, so the
// verdict matches when the measured regime is at least as fast.
TailVerdict compare_return_tail(const FullMarkovMap& fm, const DiagTables& tables);

struct SeparationPair {
    int s = 0;               // least k with the two forward orbits in different elements
    double ratio_minus_1 = 0.0;  // |Df^R(x)/Df^R(y) - 1| inside the starting element
};

struct DistortionCheck {
    double beta_hat = 0.0;
    double C_hat = 0.0;
    bool pass = false;
    bool trivial = false;  // derivative ratios vanish (piecewise-affine return map)
    double envelope_coverage = 0.0;  // fraction of pairs under C_hat * beta_hat^s
    long pairs_deep = 0;             // pairs with s >= 3
    std::vector<SeparationPair> pairs;
};

// Samples point pairs inside common elements, tracks element membership under
// the iterated return map up to `depth` (censored pairs keep s = depth), and
// fits the per-s 99th-percentile envelope of the derivative ratios. PASS
// needs a negative fitted slope and 99% of the pairs under the envelope.
// Preconditions: coverage >= 0.99 (CoverageTooLowError) and at least 100
// pairs with s >= 3 (InsufficientPairsError).
DistortionCheck separation_distortion_check(const FullMarkovMap& fm, const PiecewiseMap& m,
                                            int depth, int samples, std::uint64_t seed);

// Affine change of coordinates u -> offset + scale * u between the tower's
// reference interval and the phase-space cycle interval. Identity when the
// map is not renormalizable.
struct AffineConj {
    double scale = 1.0;
    double offset = 0.0;
    double forward(double u) const { return offset + scale * u; }
    double inverse(double y) const { return (y - offset) / scale; }
};

struct TowerElement {
    Interval w;  // reference coordinates
    int T = 0;   // tower height above this element: T = R / m
    long R = 0;
};

struct Tower {
    AffineConj conj;
    int m = 1;  // phase-space steps absorbed per tower-base step
    Interval base;
    std::vector<TowerElement> elements;  // sorted by left endpoint
    std::vector<double> level_mass;      // k = 0 .. max T
    double total_mass = 0.0;             // sum over levels == sum (T+1)|w|
};

// m must divide every R; throws ErgodicError("TowerPeriodMismatch") otherwise.
Tower build_tower(const FullMarkovMap& fm, int m = 1, AffineConj conj = {});

struct TowerState {
    double x = 0.0;
    int level = 0;
    int elem = -1;  // index into tower elements, -1 when x lies in no element
};

// Base state above x (level 0), elem = -1 when x is uncovered.
TowerState tower_locate(const Tower& tw, double x);

// Climb one level while level + 1 < T, otherwise return to the base through
// the full return map. States over uncovered points are returned unchanged.
TowerState tower_step(const Tower& tw, const PiecewiseMap& m, const TowerState& s);

// The phase-space point represented by a state: g^level(x) in reference
// coordinates, where g is the m-step map conjugated by the affine change.
double tower_project(const Tower& tw, const PiecewiseMap& m, const TowerState& s);

long long gcd_of_returns(const std::vector<CapturedElement>& q);

} // namespace ergodic
