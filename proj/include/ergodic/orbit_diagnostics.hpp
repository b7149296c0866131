#pragma once

// Critical-orbit diagnostics: the recurrence/derivative sequences gamma_n and
// d_n, partial sums of the two summability series, decay-regime classification,
// and the expansion-outside-a-critical-neighborhood estimate.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ergodic/map_model.hpp"

namespace ergodic {

// All per-step arrays are indexed by iterate n = 1..N; slot 0 is unused.
struct CriticalOrbitRecord {
    int critical_index = -1;
    Side side = Side::interior;  // side whose one-sided critical value seeds the orbit
    int N = 0;
    double l_start = 1.0;  // order l(c) on the starting side

    std::vector<double> orbit;          // f^n(c)
    std::vector<double> log_deriv;      // log|Df^n(f(c))|
    std::vector<int> nearest;           // index of the closest critical point to f^n(c)
    std::vector<double> nearest_order;  // order of that point on the side where f^n(c) lies
    std::vector<double> dist;           // |f^n(c) - nearest|
    std::vector<double> gamma;          // clamped at 1/2
    std::vector<double> gamma_raw;      // unclamped argument of the min; summand of series 1
    std::vector<double> dmin;           // d_n; d_1 = +inf
    std::vector<double> S1_partial;
    std::vector<double> S2_partial;
};

CriticalOrbitRecord critical_orbit(const PiecewiseMap& m, int critical_index,
                                   Side side, int N);

enum class SumVerdict { converging, diverging, inconclusive };
const char* verdict_name(SumVerdict v);

struct SummabilityVerdict {
    SumVerdict S1 = SumVerdict::inconclusive;
    SumVerdict S2 = SumVerdict::inconclusive;
};

// Heuristic tail test on finitely many terms; not a convergence proof.
SumVerdict series_verdict(const std::vector<double>& terms);
SummabilityVerdict summability_verdict(const CriticalOrbitRecord& rec);

enum class Regime { polynomial, stretched, exponential, inconclusive };
const char* regime_name(Regime r);

struct RegimeFit {
    Regime regime = Regime::inconclusive;
    double alpha = 0.0;  // polynomial a_n ~ C n^-alpha; stretched exponent n^alpha
    double beta = 0.0;   // rate of exponential / stretched decay
    double r_squared = 0.0;
    double fitted_constant = 0.0;
};

struct DegenerateSequenceError : ErgodicError {
    DegenerateSequenceError() : ErgodicError("DegenerateSequence",
                                             "sequence is constant or non-positive") {}
};

// a[0] holds the n=1 term. Three tail-half fits (power law, exponential,
// stretched exponential); highest r-squared wins, with the exponential model
// preferred over stretched when the stretching exponent is within 5% of 1.
// Regimes are only declared at r-squared >= 0.98.
RegimeFit classify_decay(const std::vector<double>& a);

struct NoSegmentsError : ErgodicError {
    NoSegmentsError() : ErgodicError("NoSegments",
                                     "every sampled orbit enters the critical neighborhood immediately") {}
};

struct ExpansionReport {
    double C_delta = 0.0;
    double lambda_delta = 0.0;
    int segments = 0;       // orbit segments that stayed outside the neighborhood
    int slope_segments = 0; // segments long enough to contribute a growth slope
    bool red_flag = false;  // lambda_delta <= 0: expansion outside Delta not observed
};

// Empirical constants (C_delta, lambda_delta) with |Df^n(x)| >= C e^{lambda n}
// on sampled orbit segments that stay outside Delta_delta = U (c-delta, c+delta).
// lambda is the least least-squares slope over segments with >= 2 steps; C is
// then the tightest constraint exp(min_k log|Df^k| - lambda k) over all
// segments, so isolated low-derivative visits depress C, not lambda.
ExpansionReport expansion_outside_delta(const PiecewiseMap& m, double delta,
                                        int sample_orbits, int horizon,
                                        std::uint64_t seed);

} // namespace ergodic
