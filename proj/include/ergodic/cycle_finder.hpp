#pragma once

#include <vector>

#include "ergodic/map_model.hpp"

namespace ergodic {

// Cycle of intervals J, f(J), ..., f^{m-1}(J) with f^m(J) ⊆ J and m least.
struct IntervalCycle {
    std::vector<Interval> intervals;
    int period = 1;
    bool minimal = false;
};

struct CycleSearchOptions {
    int max_period = 64;
    double seed_width = 1e-6;       // initial hull width around each critical point
    double converge_tol = 1e-12;    // endpoint movement treated as converged
    double invariance_tol = 1e-9;
    int max_expansions = 10000;
};

// Hull-expansion search seeded at critical points. Requires a continuous map.
// Cycles with overlapping interiors are discarded; minimal cycles contain no
// other returned cycle.
std::vector<IntervalCycle> find_minimal_cycles(const PiecewiseMap& m,
                                               const CycleSearchOptions& opt = {});

struct NotInvariantError : ErgodicError {
    explicit NotInvariantError(const std::string& what_)
        : ErgodicError("NotInvariant", what_) {}
};

// First-return map of the cycle rescaled to [0,1]:
// g = Λ^{-1} ∘ f^m ∘ Λ with Λ the affine chart onto cycle.intervals[0].
// The induced critical set collects interior points whose orbit meets the
// critical set of f within m steps; one-sided orders compose multiplicatively.
struct Renormalization {
    PiecewiseMap map;
    Interval interval;
    int period = 1;
};

Renormalization renormalize(const PiecewiseMap& m, const IntervalCycle& cycle);
Renormalization renormalize_interval(const PiecewiseMap& m, Interval J, int period);

struct PreimageDensityReport {
    bool dense = false;
    int t0 = -1;                    // least depth with max gap <= tolerance
    double final_max_gap = 0.0;
    std::vector<double> gap_by_depth;
    size_t points = 0;
};

// Breadth-first expansion of the preimages of c inside the invariant set.
// Gap accounting covers end segments at double weight so that a reported
// depth also covers the set boundary.
PreimageDensityReport preimage_density_check(const PiecewiseMap& m,
                                             const IntervalSet& invariant_set,
                                             double c, double gap_tolerance,
                                             int max_depth,
                                             size_t max_points = 2000000);

} // namespace ergodic
