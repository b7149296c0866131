#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ergodic/interval.hpp"
#include "ergodic/map_model.hpp"
#include "ergodic/orbit_diagnostics.hpp"

namespace ergodic {

// Scale parameters for the induced construction. delta is the radius of the
// critical neighbourhood used for binding, delta1 = delta / 2 the visit
// radius, delta_prime the large-image scale, delta_dprime the smallest
// starting interval accepted, eps the side margin cut off an emitted element.
struct InducerParams {
    double delta = 0.0;
    double delta1 = 0.0;
    double delta_prime = 0.0;
    double delta_dprime = 0.0;
    double eps = 0.0;
    double zeta = 1.0;
    int N_max = 5000;
    double w_min = 1e-13;
    double leak_budget = 1e-3;
};

// One-sided critical-orbit tables for every critical point of a map,
// indexed 2 * critical_index + (0 for the minus side, 1 for the plus side).
struct DiagTables {
    std::vector<CriticalOrbitRecord> recs;

    const CriticalOrbitRecord& at(int critical_index, Side s) const {
        return recs.at(2 * static_cast<size_t>(critical_index) +
                       (s == Side::plus ? 1 : 0));
    }
};

DiagTables build_tables(const PiecewiseMap& m, int horizon = 200);

// Number of steps for which the forward orbit of x stays inside the
// shrinking shadow neighbourhood of the critical orbit it is bound to.
// Returns 0 when x lies outside every delta-neighbourhood. Capped at the
// table horizon; *cap_hit is set when the cap bites.
int binding_period(const PiecewiseMap& m, double x, const DiagTables& tables,
                   double delta, bool* cap_hit = nullptr);

// Largest candidate delta whose binding tail is summable below 1/2 on every
// critical side and whose neighbourhoods are pairwise disjoint. Throws
// ErgodicError("NoFeasibleDelta") when the whole grid fails.
InducerParams select_delta(const PiecewiseMap& m, const DiagTables& tables,
                           const std::vector<double>& candidates = {},
                           double zeta = 1.0);

// Smallest image length seen while iterating the two half-neighbourhoods of
// each critical point until the image first wraps a critical point, capped
// at delta / 2. Throws ErgodicError("NoExpansion") if no component ever
// grows back to the critical set.
double estimate_delta_prime(const PiecewiseMap& m, double delta, int N_max = 5000);

// Fills the derived fields of params from delta: delta1, delta_prime (via
// estimate_delta_prime), eps, delta_dprime.
void derive_scales(const PiecewiseMap& m, InducerParams& params);

struct ReturnEvent {
    long nu = 0;        // return time
    int p = 0;          // binding period granted at the return
    int critical = -1;  // which critical neighbourhood was visited
    bool deep = false;
};

struct InducedElement {
    Interval w;              // domain piece
    long p_hat = 0;          // stopping time: f^{p_hat} maps w onto image
    Interval image;          // actual endpoint images, sorted
    double distortion = 1.0; // sup/inf of |Df^{p_hat}| over interior samples
    std::vector<ReturnEvent> history;
};

struct InducedMap {
    Interval J;
    InducerParams params;
    std::vector<InducedElement> elements;
    double unresolved_mass = 0.0;
    double K_eps = 1.0;      // worst element distortion
    long n_deep = 0, n_shallow = 0;
};

// Witness capture target for the full-return construction: f^t maps
// [u, v] monotonically onto Omega. t = 0 denotes Omega itself.
struct CaptureWindow {
    double u = 0.0, v = 0.0;
    int t = 0;
    double x = 0.0;         // preimage of the critical point inside [u, v]
    bool lemma_ok = false;  // width <= delta'/10 and x in the middle fifth
};

struct CaptureSet {
    Interval omega;
    std::vector<CaptureWindow> windows;  // sorted by u
    int t0 = 0;
};

struct CapturedElement {
    Interval w_tilde;
    long R = 0;          // p_hat + witness depth
    int t = 0;
    long p_hat = 0;
    double residual = 0.0;   // worst |f^R(endpoint) - boundary of Omega|
    double capture_ratio = 0.0;  // |w_tilde| / |piece at capture time|
};

// Shared worklist engine. In induced mode (capture == nullptr) it emits
// InducedElements at large-scale visits; in capture mode it pulls back every
// disjoint window that fits inside an image once binding has expired.
struct EngineResult {
    std::vector<InducedElement> elements;
    std::vector<CapturedElement> captured;
    double unresolved_mass = 0.0;
    long n_deep = 0, n_shallow = 0;
};

EngineResult engine_run(const PiecewiseMap& m, Interval J,
                        const InducerParams& params, const DiagTables& tables,
                        const CaptureSet* capture, int threads,
                        double residual_accept = 1e-9, int generation_cap = 300);

// pre: |J| >= delta_dprime. post: elements disjoint, images >= delta_prime,
// mass(elements) + unresolved = |J|; throws
// ErgodicError("LeakBudgetExceeded") when unresolved > leak_budget * |J|.
InducedMap build_induced(const PiecewiseMap& m, Interval J,
                         const InducerParams& params, const DiagTables& tables,
                         int threads = 1);

// t_n = (unresolved + mass of elements with p_hat > n) / |J| for
// n = 0 .. max p_hat. Non-increasing by construction.
std::vector<double> tail_distribution(const InducedMap& im);

struct DFBoundReport {
    double K1 = 0.0;     // min over sampled deep returns of |Df^p(x)| * gamma_p
    long events = 0;
    bool pass = false;
};

// Empirical check that the return derivative dominates 1/gamma_p at deep
// returns, uniformly over the construction.
DFBoundReport check_DF_bound(const PiecewiseMap& m, const InducedMap& im,
                             const DiagTables& tables);

// f^n of a plain value, resolving critical hits by the one-sided convention
// used throughout the induced construction.
double iterate_value(const PiecewiseMap& m, double x, long n);

} // namespace ergodic
