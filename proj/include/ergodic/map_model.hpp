#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ergodic/interval.hpp"

#include "json.hpp"

namespace ergodic {

// Side from which a boundary point is approached. Interior points carry no
// side; a side is meaningful only on the critical set or a domain endpoint.
enum class Side { minus, plus, interior };

inline const char* side_name(Side s) {
    switch (s) {
        case Side::minus: return "minus";
        case Side::plus: return "plus";
        default: return "interior";
    }
}

struct SidedPoint {
    double x = 0.0;
    Side side = Side::interior;
};

// One maximal monotone C^2 piece. The callables must extend continuously to
// the closed domain so one-sided limits are plain evaluations at endpoints.
struct Branch {
    Interval domain;
    std::function<double(double)> value;
    std::function<double(double)> deriv;
    std::function<double(double)> second_deriv;
    int monotone_sign = 1;  // +1 increasing, -1 decreasing
};

// Two-point convention: independent one-sided orders l(c-) and l(c+).
struct CriticalPoint {
    double c = 0.0;
    double l_minus = 1.0;
    double l_plus = 1.0;

    double order(Side s) const { return s == Side::plus ? l_plus : l_minus; }
};

struct ErgodicError : std::runtime_error {
    std::string code;
    ErgodicError(std::string code_, const std::string& what_)
        : std::runtime_error(what_), code(std::move(code_)) {}
};

struct NoBranchError : ErgodicError {
    explicit NoBranchError(const std::string& what_) : ErgodicError("NoBranch", what_) {}
};

struct OrbitHitsCriticalError : ErgodicError {
    int step;
    explicit OrbitHitsCriticalError(int step_)
        : ErgodicError("OrbitHitsCriticalPoint",
                       "orbit lands on the critical set at step " + std::to_string(step_)),
          step(step_) {}
};

struct InvalidMapError : ErgodicError {
    explicit InvalidMapError(const std::string& what_) : ErgodicError("InvalidMapSpec", what_) {}
};

// Piecewise C^2 interval map on [0,1]. Branch domains partition [0,1] up to
// the shared boundary points; every critical point is a branch boundary.
struct PiecewiseMap {
    std::vector<Branch> branches;
    std::vector<CriticalPoint> critical;
    bool continuous = true;
    nlohmann::json config;  // source spec when loaded or derived, else null

    static constexpr double tie_tol = 1e-13;

    // Index of the critical point within tie tolerance of x, or -1.
    int critical_index(double x) const {
        for (size_t i = 0; i < critical.size(); ++i)
            if (std::abs(x - critical[i].c) <= tie_tol) return static_cast<int>(i);
        return -1;
    }

    double nearest_critical_distance(double x, int* index = nullptr) const;

    const Branch& branch_at(const SidedPoint& p) const;
    int branch_index_at(const SidedPoint& p) const;

    // One application of the map. The result side is interior unless the
    // image lands on the critical set within tie tolerance; then the side is
    // the approach direction induced by the branch orientation.
    SidedPoint eval(const SidedPoint& p) const;
};

inline SidedPoint map_eval(const PiecewiseMap& m, const SidedPoint& p) { return m.eval(p); }

struct DerivProduct {
    double log_abs = 0.0;
    int sign = 1;
    bool zero = false;
    double abs_value() const { return zero ? 0.0 : std::exp(log_abs); }
    double value() const { return sign * abs_value(); }
};

// Derivative of f^n at p by the chain rule in log magnitude.
DerivProduct map_deriv_n(const PiecewiseMap& m, const SidedPoint& p, int n);

// Fitted one-sided critical order against the declared value.
struct OrderCheck {
    int cp_index = 0;
    Side side = Side::minus;
    double declared = 1.0;
    double fitted = 1.0;
    double ratio_lo = 0.0;  // comparability bounds of |f(x)-f(c)| / |x-c|^l
    double ratio_hi = 0.0;
    double deriv_ratio_lo = 0.0;  // |Df(x)| / |x-c|^{l-1}
    double deriv_ratio_hi = 0.0;
    bool pass = false;
    size_t samples = 0;
};

std::vector<OrderCheck> verify_orders(const PiecewiseMap& m, double mismatch_tol = 0.05);

struct SchwarzianReport {
    bool pass = false;       // no positive sample on any branch
    bool weak = false;       // some branch affine; Schwarzian vanishes there
    double max_sample = 0.0;
    double worst_x = 0.0;
    int worst_branch = -1;
};

// Sf = D3f/Df - 1.5 (D2f/Df)^2 sampled per branch; D3f by central finite
// difference of the second derivative (step 1e-5), guard zone 1e-6 at ends.
SchwarzianReport schwarzian_check(const PiecewiseMap& m, int samples_per_branch = 512);

// Exact image of an interval as a union of monotone-piece images.
IntervalSet interval_image(const PiecewiseMap& m, const Interval& iv);

// All solutions of f(x) = y, one per branch whose range covers y.
std::vector<double> branch_preimages(const PiecewiseMap& m, double y);

struct MapValidation {
    bool ok = true;
    std::vector<std::string> violations;
};

// Structural checks: branch partition, declared monotonicity against sampled
// slopes, continuity flag against one-sided limits, orders >= 1.
MapValidation validate_map(const PiecewiseMap& m);

} // namespace ergodic
