#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace ergodic {

// Compensated accumulator. Summation order must be fixed by the caller when
// bytewise reproducibility is required.
struct KahanSum {
    double sum = 0.0;
    double c = 0.0;
    void add(double x) {
        double y = x - c;
        double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    double value() const { return sum; }
};

// Product of derivatives tracked as sign plus log magnitude so that long
// chain-rule products neither overflow nor underflow.
struct SignedLogProduct {
    double log_abs = 0.0;
    int sign = 1;
    bool zero = false;

    void multiply(double factor) {
        if (factor == 0.0) { zero = true; return; }
        if (factor < 0.0) { sign = -sign; factor = -factor; }
        log_abs += std::log(factor);
    }
    double abs_value() const { return zero ? 0.0 : std::exp(log_abs); }
    double value() const { return sign * abs_value(); }
};

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    size_t n = 0;
};

// Ordinary least squares y = intercept + slope * x.
inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    LinearFit f;
    f.n = x.size();
    if (x.size() != y.size() || x.size() < 2) return f;
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= x.size(); my /= y.size();
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx; sxy += dx * dy; syy += dy * dy;
    }
    if (sxx == 0.0) return f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (syy == 0.0) { f.r_squared = 1.0; return f; }
    double ssres = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        double r = y[i] - (f.intercept + f.slope * x[i]);
        ssres += r * r;
    }
    f.r_squared = 1.0 - ssres / syy;
    return f;
}

// Root of a monotone continuous function on [a, b] by bisection, where
// fa = fn(a) and fb = fn(b) bracket the target. Stops when either the image
// residual or the bracket width falls below the given tolerances.
inline double bisect_monotone(const std::function<double(double)>& fn,
                              double a, double b, double target,
                              double fa, double fb,
                              double image_tol = 1e-12,
                              double domain_tol = 0.0) {
    if ((fa - target) * (fb - target) > 0.0)
        throw std::invalid_argument("bisect_monotone: target not bracketed");
    bool increasing = fb > fa;
    for (int it = 0; it < 200; ++it) {
        double m = 0.5 * (a + b);
        if (m <= a || m >= b) break;  // bracket at machine resolution
        double fm = fn(m);
        if (std::abs(fm - target) <= image_tol && b - a <= 1e-9) return m;
        if ((fm < target) == increasing) a = m; else b = m;
        if (b - a <= domain_tol) break;
    }
    return 0.5 * (a + b);
}

// Result of bisecting a monotone function down to adjacent (or near-adjacent)
// doubles around the point where it crosses `target`. On return
// f_lo = fn(x_lo) and f_hi = fn(x_hi) lie on opposite sides of the target, so
// the caller can assign each side of a split without ever producing an
// interval whose image straddles the cut value.
struct BracketResult {
    double x_lo = 0.0, x_hi = 0.0;
    double f_lo = 0.0, f_hi = 0.0;
};

inline BracketResult bisect_bracket(const std::function<double(double)>& fn,
                                    double a, double b, double target,
                                    double fa, double fb) {
    if ((fa - target) * (fb - target) > 0.0)
        throw std::invalid_argument("bisect_bracket: target not bracketed");
    bool increasing = fb > fa;
    for (int it = 0; it < 128; ++it) {
        double m = 0.5 * (a + b);
        if (m <= a || m >= b) break;  // adjacent doubles
        double fm = fn(m);
        if (fm == target) {
            // Nudge deterministically so both bracket images stay strictly
            // off the target.
            double ml = std::nextafter(m, a), mh = std::nextafter(m, b);
            a = ml; fa = fn(ml);
            b = mh; fb = fn(mh);
            break;
        }
        if ((fm < target) == increasing) { a = m; fa = fm; }
        else { b = m; fb = fm; }
    }
    BracketResult r;
    r.x_lo = a; r.x_hi = b; r.f_lo = fa; r.f_hi = fb;
    return r;
}

inline double sup_norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size() && i < b.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace ergodic
