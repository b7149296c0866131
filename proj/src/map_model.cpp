#include "ergodic/map_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ergodic/numeric.hpp"

namespace ergodic {

double PiecewiseMap::nearest_critical_distance(double x, int* index) const {
    double best = std::numeric_limits<double>::infinity();
    int best_i = -1;
    for (size_t i = 0; i < critical.size(); ++i) {
        double d = std::abs(x - critical[i].c);
        if (d < best) { best = d; best_i = static_cast<int>(i); }
    }
    if (index) *index = best_i;
    return best;
}

int PiecewiseMap::branch_index_at(const SidedPoint& p) const {
    if (branches.empty()) throw NoBranchError("map has no branches");
    const double x = p.x;
    const double lo = branches.front().domain.lo;
    const double hi = branches.back().domain.hi;

    if (x < lo - tie_tol || x > hi + tie_tol) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "point outside the map domain: x=%.17g", x);
        throw NoBranchError(buf);
    }

    // Domain endpoints have a single available branch.
    if (std::abs(x - lo) <= tie_tol) {
        if (p.side == Side::minus) throw NoBranchError("no branch left of the domain");
        return 0;
    }
    if (std::abs(x - hi) <= tie_tol) {
        if (p.side == Side::plus) throw NoBranchError("no branch right of the domain");
        return static_cast<int>(branches.size()) - 1;
    }

    // Interior branch boundary within tie tolerance requires a side.
    for (size_t i = 0; i + 1 < branches.size(); ++i) {
        double b = branches[i].domain.hi;
        if (std::abs(x - b) <= tie_tol) {
            if (p.side == Side::minus) return static_cast<int>(i);
            if (p.side == Side::plus) return static_cast<int>(i + 1);
            throw NoBranchError("boundary point evaluated without a side");
        }
    }

    // Interior of exactly one branch.
    for (size_t i = 0; i < branches.size(); ++i)
        if (x > branches[i].domain.lo && x < branches[i].domain.hi)
            return static_cast<int>(i);
    throw NoBranchError("no branch covers the point");
}

const Branch& PiecewiseMap::branch_at(const SidedPoint& p) const {
    return branches[branch_index_at(p)];
}

SidedPoint PiecewiseMap::eval(const SidedPoint& p) const {
    const Branch& br = branches[branch_index_at(p)];
    // A sided point within tie_tol of a branch boundary stands for the
    // boundary itself; evaluate the formula inside the branch domain rather
    // than extrapolating past it.
    double xq = std::min(std::max(p.x, br.domain.lo), br.domain.hi);
    double y = br.value(xq);
    // Branch formulas may overshoot the invariant interval by a few ulp;
    // under an expanding map that error compounds geometrically, so snap it
    // here. Genuine range violations (beyond tie_tol) still surface on the
    // next branch lookup.
    const double dom_lo = branches.front().domain.lo;
    const double dom_hi = branches.back().domain.hi;
    if (y < dom_lo && y >= dom_lo - tie_tol) y = dom_lo;
    if (y > dom_hi && y <= dom_hi + tie_tol) y = dom_hi;
    SidedPoint out{y, Side::interior};
    if (critical_index(y) >= 0) {
        // Approach direction of the image: a minus-side (or interior) input
        // neighborhood maps onto the minus side iff the branch is increasing.
        bool from_minus = (p.side != Side::plus);
        bool image_minus = (from_minus == (br.monotone_sign > 0));
        out.side = image_minus ? Side::minus : Side::plus;
    }
    return out;
}

DerivProduct map_deriv_n(const PiecewiseMap& m, const SidedPoint& p, int n) {
    DerivProduct d;
    SidedPoint cur = p;
    for (int k = 0; k < n; ++k) {
        const Branch* br;
        try {
            br = &m.branch_at(cur);
        } catch (const NoBranchError&) {
            throw OrbitHitsCriticalError(k);
        }
        double df = br->deriv(std::min(std::max(cur.x, br->domain.lo), br->domain.hi));
        if (df == 0.0) { d.zero = true; return d; }
        if (df < 0.0) { d.sign = -d.sign; df = -df; }
        d.log_abs += std::log(df);
        cur = m.eval(cur);
    }
    return d;
}

namespace {

// Log-log slope of q against |x-c| over a dyadic grid approaching c from one
// side. Samples where the difference has lost all precision are dropped.
struct SideSamples {
    std::vector<double> log_r, log_fdiff, log_df;
    double ratio_lo = std::numeric_limits<double>::infinity();
    double ratio_hi = 0.0;
    double dratio_lo = std::numeric_limits<double>::infinity();
    double dratio_hi = 0.0;
};

SideSamples collect_side(const PiecewiseMap& m, const CriticalPoint& cp, Side side,
                         double declared_l) {
    SideSamples out;
    SidedPoint at_c{cp.c, side};
    int bi;
    try {
        bi = m.branch_index_at(at_c);
    } catch (const NoBranchError&) {
        return out;  // critical point on the domain boundary: that side is void
    }
    const Branch& br = m.branches[bi];
    double fc = br.value(cp.c);
    double room = (side == Side::plus) ? br.domain.hi - cp.c : cp.c - br.domain.lo;
    if (room <= 0.0) return out;
    double r0 = std::min(0.45 * room, 0.1);
    double scale = std::max(1.0, std::abs(fc));
    const double eps = std::numeric_limits<double>::epsilon();
    for (int k = 4; k <= 40; ++k) {
        double r = r0 * std::ldexp(1.0, -k + 4);  // r0 * 2^{-(k-4)}
        double x = (side == Side::plus) ? cp.c + r : cp.c - r;
        if (x <= br.domain.lo || x >= br.domain.hi) continue;
        double fdiff = std::abs(br.value(x) - fc);
        double df = std::abs(br.deriv(x));
        if (fdiff > 64.0 * eps * scale && std::isfinite(fdiff)) {
            out.log_r.push_back(std::log(r));
            out.log_fdiff.push_back(std::log(fdiff));
            double ratio = fdiff / std::pow(r, declared_l);
            out.ratio_lo = std::min(out.ratio_lo, ratio);
            out.ratio_hi = std::max(out.ratio_hi, ratio);
        }
        if (df > 64.0 * eps && std::isfinite(df)) {
            double dratio = df / std::pow(r, declared_l - 1.0);
            out.dratio_lo = std::min(out.dratio_lo, dratio);
            out.dratio_hi = std::max(out.dratio_hi, dratio);
        }
    }
    return out;
}

} // namespace

std::vector<OrderCheck> verify_orders(const PiecewiseMap& m, double mismatch_tol) {
    std::vector<OrderCheck> out;
    for (size_t i = 0; i < m.critical.size(); ++i) {
        for (Side side : {Side::minus, Side::plus}) {
            OrderCheck chk;
            chk.cp_index = static_cast<int>(i);
            chk.side = side;
            chk.declared = m.critical[i].order(side);
            SideSamples s = collect_side(m, m.critical[i], side, chk.declared);
            chk.samples = s.log_r.size();
            if (chk.samples >= 4) {
                LinearFit f = linear_fit(s.log_r, s.log_fdiff);
                chk.fitted = f.slope;
                chk.ratio_lo = s.ratio_lo;
                chk.ratio_hi = s.ratio_hi;
                chk.deriv_ratio_lo = s.dratio_lo;
                chk.deriv_ratio_hi = s.dratio_hi;
                chk.pass = std::abs(chk.fitted - chk.declared) <= mismatch_tol;
            } else if (chk.samples == 0 && s.ratio_hi == 0.0) {
                // void side (domain boundary); nothing to check
                chk.fitted = chk.declared;
                chk.pass = true;
            }
            out.push_back(chk);
        }
    }
    return out;
}

SchwarzianReport schwarzian_check(const PiecewiseMap& m, int samples_per_branch) {
    SchwarzianReport rep;
    rep.pass = true;
    const double guard = 1e-6;
    const double h = 1e-5;
    const double pos_tol = 1e-8;
    rep.max_sample = -std::numeric_limits<double>::infinity();
    for (size_t b = 0; b < m.branches.size(); ++b) {
        const Branch& br = m.branches[b];
        double lo = br.domain.lo + guard, hi = br.domain.hi - guard;
        if (hi <= lo) continue;
        double max_d2 = 0.0;
        for (int s = 0; s < samples_per_branch; ++s) {
            double x = lo + (hi - lo) * (s + 0.5) / samples_per_branch;
            double d1 = br.deriv(x);
            if (d1 == 0.0) continue;
            double xm = std::max(br.domain.lo, x - h);
            double xp = std::min(br.domain.hi, x + h);
            double d3 = (br.second_deriv(xp) - br.second_deriv(xm)) / (xp - xm);
            double d2 = br.second_deriv(x);
            max_d2 = std::max(max_d2, std::abs(d2));
            double q = d2 / d1;
            double sf = d3 / d1 - 1.5 * q * q;
            if (sf > rep.max_sample) {
                rep.max_sample = sf;
                rep.worst_x = x;
                rep.worst_branch = static_cast<int>(b);
            }
            if (sf > pos_tol) rep.pass = false;
        }
        if (max_d2 <= 1e-12) rep.weak = true;  // affine branch: Sf vanishes identically
    }
    if (!std::isfinite(rep.max_sample)) rep.max_sample = 0.0;
    return rep;
}

IntervalSet interval_image(const PiecewiseMap& m, const Interval& iv) {
    IntervalSet out;
    std::vector<double> cuts{iv.lo};
    for (size_t i = 0; i + 1 < m.branches.size(); ++i) {
        double b = m.branches[i].domain.hi;
        if (b > iv.lo + PiecewiseMap::tie_tol && b < iv.hi - PiecewiseMap::tie_tol)
            cuts.push_back(b);
    }
    cuts.push_back(iv.hi);
    std::sort(cuts.begin(), cuts.end());
    for (size_t i = 0; i + 1 < cuts.size(); ++i) {
        double a = cuts[i], b = cuts[i + 1];
        if (b <= a) continue;
        SidedPoint mid{0.5 * (a + b), Side::interior};
        const Branch& br = m.branches[m.branch_index_at(mid)];
        double fa = br.value(a), fb = br.value(b);
        out.push_back({std::min(fa, fb), std::max(fa, fb)});
    }
    return normalize(out, 1e-12);
}

std::vector<double> branch_preimages(const PiecewiseMap& m, double y) {
    std::vector<double> out;
    for (const auto& br : m.branches) {
        double fa = br.value(br.domain.lo), fb = br.value(br.domain.hi);
        double lo = std::min(fa, fb), hi = std::max(fa, fb);
        if (y < lo - 1e-15 || y > hi + 1e-15) continue;
        if (hi == lo) continue;
        double yc = std::min(std::max(y, lo), hi);
        double x = bisect_monotone([&](double t) { return br.value(t); },
                                   br.domain.lo, br.domain.hi, yc, fa, fb, 1e-13);
        out.push_back(x);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end(),
                          [](double a, double b) { return std::abs(a - b) <= 1e-12; }),
              out.end());
    return out;
}

MapValidation validate_map(const PiecewiseMap& m) {
    MapValidation v;
    auto fail = [&](const std::string& s) { v.ok = false; v.violations.push_back(s); };

    if (m.branches.empty()) { fail("map has no branches"); return v; }

    for (size_t i = 0; i + 1 < m.branches.size(); ++i) {
        double gap = m.branches[i + 1].domain.lo - m.branches[i].domain.hi;
        if (std::abs(gap) > PiecewiseMap::tie_tol)
            fail("branch domains do not partition the interval at index " + std::to_string(i));
    }
    for (const auto& br : m.branches)
        if (br.domain.length() <= 0.0) fail("branch with empty domain");

    for (const auto& cp : m.critical) {
        if (!(cp.l_minus >= 1.0) || !(cp.l_plus >= 1.0))
            fail("critical order below 1 (orders must satisfy l >= 1)");
        bool on_boundary = false;
        double lo = m.branches.front().domain.lo, hi = m.branches.back().domain.hi;
        if (std::abs(cp.c - lo) <= PiecewiseMap::tie_tol ||
            std::abs(cp.c - hi) <= PiecewiseMap::tie_tol)
            on_boundary = true;
        for (size_t i = 0; i + 1 < m.branches.size(); ++i)
            if (std::abs(cp.c - m.branches[i].domain.hi) <= PiecewiseMap::tie_tol)
                on_boundary = true;
        if (!on_boundary) fail("critical point is not a branch boundary");
    }

    // Sampled monotonicity against the declared sign.
    for (size_t b = 0; b < m.branches.size(); ++b) {
        const Branch& br = m.branches[b];
        const int n = 64;
        for (int s = 0; s + 1 < n; ++s) {
            double x0 = br.domain.lo + br.domain.length() * (s + 0.5) / n;
            double x1 = br.domain.lo + br.domain.length() * (s + 1.5) / n;
            double d = (br.value(x1) - br.value(x0)) * br.monotone_sign;
            if (d < 0.0) {
                fail("branch " + std::to_string(b) + " not monotone with declared sign");
                break;
            }
        }
        double flo = br.value(br.domain.lo), fhi = br.value(br.domain.hi);
        for (double y : {flo, fhi})
            if (y < -1e-9 || y > 1.0 + 1e-9)
                fail("branch " + std::to_string(b) + " maps outside [0,1]");
    }

    // Continuity flag against one-sided limits at interior boundaries.
    bool measured_continuous = true;
    for (size_t i = 0; i + 1 < m.branches.size(); ++i) {
        double b = m.branches[i].domain.hi;
        double left = m.branches[i].value(b);
        double right = m.branches[i + 1].value(m.branches[i + 1].domain.lo);
        if (std::abs(left - right) > 1e-9) measured_continuous = false;
    }
    if (m.continuous && !measured_continuous)
        fail("map declared continuous but one-sided limits disagree at a boundary");

    return v;
}

} // namespace ergodic
