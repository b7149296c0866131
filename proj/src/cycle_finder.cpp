#include "ergodic/cycle_finder.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ergodic/numeric.hpp"

namespace ergodic {

namespace {

Interval hull_image(const PiecewiseMap& m, const Interval& iv) {
    IntervalSet s = interval_image(m, iv);
    Interval h = s.front();
    for (const auto& p : s) h = hull(h, p);
    return h;
}

Interval iterate_hull(const PiecewiseMap& m, Interval iv, int steps) {
    for (int k = 0; k < steps; ++k) iv = hull_image(m, iv);
    return iv;
}

bool contained(const Interval& inner, const Interval& outer, double tol) {
    return inner.lo >= outer.lo - tol && inner.hi <= outer.hi + tol;
}

bool same_interval(const Interval& a, const Interval& b, double tol) {
    return std::abs(a.lo - b.lo) <= tol && std::abs(a.hi - b.hi) <= tol;
}

// Plain forward iteration for bisection probes; boundary landings within tie
// tolerance resolve to the left branch so the predicate stays consistent.
double value_iterate(const PiecewiseMap& m, double x, int steps) {
    SidedPoint p{x, Side::interior};
    for (int k = 0; k < steps; ++k) {
        try {
            p = m.eval(p);
        } catch (const NoBranchError&) {
            p = m.eval({p.x, Side::minus});
        }
    }
    return p.x;
}

} // namespace

std::vector<IntervalCycle> find_minimal_cycles(const PiecewiseMap& m,
                                               const CycleSearchOptions& opt) {
    if (!m.continuous)
        throw InvalidMapError("cycle search requires a continuous map");
    const double tol = opt.invariance_tol;
    std::vector<IntervalCycle> found;

    auto try_candidate = [&](Interval J, int period) {
        if (!contained(iterate_hull(m, J, period), J, tol)) return;
        int least = period;
        for (int k = 1; k < period; ++k) {
            if (contained(iterate_hull(m, J, k), J, tol)) { least = k; break; }
        }
        IntervalCycle cyc;
        cyc.period = least;
        cyc.intervals.push_back(J);
        for (int k = 1; k < least; ++k)
            cyc.intervals.push_back(iterate_hull(m, J, k));
        for (size_t i = 0; i < cyc.intervals.size(); ++i)
            for (size_t j = i + 1; j < cyc.intervals.size(); ++j) {
                Interval ov = intersect(cyc.intervals[i], cyc.intervals[j]);
                if (ov.length() > tol) return;  // interiors overlap: not a proper cycle
            }
        for (const auto& prev : found) {
            if (prev.period != cyc.period) continue;
            bool same = prev.intervals.size() == cyc.intervals.size();
            for (size_t i = 0; same && i < prev.intervals.size(); ++i)
                same = same_interval(prev.intervals[i], cyc.intervals[i], 1e-7);
            if (same) return;
        }
        found.push_back(std::move(cyc));
    };

    for (const auto& cp : m.critical) {
        for (int period = 1; period <= opt.max_period; ++period) {
            Interval J{std::max(0.0, cp.c - 0.5 * opt.seed_width),
                       std::min(1.0, cp.c + 0.5 * opt.seed_width)};
            bool converged = false;
            for (int it = 0; it < opt.max_expansions; ++it) {
                Interval grown = hull(J, iterate_hull(m, J, period));
                if (grown.lo < -1e-9 || grown.hi > 1.0 + 1e-9) break;  // escape
                if (grown.lo >= J.lo - opt.converge_tol &&
                    grown.hi <= J.hi + opt.converge_tol) {
                    converged = true;
                    break;
                }
                J = grown;
            }
            if (converged) try_candidate(J, period);
        }
    }

    Interval whole{0.0, 1.0};
    if (found.empty() && same_interval(hull_image(m, whole), whole, tol))
        found.push_back({{whole}, 1, false});

    // Minimal cycles contain no other returned cycle.
    auto union_of = [](const IntervalCycle& c) {
        IntervalSet s(c.intervals.begin(), c.intervals.end());
        return normalize(s, 1e-12);
    };
    for (auto& a : found) {
        bool minimal = true;
        IntervalSet ua = union_of(a);
        for (const auto& b : found) {
            if (&a == &b) continue;
            IntervalSet ub = union_of(b);
            if (total_length(ub) >= total_length(ua) - tol) continue;
            bool inside = true;
            for (const auto& ivb : ub) {
                bool cov = false;
                for (const auto& iva : ua)
                    if (ivb.lo >= iva.lo - tol && ivb.hi <= iva.hi + tol) cov = true;
                if (!cov) { inside = false; break; }
            }
            if (inside) { minimal = false; break; }
        }
        a.minimal = minimal;
    }

    size_t nmin = 0;
    for (const auto& c : found) nmin += c.minimal ? 1 : 0;
    if (nmin > m.critical.size())
        throw ErgodicError("CycleCountExceeded",
                           "more minimal cycles than critical points");
    return found;
}

namespace {

struct ChainPiece {
    double a, b;    // subinterval of J
    double fa, fb;  // image endpoints under f^k, in orbit order (fa = image of a)
    int sign;       // orientation of f^k on [a,b]
};

} // namespace

Renormalization renormalize_interval(const PiecewiseMap& m, Interval J, int period) {
    const double tol = 1e-9;
    if (!contained(iterate_hull(m, J, period), J, tol))
        throw NotInvariantError("interval is not invariant under the given period");

    const double L = J.length();
    auto base = std::make_shared<const PiecewiseMap>(m);

    // Split J into maximal pieces on which f^period is a diffeomorphism.
    std::vector<ChainPiece> pieces{{J.lo, J.hi, J.lo, J.hi, 1}};
    std::vector<double> cuts;
    for (int k = 0; k < period; ++k) {
        std::vector<ChainPiece> next;
        for (const auto& pc : pieces) {
            double ilo = std::min(pc.fa, pc.fb), ihi = std::max(pc.fa, pc.fb);
            std::vector<double> ys;
            for (size_t bi = 0; bi + 1 < m.branches.size(); ++bi) {
                double y = m.branches[bi].domain.hi;
                if (y > ilo + PiecewiseMap::tie_tol && y < ihi - PiecewiseMap::tie_tol)
                    ys.push_back(y);
            }
            std::vector<double> xs{pc.a};
            if (!ys.empty()) {
                std::sort(ys.begin(), ys.end());
                if (pc.sign < 0) std::reverse(ys.begin(), ys.end());
                for (double y : ys) {
                    double x = bisect_monotone(
                        [&](double t) { return value_iterate(m, t, k); },
                        pc.a, pc.b, y, pc.fa, pc.fb, 1e-13);
                    xs.push_back(x);
                    cuts.push_back(x);
                }
            }
            xs.push_back(pc.b);
            for (size_t i = 0; i + 1 < xs.size(); ++i) {
                ChainPiece np;
                np.a = xs[i];
                np.b = xs[i + 1];
                if (np.b <= np.a) continue;
                double mid = 0.5 * (np.a + np.b);
                double ymid = value_iterate(m, mid, k);
                const Branch& br = m.branches[m.branch_index_at({ymid, Side::interior})];
                // ys is already in preimage order, so cut xs[j] has image ys[j-1].
                double ya = (i == 0) ? pc.fa : ys[i - 1];
                double yb = (i + 1 == xs.size() - 1) ? pc.fb : ys[i];
                np.fa = br.value(std::min(std::max(ya, br.domain.lo), br.domain.hi));
                np.fb = br.value(std::min(std::max(yb, br.domain.lo), br.domain.hi));
                np.sign = pc.sign * br.monotone_sign;
                next.push_back(np);
            }
        }
        pieces = std::move(next);
    }
    std::sort(pieces.begin(), pieces.end(),
              [](const ChainPiece& x, const ChainPiece& y) { return x.a < y.a; });
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(),
                           [](double a, double b) { return std::abs(a - b) <= 1e-12; }),
               cuts.end());

    Renormalization out;
    out.interval = J;
    out.period = period;
    PiecewiseMap& g = out.map;

    auto sided_chart_eval = [base, J, L, period](double y, Side hint) {
        SidedPoint p{J.lo + L * y, hint};
        for (int k = 0; k < period; ++k) p = base->eval(p);
        return (p.x - J.lo) / L;
    };

    for (const auto& pc : pieces) {
        Branch br;
        double na = (pc.a - J.lo) / L, nb = (pc.b - J.lo) / L;
        br.domain = {na, nb};
        br.monotone_sign = pc.sign;
        br.value = [base, J, L, period, na, nb](double y) {
            Side hint = Side::interior;
            if (std::abs(y - na) <= PiecewiseMap::tie_tol) hint = Side::plus;
            else if (std::abs(y - nb) <= PiecewiseMap::tie_tol) hint = Side::minus;
            SidedPoint p{J.lo + L * y, hint};
            for (int k = 0; k < period; ++k) p = base->eval(p);
            return (p.x - J.lo) / L;
        };
        br.deriv = [base, J, L, period, na, nb](double y) {
            Side hint = Side::interior;
            if (std::abs(y - na) <= PiecewiseMap::tie_tol) hint = Side::plus;
            else if (std::abs(y - nb) <= PiecewiseMap::tie_tol) hint = Side::minus;
            SidedPoint p{J.lo + L * y, hint};
            double d1 = 1.0;
            for (int k = 0; k < period; ++k) {
                const Branch& bb = base->branch_at(p);
                d1 *= bb.deriv(p.x);
                p = base->eval(p);
            }
            return d1;  // the chart scale cancels in the first derivative
        };
        br.second_deriv = [base, J, L, period, na, nb](double y) {
            Side hint = Side::interior;
            if (std::abs(y - na) <= PiecewiseMap::tie_tol) hint = Side::plus;
            else if (std::abs(y - nb) <= PiecewiseMap::tie_tol) hint = Side::minus;
            SidedPoint p{J.lo + L * y, hint};
            double d1 = 1.0, d2 = 0.0;
            for (int k = 0; k < period; ++k) {
                const Branch& bb = base->branch_at(p);
                double f1 = bb.deriv(p.x), f2 = bb.second_deriv(p.x);
                d2 = f2 * d1 * d1 + f1 * d2;
                d1 *= f1;
                p = base->eval(p);
            }
            return L * d2;
        };
        g.branches.push_back(std::move(br));
    }

    // Induced critical set with composed one-sided orders.
    bool jumps = false;
    for (double x : cuts) {
        if (x <= J.lo + 1e-12 || x >= J.hi - 1e-12) continue;
        double l_minus = 1.0, l_plus = 1.0;
        for (Side start : {Side::minus, Side::plus}) {
            double& acc = (start == Side::minus) ? l_minus : l_plus;
            SidedPoint p{x, start};
            for (int k = 0; k < period; ++k) {
                int ci = m.critical_index(p.x);
                if (ci >= 0 && p.side != Side::interior)
                    acc *= m.critical[ci].order(p.side);
                p = m.eval(p);
            }
        }
        double yc = (x - J.lo) / L;
        g.critical.push_back({yc, l_minus, l_plus});
        double gl = sided_chart_eval(yc, Side::minus);
        double gr = sided_chart_eval(yc, Side::plus);
        if (std::abs(gl - gr) > 1e-9) jumps = true;
    }
    g.continuous = !jumps;

    if (!m.config.is_null()) {
        nlohmann::json jc;
        jc["family"] = "renorm";
        jc["params"] = {{"base", m.config}, {"period", period},
                        {"interval", {J.lo, J.hi}}};
        nlohmann::json jcps = nlohmann::json::array();
        for (const auto& cp : g.critical)
            jcps.push_back({{"c", cp.c}, {"l_minus", cp.l_minus}, {"l_plus", cp.l_plus}});
        jc["critical_points"] = jcps;
        jc["continuous"] = g.continuous;
        g.config = jc;
    }
    return out;
}

Renormalization renormalize(const PiecewiseMap& m, const IntervalCycle& cycle) {
    return renormalize_interval(m, cycle.intervals.front(), cycle.period);
}

PreimageDensityReport preimage_density_check(const PiecewiseMap& m,
                                             const IntervalSet& invariant_set,
                                             double c, double gap_tolerance,
                                             int max_depth, size_t max_points) {
    IntervalSet inv = normalize(invariant_set, 1e-12);
    IntervalSet image;
    for (const auto& iv : inv)
        for (const auto& im : interval_image(m, iv)) image.push_back(im);
    image = normalize(image, 1e-9);
    if (symmetric_difference(image, inv) > 1e-6)
        throw NotInvariantError("set is not invariant under the map");

    auto inside = [&](double x) {
        for (const auto& iv : inv)
            if (x >= iv.lo - 1e-12 && x <= iv.hi + 1e-12) return true;
        return false;
    };

    PreimageDensityReport rep;
    std::vector<double> points{c};
    std::vector<double> frontier{c};

    auto max_gap = [&]() {
        double worst = 0.0;
        for (const auto& iv : inv) {
            double prev = iv.lo;
            bool any = false;
            for (double x : points) {
                if (x < iv.lo - 1e-12 || x > iv.hi + 1e-12) continue;
                double gap = x - prev;
                if (!any) gap *= 2.0;  // end segment counts double
                worst = std::max(worst, gap);
                prev = x;
                any = true;
            }
            double tail = iv.hi - prev;
            worst = std::max(worst, any ? 2.0 * tail : 2.0 * iv.length());
        }
        return worst;
    };

    for (int depth = 0; depth <= max_depth; ++depth) {
        if (depth > 0) {
            std::vector<double> next;
            for (double y : frontier)
                for (double x : branch_preimages(m, y))
                    if (inside(x)) next.push_back(x);
            std::sort(next.begin(), next.end());
            next.erase(std::unique(next.begin(), next.end(),
                                   [](double a, double b) {
                                       return std::abs(a - b) <= 1e-12;
                                   }),
                       next.end());
            frontier = std::move(next);
            points.insert(points.end(), frontier.begin(), frontier.end());
            std::sort(points.begin(), points.end());
            points.erase(std::unique(points.begin(), points.end(),
                                     [](double a, double b) {
                                         return std::abs(a - b) <= 1e-12;
                                     }),
                         points.end());
        }
        double g = max_gap();
        rep.gap_by_depth.push_back(g);
        rep.final_max_gap = g;
        rep.points = points.size();
        if (g <= gap_tolerance) {
            rep.dense = true;
            rep.t0 = depth;
            return rep;
        }
        if (points.size() > max_points || frontier.empty()) break;
    }
    return rep;
}

} // namespace ergodic
