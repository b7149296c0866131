#include "ergodic/full_markov_tower.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ergodic/cycle_finder.hpp"
#include "ergodic/numeric.hpp"
#include "ergodic/rng.hpp"

namespace ergodic {

namespace {

// Exact inverse of one monotone branch at target, or NaN when target lies
// outside the closed branch range.
double branch_inverse(const Branch& br, double target) {
    double fa = br.value(br.domain.lo), fb = br.value(br.domain.hi);
    double rlo = std::min(fa, fb), rhi = std::max(fa, fb);
    if (target < rlo || target > rhi) return std::numeric_limits<double>::quiet_NaN();
    if (target == fa) return br.domain.lo;
    if (target == fb) return br.domain.hi;
    return bisect_monotone([&](double x) { return br.value(x); }, br.domain.lo,
                           br.domain.hi, target, fa, fb, 0.0, 0.0);
}

struct PullNode {
    Interval w;  // component of the t-fold preimage of Omega
    double x;    // the preimage of c it contains
};

// Full pull-back of node.w through one branch. Partial overlaps are dropped:
// a clipped component would map onto a proper subinterval of Omega and is
// useless as a capture target.
bool pull_node(const Branch& br, const PullNode& in, PullNode* out) {
    double fa = br.value(br.domain.lo), fb = br.value(br.domain.hi);
    double rlo = std::min(fa, fb), rhi = std::max(fa, fb);
    if (in.w.lo < rlo || in.w.hi > rhi) return false;
    double a = branch_inverse(br, in.w.lo);
    double b = branch_inverse(br, in.w.hi);
    double x = branch_inverse(br, in.x);
    if (!(a == a) || !(b == b) || !(x == x)) return false;
    out->w = {std::min(a, b), std::max(a, b)};
    out->x = x;
    return out->w.hi > out->w.lo;
}

} // namespace

OmegaChoice choose_omega(const PiecewiseMap& m, Interval jstar, int critical_index,
                         double delta_prime, double h_cap, int max_depth) {
    if (critical_index < 0 || critical_index >= static_cast<int>(m.critical.size()))
        throw ErgodicError("BadCriticalIndex", "critical index out of range");
    double c = m.critical[critical_index].c;

    // Density depth first: it depends on the preimage lattice only, not on h.
    PreimageDensityReport dens = preimage_density_check(m, {jstar}, c, delta_prime,
                                                        max_depth);
    if (!dens.dense)
        throw DensityFailureError(max_depth, dens.final_max_gap);

    OmegaChoice oc;
    oc.t0 = dens.t0;
    oc.max_gap = dens.final_max_gap;

    // The neighbourhood: as large as the geometry allows. Bigger Omega means
    // more witness mass per depth, which keeps return times short; short
    // return times are what keep the f^R endpoint refinement within the
    // 1e-9 certification budget in double precision.
    double h = std::min(h_cap, 0.9 * std::min(c - jstar.lo, jstar.hi - c));
    for (size_t i = 0; i < m.critical.size(); ++i) {
        if (static_cast<int>(i) == critical_index) continue;
        h = std::min(h, 0.45 * std::abs(m.critical[i].c - c));
    }
    if (!(h > 0.0))
        throw ErgodicError("BadOmega", "no room for a neighbourhood around c");
    oc.omega = {c - h, c + h};

    // Witness windows: breadth-first pull-back of Omega itself. Each level-t
    // component contains exactly one preimage of c at depth t.
    // The engine captures fragments at every scale, and the packing density
    // it sees at scale s comes from the few depths whose windows fit inside
    // s. Each depth contributes at most |Omega| of window mass across the
    // axis, so several depths must be available below every working scale.
    const int window_depth = std::min(std::max(oc.t0 + 10, 15), 18);
    const size_t per_depth_cap = 32768;
    const double width_floor = 1e-11;
    oc.window_depth = window_depth;

    std::vector<PullNode> cur = {{oc.omega, c}};
    for (int t = 1; t <= window_depth; ++t) {
        std::vector<PullNode> next;
        for (const PullNode& nd : cur) {
            for (const Branch& br : m.branches) {
                PullNode child;
                if (pull_node(br, nd, &child)) next.push_back(child);
            }
        }
        next.erase(std::remove_if(next.begin(), next.end(),
                                  [&](const PullNode& nd) {
                                      return nd.w.hi - nd.w.lo < width_floor;
                                  }),
                   next.end());
        std::sort(next.begin(), next.end(), [](const PullNode& a, const PullNode& b) {
            return a.w.lo < b.w.lo;
        });
        if (next.size() > per_depth_cap) {
            // Thin by stride, not by width: capture needs windows available
            // everywhere along the axis, and a widest-first cut concentrates
            // the survivors wherever the pull-back happens to be widest.
            std::vector<PullNode> kept;
            size_t stride = (next.size() + per_depth_cap - 1) / per_depth_cap;
            for (size_t i = 0; i < next.size(); i += stride) kept.push_back(next[i]);
            next = std::move(kept);
        }
        for (const PullNode& nd : next) {
            CaptureWindow w;
            w.u = nd.w.lo;
            w.v = nd.w.hi;
            w.t = t;
            w.x = nd.x;
            double width = w.v - w.u;
            double rel = (nd.x - w.u) / width;
            w.lemma_ok = width <= delta_prime / 10.0 && rel >= 0.2 && rel <= 0.8;
            if (w.lemma_ok) oc.lemma_windows += 1;
            oc.windows.push_back(w);
        }
        cur = std::move(next);
        if (cur.empty()) break;
    }
    return oc;
}

FullMarkovMap build_full_markov(const PiecewiseMap& m, const OmegaChoice& oc,
                                const InducerParams& params, const DiagTables& tables,
                                int threads) {
    InducerParams P = params;
    double len_omega = oc.omega.hi - oc.omega.lo;
    P.delta_dprime = std::min(P.delta_prime / 3.0, len_omega);

    CaptureSet cs;
    cs.omega = oc.omega;
    cs.windows = oc.windows;
    cs.t0 = oc.t0;

    EngineResult r = engine_run(m, oc.omega, P, tables, &cs, threads,
                                /*residual_accept=*/1e-9, /*generation_cap=*/50);

    FullMarkovMap fm;
    fm.omega = oc.omega;
    fm.t0 = oc.t0;
    fm.params = P;
    fm.unresolved_mass = r.unresolved_mass;
    fm.Q = std::move(r.captured);
    std::sort(fm.Q.begin(), fm.Q.end(), [](const CapturedElement& a, const CapturedElement& b) {
        return a.w_tilde.lo < b.w_tilde.lo;
    });

    KahanSum cover;
    double xi = std::numeric_limits<double>::infinity();
    for (const CapturedElement& q : fm.Q) {
        cover.add(q.w_tilde.hi - q.w_tilde.lo);
        xi = std::min(xi, q.capture_ratio);
        fm.max_residual = std::max(fm.max_residual, q.residual);
        fm.max_R = std::max(fm.max_R, q.R);
        fm.gcd_R = std::gcd(fm.gcd_R, static_cast<long long>(q.R));
    }
    fm.xi = fm.Q.empty() ? 0.0 : xi;
    fm.coverage = cover.value() / len_omega;
    if (fm.unresolved_mass > P.leak_budget * len_omega)
        throw ErgodicError("LeakBudgetExceeded",
                           "uncaptured mass " + std::to_string(fm.unresolved_mass) +
                               " of |Omega| = " + std::to_string(len_omega) +
                               " exceeds the leak budget (coverage " +
                               std::to_string(fm.coverage) + ", " +
                               std::to_string(fm.Q.size()) + " elements)");
    return fm;
}

std::vector<double> return_tail(const FullMarkovMap& fm) {
    double len_omega = fm.omega.hi - fm.omega.lo;
    long n_max = fm.max_R;
    std::vector<KahanSum> mass_at(static_cast<size_t>(n_max) + 1);
    for (const CapturedElement& q : fm.Q)
        mass_at[static_cast<size_t>(q.R)].add(q.w_tilde.hi - q.w_tilde.lo);

    std::vector<double> tail(static_cast<size_t>(n_max) + 1);
    KahanSum suffix;
    suffix.add(fm.unresolved_mass);
    for (long n = n_max; n >= 0; --n) {
        // mass with R > n: elements at R in (n, n_max] plus unresolved
        if (n < n_max) suffix.add(mass_at[static_cast<size_t>(n) + 1].value());
        tail[static_cast<size_t>(n)] = suffix.value() / len_omega;
    }
    return tail;
}

const char* tail_regime_name(TailRegime r) {
    switch (r) {
        case TailRegime::summable: return "summable";
        case TailRegime::polynomial: return "polynomial";
        case TailRegime::stretched: return "stretched";
        case TailRegime::exponential: return "exponential";
        default: return "unclassified";
    }
}

int tail_regime_rank(TailRegime r) {
    switch (r) {
        case TailRegime::summable: return 0;
        case TailRegime::polynomial: return 1;
        case TailRegime::stretched: return 2;
        case TailRegime::exponential: return 3;
        default: return -1;
    }
}

TailRegime classify_short_tail(const std::vector<double>& tail, double* rate) {
    if (rate) *rate = 0.0;
    if (tail.empty()) return TailRegime::unclassified;

    // Trim the unresolved floor: entries indistinguishable from the final
    // plateau carry no decay information.
    double floor_v = tail.back();
    std::vector<double> n_lin, n_log, y;
    for (size_t i = 0; i < tail.size(); ++i) {
        double v = tail[i];
        if (!(v > 0.0) || v <= 2.0 * floor_v) continue;
        n_lin.push_back(static_cast<double>(i));
        if (i >= 1) n_log.push_back(std::log(static_cast<double>(i)));
        y.push_back(std::log(v));
    }
    if (y.size() < 8) return TailRegime::unclassified;

    LinearFit ef = linear_fit(n_lin, y);
    std::vector<double> y1(y.end() - n_log.size(), y.end());
    LinearFit pf = linear_fit(n_log, y1);

    bool exp_ok = ef.slope < -1e-3 && ef.r_squared >= 0.9;
    bool poly_ok = pf.slope < 0.0 && pf.r_squared >= 0.9;
    if (exp_ok && (!poly_ok || ef.r_squared >= pf.r_squared)) {
        if (rate) *rate = -ef.slope;
        return TailRegime::exponential;
    }
    if (poly_ok) {
        if (rate) *rate = -pf.slope;
        return -pf.slope > 1.0 ? TailRegime::polynomial : TailRegime::summable;
    }
    // No clean fit: a plateauing partial sum still certifies summability.
    KahanSum ps;
    for (double v : tail) ps.add(v);
    double head = ps.value() - tail.back() * (static_cast<double>(tail.size()) / 10.0);
    if (head > 0.0 && tail.back() * (static_cast<double>(tail.size()) / 10.0) < 1e-6 * ps.value())
        return TailRegime::summable;
    return TailRegime::unclassified;
}

namespace {

// Prediction for one critical side; the weakest side governs the map.
TailRegime predict_side(const CriticalOrbitRecord& rec, double* rate) {
    *rate = 0.0;
    std::vector<double> g(rec.gamma_raw.begin() + 1, rec.gamma_raw.end());
    try {
        RegimeFit fit = classify_decay(g);
        if (fit.regime == Regime::exponential) {
            *rate = fit.beta;
            return TailRegime::exponential;
        }
        if (fit.regime == Regime::stretched) {
            *rate = fit.alpha;
            return TailRegime::stretched;
        }
    } catch (const ErgodicError&) {
    }
    // d_n ~ C n^-alpha with alpha > 1 upgrades a merely-summable tail to a
    // polynomial one; d_1 is infinite by convention and is skipped.
    std::vector<double> d;
    for (int n = 2; n <= rec.N; ++n)
        if (std::isfinite(rec.dmin[static_cast<size_t>(n)]))
            d.push_back(rec.dmin[static_cast<size_t>(n)]);
    try {
        if (d.size() >= 30) {
            RegimeFit fit = classify_decay(d);
            if (fit.regime == Regime::polynomial && fit.alpha > 1.0) {
                *rate = fit.alpha;
                return TailRegime::polynomial;
            }
        }
    } catch (const ErgodicError&) {
    }
    SummabilityVerdict sv = summability_verdict(rec);
    if (sv.S1 == SumVerdict::converging && sv.S2 == SumVerdict::converging)
        return TailRegime::summable;
    return TailRegime::unclassified;
}

} // namespace

TailVerdict compare_return_tail(const FullMarkovMap& fm, const DiagTables& tables) {
    TailVerdict v;
    int best_rank = std::numeric_limits<int>::max();
    for (const CriticalOrbitRecord& rec : tables.recs) {
        double rate = 0.0;
        TailRegime r = predict_side(rec, &rate);
        int rank = tail_regime_rank(r);
        if (rank < best_rank) {
            best_rank = rank;
            v.predicted = r;
            v.predicted_rate = rate;
        }
    }
    v.measured = classify_short_tail(return_tail(fm), &v.measured_rate);
    v.match = tail_regime_rank(v.measured) >= tail_regime_rank(v.predicted) &&
              tail_regime_rank(v.predicted) >= 0;
    return v;
}

namespace {

// Index of the element whose interval contains x, by binary search over the
// disjoint sorted partition; -1 when x falls in a gap.
int locate_element(const std::vector<CapturedElement>& q, double x) {
    size_t lo = 0, hi = q.size();
    while (lo < hi) {
        size_t mid = (lo + hi) / 2;
        if (q[mid].w_tilde.hi < x)
            lo = mid + 1;
        else
            hi = mid;
    }
    if (lo >= q.size()) return -1;
    const Interval& w = q[lo].w_tilde;
    return (x >= w.lo && x <= w.hi) ? static_cast<int>(lo) : -1;
}

bool log_deriv_at(const PiecewiseMap& m, double x, long n, double* out) {
    for (Side s : {Side::interior, Side::plus, Side::minus}) {
        try {
            DerivProduct d = map_deriv_n(m, {x, s}, static_cast<int>(n));
            if (d.zero) return false;
            *out = d.log_abs;
            return true;
        } catch (const ErgodicError&) {
        }
    }
    return false;
}

} // namespace

DistortionCheck separation_distortion_check(const FullMarkovMap& fm, const PiecewiseMap& m,
                                            int depth, int samples, std::uint64_t seed) {
    if (fm.coverage < 0.99) throw CoverageTooLowError(fm.coverage);

    DistortionCheck out;
    KahanSum total;
    for (const CapturedElement& q : fm.Q) total.add(q.w_tilde.hi - q.w_tilde.lo);
    double mass = total.value();

    for (size_t e = 0; e < fm.Q.size(); ++e) {
        const CapturedElement& q = fm.Q[e];
        double a = q.w_tilde.lo, b = q.w_tilde.hi;
        long want = std::max<long>(
            1, std::lround(static_cast<double>(samples) * (b - a) / mass));
        std::mt19937_64 gen = substream(seed, 0x5eb0 + e);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        for (long k = 0; k < want; ++k) {
            double x = a + uni(gen) * (b - a);
            double y = a + uni(gen) * (b - a);
            if (x == y) continue;
            double lx, ly;
            if (!log_deriv_at(m, x, q.R, &lx) || !log_deriv_at(m, y, q.R, &ly)) continue;
            SeparationPair pr;
            pr.ratio_minus_1 = std::abs(std::expm1(lx - ly));

            double cx = x, cy = y;
            int ex = static_cast<int>(e), ey = static_cast<int>(e);
            pr.s = depth;  // censored value when the pair never separates
            for (int step = 1; step <= depth; ++step) {
                cx = iterate_value(m, cx, fm.Q[static_cast<size_t>(ex)].R);
                cy = iterate_value(m, cy, fm.Q[static_cast<size_t>(ey)].R);
                ex = locate_element(fm.Q, cx);
                ey = locate_element(fm.Q, cy);
                // Leaving the certified partition separates the pair as well.
                if (ex != ey || ex < 0 || ey < 0) {
                    pr.s = step;
                    break;
                }
            }
            out.pairs.push_back(pr);
            if (pr.s >= 3) out.pairs_deep += 1;
        }
    }
    if (out.pairs_deep < 100) throw InsufficientPairsError(out.pairs_deep);

    // Affine return branches make every ratio vanish identically; there is
    // nothing to fit and the uniform bound holds with any contraction rate.
    size_t tiny = 0;
    for (const SeparationPair& p : out.pairs)
        if (p.ratio_minus_1 <= 1e-12) ++tiny;
    if (tiny >= static_cast<size_t>(0.99 * static_cast<double>(out.pairs.size()))) {
        out.trivial = true;
        out.pass = true;
        out.beta_hat = 0.5;
        out.C_hat = 1e-12;
        out.envelope_coverage = static_cast<double>(tiny) / static_cast<double>(out.pairs.size());
        return out;
    }

    // 99th-percentile envelope per separation time; the distortion lemma is a
    // uniform bound, so the fit follows the envelope rather than the mean.
    std::vector<std::vector<double>> by_s(static_cast<size_t>(depth) + 1);
    for (const SeparationPair& p : out.pairs)
        by_s[static_cast<size_t>(p.s)].push_back(p.ratio_minus_1);
    std::vector<double> sx, sy;
    for (size_t s = 1; s < by_s.size(); ++s) {
        std::vector<double>& v = by_s[s];
        if (v.size() < 5) continue;
        std::sort(v.begin(), v.end());
        size_t idx = static_cast<size_t>(
            std::ceil(0.99 * static_cast<double>(v.size()))) - 1;
        double env = v[std::min(idx, v.size() - 1)];
        if (!(env > 0.0)) continue;
        sx.push_back(static_cast<double>(s));
        sy.push_back(std::log(env));
    }
    if (sx.size() < 3) {
        out.pass = false;
        return out;
    }
    LinearFit fit = linear_fit(sx, sy);
    out.beta_hat = std::exp(fit.slope);
    out.C_hat = std::exp(fit.intercept);
    size_t inside = 0;
    for (const SeparationPair& p : out.pairs) {
        double bound = out.C_hat * std::pow(out.beta_hat, static_cast<double>(p.s));
        if (p.ratio_minus_1 <= bound * (1.0 + 1e-12)) ++inside;
    }
    out.envelope_coverage =
        static_cast<double>(inside) / static_cast<double>(out.pairs.size());
    out.pass = fit.slope < 0.0 && out.envelope_coverage >= 0.99;
    return out;
}

Tower build_tower(const FullMarkovMap& fm, int m, AffineConj conj) {
    if (m < 1) throw ErgodicError("TowerPeriodMismatch", "period must be >= 1");
    Tower tw;
    tw.conj = conj;
    tw.m = m;
    double blo = conj.inverse(fm.omega.lo), bhi = conj.inverse(fm.omega.hi);
    tw.base = {std::min(blo, bhi), std::max(blo, bhi)};

    int t_max = 0;
    for (const CapturedElement& q : fm.Q) {
        if (q.R % m != 0)
            throw ErgodicError("TowerPeriodMismatch",
                               "return time not divisible by the cycle period");
        TowerElement el;
        double a = conj.inverse(q.w_tilde.lo), b = conj.inverse(q.w_tilde.hi);
        el.w = {std::min(a, b), std::max(a, b)};
        el.R = q.R;
        el.T = static_cast<int>(q.R / m);
        t_max = std::max(t_max, el.T);
        tw.elements.push_back(el);
    }
    std::sort(tw.elements.begin(), tw.elements.end(),
              [](const TowerElement& a, const TowerElement& b) { return a.w.lo < b.w.lo; });

    tw.level_mass.assign(static_cast<size_t>(t_max) + 1, 0.0);
    KahanSum grand;
    for (int k = 0; k <= t_max; ++k) {
        KahanSum lvl;
        for (const TowerElement& el : tw.elements)
            if (el.T >= k) lvl.add(el.w.hi - el.w.lo);
        tw.level_mass[static_cast<size_t>(k)] = lvl.value();
        grand.add(lvl.value());
    }
    tw.total_mass = grand.value();
    return tw;
}

TowerState tower_locate(const Tower& tw, double x) {
    TowerState s;
    s.x = x;
    s.level = 0;
    size_t lo = 0, hi = tw.elements.size();
    while (lo < hi) {
        size_t mid = (lo + hi) / 2;
        if (tw.elements[mid].w.hi < x)
            lo = mid + 1;
        else
            hi = mid;
    }
    if (lo < tw.elements.size() && x >= tw.elements[lo].w.lo && x <= tw.elements[lo].w.hi)
        s.elem = static_cast<int>(lo);
    return s;
}

TowerState tower_step(const Tower& tw, const PiecewiseMap& m, const TowerState& s) {
    TowerState cur = s;
    if (cur.elem < 0) cur = tower_locate(tw, cur.x);
    if (cur.elem < 0) return cur;
    const TowerElement& el = tw.elements[static_cast<size_t>(cur.elem)];
    if (cur.level + 1 < el.T) {
        cur.level += 1;
        return cur;
    }
    // level + 1 == T: return to the base through the full return map.
    double y = tw.conj.forward(cur.x);
    y = iterate_value(m, y, el.R);
    TowerState next = tower_locate(tw, tw.conj.inverse(y));
    return next;
}

double tower_project(const Tower& tw, const PiecewiseMap& m, const TowerState& s) {
    double y = tw.conj.forward(s.x);
    y = iterate_value(m, y, static_cast<long>(s.level) * tw.m);
    return tw.conj.inverse(y);
}

long long gcd_of_returns(const std::vector<CapturedElement>& q) {
    long long g = 0;
    for (const CapturedElement& e : q) g = std::gcd(g, static_cast<long long>(e.R));
    return g;
}

} // namespace ergodic
