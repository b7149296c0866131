#include "ergodic/inducer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <mutex>
#include <tuple>

#include "ergodic/numeric.hpp"
#include "ergodic/parallel.hpp"

namespace ergodic {

namespace {

constexpr double kImageMargin = 1e-9;  // window containment margin at capture

// One application of the map to a carried endpoint value. The side hint
// points toward the interval interior and resolves branch choice when the
// value sits on a branch boundary; interior values ignore it.
double step_value(const PiecewiseMap& m, double v, Side hint) {
    SidedPoint p{v, hint};
    try {
        return m.eval(p).x;
    } catch (const NoBranchError&) {
        p.side = (hint == Side::plus) ? Side::minus : Side::plus;
        return m.eval(p).x;
    }
}

// One deterministic step with side fallback (minus first) for points that
// land exactly on a boundary without a usable side.
SidedPoint step_sided(const PiecewiseMap& m, SidedPoint p) {
    try {
        return m.eval(p);
    } catch (const NoBranchError&) {
        p.side = Side::minus;
        try {
            return m.eval(p);
        } catch (const NoBranchError&) {
            p.side = Side::plus;
            return m.eval(p);
        }
    }
}

// Canonical n-fold iterate used by every pull-back bisection. Boundary
// landings resolve deterministically, so repeated evaluation of the same
// point is bytewise stable.
double iterate_n(const PiecewiseMap& m, double x, long n) {
    SidedPoint p{x, Side::interior};
    for (long k = 0; k < n; ++k) p = step_sided(m, p);
    return p.x;
}

struct EItem {
    double a = 0.0, b = 0.0;    // domain piece
    double fa = 0.0, fb = 0.0;  // f^n(a), f^n(b)
    long n = 0;
    long bind_until = 0;
    int gen = 0;
    std::vector<ReturnEvent> hist;
};

struct EngineCtx {
    const PiecewiseMap& m;
    const InducerParams& P;
    const DiagTables& T;
    const CaptureSet* cap;
    double residual_accept;
    int gen_cap;
    std::vector<double> breakpoints;              // interior branch boundaries
    std::vector<const CaptureWindow*> by_depth;   // capture windows by (t, u)

    std::mutex cache_mu;
    std::map<std::tuple<int, int, int>, double> radius_cache;

    std::mutex out_mu;
    std::vector<InducedElement> elements;
    std::vector<CapturedElement> captured;
    std::vector<std::pair<double, double>> unresolved;  // (left endpoint, width)

};

void drop_unresolved(EngineCtx& C, double lo, double width) {
    if (width <= 0.0) return;
    std::lock_guard<std::mutex> lk(C.out_mu);
    C.unresolved.emplace_back(lo, width);
}

int binding_p_at(EngineCtx& C, int ci, Side s, double d) {
    double x = C.m.critical[ci].c + (s == Side::plus ? d : -d);
    return binding_period(C.m, x, C.T, C.P.delta, nullptr);
}

// sup{ d : binding period at distance d >= p }, cached. Monotone bisection
// over the distance axis; the cache is value-deterministic so lookup order
// (and hence thread schedule) cannot change results.
double radius_of_p(EngineCtx& C, int ci, Side s, int p) {
    auto key = std::make_tuple(ci, s == Side::plus ? 1 : 0, p);
    {
        std::lock_guard<std::mutex> lk(C.cache_mu);
        auto it = C.radius_cache.find(key);
        if (it != C.radius_cache.end()) return it->second;
    }
    double lo = 1e-300, hi = C.P.delta;
    double r;
    if (binding_p_at(C, ci, s, hi) >= p) {
        r = hi;
    } else {
        for (int it = 0; it < 200 && hi - lo > 1e-17 * (1.0 + hi); ++it) {
            double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            if (binding_p_at(C, ci, s, mid) >= p) lo = mid; else hi = mid;
        }
        r = lo;
    }
    std::lock_guard<std::mutex> lk(C.cache_mu);
    C.radius_cache.emplace(key, r);
    return r;
}

// Distortion of f^n over [a, b]: sup/inf of |Df^n| over 17 interior samples.
// Samples whose orbit lands on the critical set carry no derivative
// information and are skipped; side hints rescue samples that merely start
// within the tie tolerance of a branch boundary.
double sample_distortion(const PiecewiseMap& m, double a, double b, long n) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (int k = 1; k <= 17; ++k) {
        double x = a + (b - a) * k / 18.0;
        DerivProduct d;
        bool ok = false;
        for (Side s : {Side::interior, Side::plus, Side::minus}) {
            try {
                d = map_deriv_n(m, {x, s}, static_cast<int>(n));
                ok = true;
                break;
            } catch (const OrbitHitsCriticalError&) {
            }
        }
        if (!ok || d.zero) continue;
        lo = std::min(lo, d.log_abs);
        hi = std::max(hi, d.log_abs);
    }
    if (!std::isfinite(lo)) return 1.0;  // hairline element, below derivative resolution
    return std::exp(hi - lo);
}

template <typename Sink>
void split_at_image_value(EngineCtx& C, EItem it, double target, Sink&& sink) {
    // Bracket split leaving a one-ulp sliver to unresolved so neither child
    // image straddles the target; prevents re-splitting forever.
    BracketResult br;
    try {
        br = bisect_bracket([&](double x) { return iterate_n(C.m, x, it.n); },
                            it.a, it.b, target, it.fa, it.fb);
    } catch (const std::invalid_argument&) {
        drop_unresolved(C, it.a, it.b - it.a);
        return;
    }
    if ((br.f_lo - target) * (br.f_hi - target) > 0.0) {
        // Probe lost monotonicity at machine scale; retire the piece honestly.
        drop_unresolved(C, it.a, it.b - it.a);
        return;
    }
    drop_unresolved(C, br.x_lo, br.x_hi - br.x_lo);
    EItem c1 = it, c2 = it;
    c1.b = br.x_lo; c1.fb = br.f_lo;
    c2.a = br.x_hi; c2.fa = br.f_hi;
    if (c1.b > c1.a) sink(std::move(c1));
    if (c2.b > c2.a) sink(std::move(c2));
}

// Shared-endpoint pull-back of an image value; mass-exact cuts for I_p
// shells, side margins and capture windows. Bisected to one ulp: capture
// endpoint placement pays |Df^R| times any slack here, so a loose tolerance
// would blow the certification budget on deep windows even when the later
// refinement step fails to bracket and keeps this value.
double pull_back(EngineCtx& C, const EItem& it, double target) {
    return bisect_monotone([&](double x) { return iterate_n(C.m, x, it.n); },
                           it.a, it.b, target, it.fa, it.fb, 0.0, 0.0);
}

// Subdivide a piece into constant-binding-period shells and requeue every
// shell bound for its own period. Portions outside every critical
// neighbourhood run free again after one step. Criticals are selected per
// piece, so callers never have to know which neighbourhood was entered.
template <typename Sink>
void subdivide_levels(EngineCtx& C, EItem it, Sink&& sink) {
    double ilo = std::min(it.fa, it.fb), ihi = std::max(it.fa, it.fb);
    for (size_t ci = 0; ci < C.m.critical.size(); ++ci) {
        double c = C.m.critical[ci].c;
        if (ilo < c - PiecewiseMap::tie_tol && ihi > c + PiecewiseMap::tie_tol) {
            split_at_image_value(C, std::move(it), c, sink);
            return;  // children requeue and come back one-sided
        }
    }

    // One-sided with respect to every critical point. Collect shell cut
    // values in image space from each neighbourhood the image overlaps.
    std::vector<double> cuts;
    for (size_t ci = 0; ci < C.m.critical.size(); ++ci) {
        double c = C.m.critical[ci].c;
        Side s = (0.5 * (ilo + ihi) >= c) ? Side::plus : Side::minus;
        double d_near = std::max(0.0, s == Side::plus ? ilo - c : c - ihi);
        double d_far = std::max(0.0, s == Side::plus ? ihi - c : c - ilo);
        if (d_near >= C.P.delta || d_far <= 0.0) continue;
        int horizon = static_cast<int>(C.T.at(static_cast<int>(ci), s).N);
        int p_near = std::min(binding_p_at(C, static_cast<int>(ci), s,
                                           std::max(d_near, 1e-300)), horizon);
        int p_far = binding_p_at(C, static_cast<int>(ci), s, d_far);
        for (int q = p_far + 1; q <= p_near; ++q) {
            double r = radius_of_p(C, static_cast<int>(ci), s, q);
            if (r < 0.25 * C.P.w_min) break;  // no surviving piece below the floor
            if (r <= d_near || r >= d_far) continue;
            cuts.push_back(s == Side::plus ? c + r : c - r);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    bool increasing = it.fb > it.fa;
    std::vector<double> dom{it.a};
    if (increasing) {
        for (double v : cuts)
            if (v > ilo && v < ihi) dom.push_back(pull_back(C, it, v));
    } else {
        for (auto v = cuts.rbegin(); v != cuts.rend(); ++v)
            if (*v > ilo && *v < ihi) dom.push_back(pull_back(C, it, *v));
    }
    dom.push_back(it.b);
    std::sort(dom.begin(), dom.end());

    for (size_t k = 0; k + 1 < dom.size(); ++k) {
        EItem sh = it;
        sh.a = dom[k]; sh.b = dom[k + 1];
        if (sh.b <= sh.a) continue;
        if (k > 0) sh.fa = iterate_n(C.m, sh.a, it.n);
        if (k + 2 < dom.size()) sh.fb = iterate_n(C.m, sh.b, it.n);
        double mid_img = iterate_n(C.m, 0.5 * (sh.a + sh.b), it.n);
        int ci = -1;
        C.m.nearest_critical_distance(mid_img, &ci);
        int p = binding_period(C.m, mid_img, C.T, C.P.delta, nullptr);
        ReturnEvent ev;
        ev.nu = it.n; ev.p = p; ev.critical = ci; ev.deep = p >= 1;
        sh.hist.push_back(ev);
        sh.bind_until = it.n + std::max(p, 1);
        sink(std::move(sh));
    }
}

// Induced-mode emission at a large-scale visit: trim eps margins, record the
// middle as a finished element, requeue the margins as bound shells.
template <typename Sink>
void emit_with_margins(EngineCtx& C, EItem it, Sink&& sink) {
    double ilo = std::min(it.fa, it.fb), ihi = std::max(it.fa, it.fb);
    bool increasing = it.fb > it.fa;
    double vl = ilo + C.P.eps, vr = ihi - C.P.eps;
    double xl_img_lo = increasing ? pull_back(C, it, vl) : pull_back(C, it, vr);
    double xr_img_lo = increasing ? pull_back(C, it, vr) : pull_back(C, it, vl);
    double xl = std::min(xl_img_lo, xr_img_lo), xr = std::max(xl_img_lo, xr_img_lo);
    if (!(xl > it.a) || !(xr < it.b) || !(xr > xl)) {
        drop_unresolved(C, it.a, it.b - it.a);
        return;
    }
    double fl = iterate_n(C.m, xl, it.n), fr = iterate_n(C.m, xr, it.n);
    // Independent re-iteration of the cut points must reproduce the trimmed
    // image. A large shortfall means the piece passed close enough to a
    // critical point that its endpoint orbits merged in double precision;
    // such an element cannot be certified and its mass goes to unresolved.
    double expect = (ihi - ilo) - 2.0 * C.P.eps;
    if (std::abs(fr - fl) < 0.5 * expect) {
        drop_unresolved(C, xl, xr - xl);
    } else {
        InducedElement el;
        el.w = {xl, xr};
        el.p_hat = it.n;
        el.image = {std::min(fl, fr), std::max(fl, fr)};
        el.distortion = sample_distortion(C.m, xl, xr, it.n);
        el.history = it.hist;
        std::lock_guard<std::mutex> lk(C.out_mu);
        C.elements.push_back(std::move(el));
    }
    EItem left = it, right = it;
    left.b = xl; left.fb = fl;
    right.a = xr; right.fa = fr;
    if (left.b > left.a) subdivide_levels(C, std::move(left), sink);
    if (right.b > right.a) subdivide_levels(C, std::move(right), sink);
}

// Refine a domain point so that the full R-fold iterate lands on `target`
// as exactly as doubles allow. Expanding bracket around x0 within [lo, hi].
double refine_full_root(const PiecewiseMap& m, long R, double x0,
                        double lo, double hi, double target) {
    auto fR = [&](double x) { return iterate_n(m, x, R); };
    double f0 = fR(x0);
    if (f0 == target) return x0;
    double span = std::max(hi - x0, x0 - lo);
    double h = std::max(4.0 * std::abs(x0) * 1e-16, 1e-300);
    for (int rounds = 0; rounds < 60; ++rounds) {
        double xa = std::max(lo, x0 - h), xb = std::min(hi, x0 + h);
        double fa = fR(xa), fb = fR(xb);
        if ((fa - target) * (fb - target) <= 0.0)
            return bisect_monotone(fR, xa, xb, target, fa, fb, 0.0, 0.0);
        if (xa == lo && xb == hi) break;
        h *= 4.0;
        if (h > span) h = span;
    }
    return x0;
}

// Capture every disjoint witness window that fits inside the current image.
// Returns false when nothing was captured (caller falls through to visit
// processing / stepping).
template <typename Sink>
bool try_capture(EngineCtx& C, EItem& it, Sink&& sink) {
    const CaptureSet& cs = *C.cap;
    double ilo = std::min(it.fa, it.fb), ihi = std::max(it.fa, it.fb);
    // The refined endpoints of a captured element can only be placed to one
    // ulp in the domain, so its f^R images scatter by |Df^R| ulps around the
    // ends of Omega. |Df^R| ~ (piece expansion) * |Omega| / (window width);
    // windows too narrow for the current expansion would always miss the
    // residual budget, so they are not worth pulling back.
    double omega_len = cs.omega.hi - cs.omega.lo;
    double min_window = ((ihi - ilo) / (it.b - it.a)) * omega_len
                        / (1e16 * C.residual_accept);
    struct Taken { double u, v; int t; };
    std::vector<Taken> cand;
    // R = n + t must be at least 1: the t = 0 window at time 0 would be the
    // identity branch.
    if (it.n >= 1 && cs.omega.lo >= ilo + kImageMargin && cs.omega.hi <= ihi - kImageMargin
        && omega_len >= min_window)
        cand.push_back({cs.omega.lo, cs.omega.hi, 0});
    auto first = std::lower_bound(C.by_depth.begin(), C.by_depth.end(), ilo + kImageMargin,
                                  [](const CaptureWindow* w, double lo) { return w->u < lo; });
    // Windows much narrower than the image contribute nothing to the few
    // selected below, so a span-relative floor keeps the candidate scan and
    // sort bounded without biasing which part of the axis gets served.
    double width_floor = std::max({32.0 * C.P.w_min, min_window, (ihi - ilo) / 4096.0});
    for (auto itw = first; itw != C.by_depth.end(); ++itw) {
        const CaptureWindow* w = *itw;
        if (w->u > ihi - kImageMargin) break;
        if (w->v > ihi - kImageMargin) continue;
        if (w->v - w->u < width_floor) continue;
        cand.push_back({w->u, w->v, w->t});
        if (cand.size() >= 16384) break;
    }
    if (cand.empty()) return false;

    // Every capture event spawns fragments that retry within a step or two,
    // so the fan-out per event drives the total piece count geometrically.
    // Taking a few of the widest disjoint windows removes most of the mass
    // while spawning at most a handful of fragments; narrower windows stay
    // available to the fragments of later events.
    std::sort(cand.begin(), cand.end(), [](const Taken& a, const Taken& b) {
        double wa = a.v - a.u, wb = b.v - b.u;
        if (wa != wb) return wa > wb;
        if (a.u != b.u) return a.u < b.u;
        return a.t < b.t;
    });
    std::vector<Taken> sel;
    double cum = 0.0, span = ihi - ilo;
    for (const Taken& w : cand) {
        if (sel.size() >= 64 || cum >= 0.97 * span) break;
        bool clash = false;
        for (const auto& s : sel)
            if (std::max(s.u, w.u) < std::min(s.v, w.v)) { clash = true; break; }
        if (clash) continue;
        sel.push_back(w);
        cum += w.v - w.u;
    }

    std::sort(sel.begin(), sel.end(), [](const Taken& a, const Taken& b) { return a.u < b.u; });
    bool increasing = it.fb > it.fa;

    // Pull back window endpoints, then refine against the full R-iterate so
    // the Markov images meet the boundary of Omega at double precision.
    struct Piece { double a, b; int t; bool window; double residual; };
    std::vector<Piece> pieces;
    double prev_dom = it.a;
    double width = it.b - it.a;
    auto order = [&](size_t k) { return increasing ? k : sel.size() - 1 - k; };
    for (size_t k = 0; k < sel.size(); ++k) {
        const Taken& w = sel[order(k)];
        double xu = pull_back(C, it, increasing ? w.u : w.v);
        double xv = pull_back(C, it, increasing ? w.v : w.u);
        if (!(xv > xu)) { continue; }
        long R = it.n + w.t;
        double gl = std::max(prev_dom, xu - 0.45 * (xu - prev_dom));
        double gr = std::min(it.b, xv + 0.45 * std::max(0.0, it.b - xv));
        // Endpoint targets follow the orientation of the full R-iterate,
        // detected from the actual values at the approximate pull-backs.
        double fu = iterate_n(C.m, xu, R), fv = iterate_n(C.m, xv, R);
        double tl = fu < fv ? cs.omega.lo : cs.omega.hi;
        double tr = fu < fv ? cs.omega.hi : cs.omega.lo;
        double rl = refine_full_root(C.m, R, xu, gl, xv, tl);
        double rr = refine_full_root(C.m, R, xv, rl, gr, tr);
        if (!(rr > rl) || rl < prev_dom || rr > it.b) continue;
        double frl = iterate_n(C.m, rl, R), frr = iterate_n(C.m, rr, R);
        double res = std::max(std::abs(std::min(frl, frr) - cs.omega.lo),
                              std::abs(std::max(frl, frr) - cs.omega.hi));
        if (prev_dom < rl) pieces.push_back({prev_dom, rl, 0, false, 0.0});
        pieces.push_back({rl, rr, w.t, true, res});
        prev_dom = rr;
    }
    if (prev_dom < it.b) pieces.push_back({prev_dom, it.b, 0, false, 0.0});

    for (const auto& pc : pieces) {
        if (pc.window && pc.residual <= C.residual_accept) {
            CapturedElement el;
            el.w_tilde = {pc.a, pc.b};
            el.t = pc.t;
            el.p_hat = it.n;
            el.R = it.n + pc.t;
            el.residual = pc.residual;
            el.capture_ratio = (pc.b - pc.a) / width;
            std::lock_guard<std::mutex> lk(C.out_mu);
            C.captured.push_back(el);
        } else if (pc.window) {
            // Missed the residual budget. The floor only grows with R, so a
            // retry is doomed; the mass is honestly unresolvable.
            drop_unresolved(C, pc.a, pc.b - pc.a);
        } else {
            // Gap between windows: continues as a fragment. The forced step
            // keeps a failed capture from retrying in place.
            EItem frag = it;
            frag.a = pc.a; frag.b = pc.b;
            frag.fa = pc.a == it.a ? it.fa : iterate_n(C.m, pc.a, it.n);
            frag.fb = pc.b == it.b ? it.fb : iterate_n(C.m, pc.b, it.n);
            frag.gen = it.gen + 1;
            frag.bind_until = it.n + 1;
            sink(std::move(frag));
        }
    }
    return true;
}

template <typename Sink>
void process_item(EngineCtx& C, EItem it, Sink&& sink) {
    for (;;) {
        double w = it.b - it.a;
        if (w < C.P.w_min || it.n >= C.P.N_max || it.gen > C.gen_cap) {
            drop_unresolved(C, it.a, w);
            return;
        }
        double ilo = std::min(it.fa, it.fb), ihi = std::max(it.fa, it.fb);

        // A piece whose endpoint orbits have merged in double precision can
        // never certify anything; its mass is unresolved.
        if (ihi <= ilo && it.n >= 1) {
            drop_unresolved(C, it.a, w);
            return;
        }
        // Capture wall: the refined f^R endpoints cannot land closer to the
        // ends of Omega than |Df^R| ulps. Once the accumulated expansion of
        // the piece pushes that floor past the acceptance budget, no capture
        // from it can ever be certified, and letting it keep splitting is a
        // geometric explosion of doomed pieces.
        if (C.cap && (ihi - ilo) > 1e16 * C.residual_accept * w) {
            drop_unresolved(C, it.a, w);
            return;
        }

        if (it.n >= it.bind_until) {
            if (C.cap) {
                // Capture mode needs no binding shells: pieces only have to
                // stay monotone (the straddle splits below) until a witness
                // window fits inside the image. The bind field is reused as
                // the forced step after a failed capture.
                if (try_capture(C, it, sink)) return;
            } else {
                // A visit happens the first time the image overlaps a delta1
                // neighbourhood. The image is a true interval even when
                // critical points sit in its interior, because all earlier
                // steps split at branch boundaries; the hit is at step n,
                // not before.
                bool visiting = false;
                for (size_t ci = 0; ci < C.m.critical.size(); ++ci) {
                    double c = C.m.critical[ci].c;
                    if (ihi > c - C.P.delta1 && ilo < c + C.P.delta1) { visiting = true; break; }
                }
                if (visiting) {
                    // Large scale reached: the whole trimmed image is
                    // emitted, not just the part near the critical set.
                    // Small visits are subdivided into binding shells and
                    // continue bound.
                    if (ihi - ilo >= C.P.delta_prime + 2.0 * C.P.eps)
                        emit_with_margins(C, std::move(it), sink);
                    else
                        subdivide_levels(C, std::move(it), sink);
                    return;
                }
            }
        }

        // Keep iterating: split first whenever the image interior meets a
        // branch boundary, so f^{n+1} stays monotone on the piece.
        double split_at = 0.0;
        bool need_split = false;
        for (double bp : C.breakpoints) {
            if (bp > ilo && bp < ihi) { split_at = bp; need_split = true; break; }
        }
        if (need_split) {
            split_at_image_value(C, std::move(it), split_at, sink);
            return;
        }
        Side hint_a = it.fa <= it.fb ? Side::plus : Side::minus;
        Side hint_b = it.fa <= it.fb ? Side::minus : Side::plus;
        it.fa = step_value(C.m, it.fa, hint_a);
        it.fb = step_value(C.m, it.fb, hint_b);
        ++it.n;
    }
}

} // namespace

DiagTables build_tables(const PiecewiseMap& m, int horizon) {
    DiagTables t;
    for (size_t ci = 0; ci < m.critical.size(); ++ci) {
        for (Side s : {Side::minus, Side::plus}) {
            t.recs.push_back(critical_orbit(m, static_cast<int>(ci), s, horizon));
        }
    }
    return t;
}

int binding_period(const PiecewiseMap& m, double x, const DiagTables& tables,
                   double delta, bool* cap_hit) {
    if (cap_hit) *cap_hit = false;
    int ci = -1;
    double d = m.nearest_critical_distance(x, &ci);
    // The neighbourhood is closed; the relative slack keeps c + delta inside
    // even when the sum rounds a half-ulp outward.
    if (ci < 0 || d > delta * (1.0 + 1e-12)) return 0;
    Side s = (x >= m.critical[ci].c) ? Side::plus : Side::minus;
    const CriticalOrbitRecord& rec = tables.at(ci, s);
    SidedPoint p{x, d <= PiecewiseMap::tie_tol ? s : Side::interior};
    for (int k = 1; k < rec.N; ++k) {
        p = step_sided(m, p);
        if (std::abs(p.x - rec.orbit[k]) > rec.gamma[k] * rec.dist[k]) return k;
    }
    if (cap_hit) *cap_hit = true;
    return rec.N;
}

InducerParams select_delta(const PiecewiseMap& m, const DiagTables& tables,
                           const std::vector<double>& candidates, double zeta) {
    std::vector<double> grid = candidates;
    if (grid.empty())
        for (int j = 0; j <= 10; ++j) grid.push_back(0.1 * std::ldexp(1.0, -j));

    double dom_lo = m.branches.front().domain.lo;
    double dom_hi = m.branches.back().domain.hi;

    for (double delta : grid) {
        bool ok = delta > 0.0;
        for (size_t i = 0; ok && i < m.critical.size(); ++i)
            for (size_t j = i + 1; ok && j < m.critical.size(); ++j)
                if (std::abs(m.critical[i].c - m.critical[j].c) <= 2.0 * delta)
                    ok = false;  // neighbourhoods must be pairwise disjoint
        for (size_t ci = 0; ok && ci < m.critical.size(); ++ci) {
            for (Side s : {Side::minus, Side::plus}) {
                double x = m.critical[ci].c + (s == Side::plus ? delta : -delta);
                if (x < dom_lo || x > dom_hi) continue;  // side leaves the domain
                int p_delta = binding_period(m, x, tables, delta, nullptr);
                if (p_delta < 1) p_delta = 1;
                const CriticalOrbitRecord& rec = tables.at(static_cast<int>(ci), s);
                KahanSum tail;  // gamma decays geometrically; horizon truncation is negligible
                for (int p = p_delta; p <= rec.N; ++p) tail.add(rec.gamma[p]);
                if (zeta * tail.value() > 0.5) { ok = false; break; }
            }
        }
        if (ok) {
            InducerParams P;
            P.delta = delta;
            P.zeta = zeta;
            derive_scales(m, P);
            return P;
        }
    }
    throw ErgodicError("NoFeasibleDelta",
                       "no candidate neighbourhood radius passes the binding tail test");
}

double estimate_delta_prime(const PiecewiseMap& m, double delta, int N_max) {
    double dom_lo = m.branches.front().domain.lo;
    double dom_hi = m.branches.back().domain.hi;
    double best = std::numeric_limits<double>::infinity();
    bool any_stopped = false;

    std::vector<double> stops;  // values whose strict interior containment ends growth
    for (const auto& cp : m.critical) stops.push_back(cp.c);
    for (size_t i = 0; i + 1 < m.branches.size(); ++i)
        stops.push_back(m.branches[i].domain.hi);

    for (const auto& cp : m.critical) {
        for (Side s : {Side::minus, Side::plus}) {
            double a, b;
            Side hint_at_c = s;  // the c endpoint continues one-sidedly
            if (s == Side::minus) { a = std::max(dom_lo, cp.c - 0.5 * delta); b = cp.c; }
            else { a = cp.c; b = std::min(dom_hi, cp.c + 0.5 * delta); }
            if (b - a <= 0.0) continue;
            double u, v;  // images of a and b
            {
                SidedPoint pa{a, a == cp.c ? hint_at_c : Side::plus};
                SidedPoint pb{b, b == cp.c ? hint_at_c : Side::minus};
                try { u = m.eval(pa).x; v = m.eval(pb).x; }
                catch (const NoBranchError&) { continue; }
            }
            double comp_min = std::abs(v - u);
            bool stopped = false;
            for (int i = 1; i <= N_max; ++i) {
                double lo = std::min(u, v), hi = std::max(u, v);
                comp_min = std::min(comp_min, hi - lo);
                bool wraps = false;
                for (double st : stops)
                    if (st > lo + PiecewiseMap::tie_tol && st < hi - PiecewiseMap::tie_tol)
                        wraps = true;
                if (wraps) { stopped = true; break; }
                Side hu = u <= v ? Side::plus : Side::minus;
                Side hv = u <= v ? Side::minus : Side::plus;
                double nu2 = step_value(m, u, hu);
                double nv2 = step_value(m, v, hv);
                u = nu2; v = nv2;
            }
            if (stopped) {
                any_stopped = true;
                best = std::min(best, comp_min);
            }
        }
    }
    if (!any_stopped)
        throw ErgodicError("NoExpansion",
                           "no critical half-neighbourhood grows back to the critical set");
    return std::min(best, 0.5 * delta);
}

void derive_scales(const PiecewiseMap& m, InducerParams& params) {
    params.delta1 = 0.5 * params.delta;
    params.delta_prime = estimate_delta_prime(m, params.delta, params.N_max);
    params.eps = 0.1 * params.delta_prime;
    params.delta_dprime = params.delta_prime / 3.0;
}

EngineResult engine_run(const PiecewiseMap& m, Interval J,
                        const InducerParams& params, const DiagTables& tables,
                        const CaptureSet* capture, int threads,
                        double residual_accept, int generation_cap) {
    EngineCtx C{m, params, tables, capture, residual_accept, generation_cap,
                {}, {}, {}, {}, {}, {}, {}, {}};
    for (size_t i = 0; i + 1 < m.branches.size(); ++i)
        C.breakpoints.push_back(m.branches[i].domain.hi);
    if (capture) {
        for (const auto& w : capture->windows) C.by_depth.push_back(&w);
        // u-order so a capture event only scans windows inside its image.
        std::sort(C.by_depth.begin(), C.by_depth.end(),
                  [](const CaptureWindow* a, const CaptureWindow* b) {
                      if (a->u != b->u) return a->u < b->u;
                      if (a->v != b->v) return a->v < b->v;
                      return a->t < b->t;
                  });
    }

    // Root subdivision: cut at branch boundaries, the delta edges and the
    // binding-level shells, so every start piece either lies outside the
    // critical neighbourhoods or is bound for its own period from time 0.
    // Capture mode skips the shell structure: only monotonicity matters.
    std::vector<double> root_cuts{J.lo, J.hi};
    for (double bp : C.breakpoints)
        if (bp > J.lo && bp < J.hi) root_cuts.push_back(bp);
    if (!capture) {
        for (const auto& cp : m.critical) {
            for (double v : {cp.c - params.delta, cp.c, cp.c + params.delta})
                if (v > J.lo && v < J.hi) root_cuts.push_back(v);
        }
        // Shell radii inside each delta neighbourhood.
        for (size_t ci = 0; ci < m.critical.size(); ++ci) {
            double c = m.critical[ci].c;
            for (Side s : {Side::minus, Side::plus}) {
                // Skip sides whose delta interval misses J entirely.
                if (s == Side::plus && (c >= J.hi || c + params.delta <= J.lo)) continue;
                if (s == Side::minus && (c <= J.lo || c - params.delta >= J.hi)) continue;
                double edge = s == Side::plus ? std::min(J.hi, c + params.delta)
                                              : std::max(J.lo, c - params.delta);
                double d_far = std::abs(edge - c);
                if (d_far <= 0.0) continue;
                int p_far = binding_p_at(C, static_cast<int>(ci), s, d_far);
                int horizon = tables.at(static_cast<int>(ci), s).N;
                for (int q = p_far + 1; q <= horizon; ++q) {
                    double r = radius_of_p(C, static_cast<int>(ci), s, q);
                    if (r < params.w_min) break;
                    if (r >= d_far) continue;
                    double v = s == Side::plus ? c + r : c - r;
                    if (v > J.lo && v < J.hi) root_cuts.push_back(v);
                }
            }
        }
    }
    std::sort(root_cuts.begin(), root_cuts.end());
    root_cuts.erase(std::unique(root_cuts.begin(), root_cuts.end()), root_cuts.end());

    std::deque<EItem> queue;
    for (size_t k = 0; k + 1 < root_cuts.size(); ++k) {
        EItem it;
        it.a = root_cuts[k]; it.b = root_cuts[k + 1];
        if (it.b <= it.a) continue;
        it.fa = it.a; it.fb = it.b;
        it.n = 0; it.gen = 0; it.bind_until = 0;
        if (!capture) {
            double mid = 0.5 * (it.a + it.b);
            int p0 = binding_period(m, mid, tables, params.delta, nullptr);
            if (p0 >= 1) {
                int ci = -1;
                m.nearest_critical_distance(mid, &ci);
                ReturnEvent ev;
                ev.nu = 0; ev.p = p0; ev.critical = ci; ev.deep = true;
                it.hist.push_back(ev);
                it.bind_until = p0;
            }
        }
        queue.push_back(std::move(it));
    }

    run_worklist(queue, threads, [&](EItem it, auto&& sink) {
        process_item(C, std::move(it), sink);
    });

    EngineResult r;
    r.elements = std::move(C.elements);
    r.captured = std::move(C.captured);
    std::sort(r.elements.begin(), r.elements.end(),
              [](const InducedElement& a, const InducedElement& b) {
                  if (a.w.lo != b.w.lo) return a.w.lo < b.w.lo;
                  return a.w.hi < b.w.hi;
              });
    std::sort(r.captured.begin(), r.captured.end(),
              [](const CapturedElement& a, const CapturedElement& b) {
                  if (a.w_tilde.lo != b.w_tilde.lo) return a.w_tilde.lo < b.w_tilde.lo;
                  return a.w_tilde.hi < b.w_tilde.hi;
              });
    std::sort(C.unresolved.begin(), C.unresolved.end());
    KahanSum leak;
    for (const auto& u : C.unresolved) leak.add(u.second);
    r.unresolved_mass = leak.value();
    for (const auto& el : r.elements)
        for (const auto& ev : el.history)
            (ev.deep ? r.n_deep : r.n_shallow) += 1;
    return r;
}

InducedMap build_induced(const PiecewiseMap& m, Interval J,
                         const InducerParams& params, const DiagTables& tables,
                         int threads) {
    if (J.length() < params.delta_dprime)
        throw ErgodicError("IntervalTooSmall",
                           "starting interval is shorter than the construction floor");
    EngineResult r = engine_run(m, J, params, tables, nullptr, threads);
    InducedMap im;
    im.J = J;
    im.params = params;
    im.elements = std::move(r.elements);
    im.unresolved_mass = r.unresolved_mass;
    im.n_deep = r.n_deep;
    im.n_shallow = r.n_shallow;
    im.K_eps = 1.0;
    for (const auto& el : im.elements)
        im.K_eps = std::max(im.K_eps, el.distortion);
    if (im.unresolved_mass > params.leak_budget * J.length())
        throw ErgodicError("LeakBudgetExceeded",
                           "unresolved mass exceeds the construction leak budget");
    return im;
}

std::vector<double> tail_distribution(const InducedMap& im) {
    long max_p = 0;
    for (const auto& el : im.elements) max_p = std::max(max_p, el.p_hat);
    // Mass with stopping time > n, summed from the deep end for stability.
    std::vector<KahanSum> above(static_cast<size_t>(max_p) + 1);
    std::vector<const InducedElement*> order;
    order.reserve(im.elements.size());
    for (const auto& el : im.elements) order.push_back(&el);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) {
        if (a->p_hat != b->p_hat) return a->p_hat < b->p_hat;
        return a->w.lo < b->w.lo;
    });
    std::vector<double> mass_at(static_cast<size_t>(max_p) + 1, 0.0);
    {
        std::vector<KahanSum> acc(static_cast<size_t>(max_p) + 1);
        for (auto* el : order) acc[static_cast<size_t>(el->p_hat)].add(el->w.length());
        for (size_t i = 0; i < acc.size(); ++i) mass_at[i] = acc[i].value();
    }
    std::vector<double> t(static_cast<size_t>(max_p) + 1, 0.0);
    double run = im.unresolved_mass;
    for (long n = max_p; n >= 0; --n) {
        if (n < max_p) run += mass_at[static_cast<size_t>(n) + 1];
        t[static_cast<size_t>(n)] = run / im.J.length();
    }
    return t;
}

DFBoundReport check_DF_bound(const PiecewiseMap& m, const InducedMap& im,
                             const DiagTables& tables) {
    DFBoundReport rep;
    rep.K1 = std::numeric_limits<double>::infinity();
    for (const auto& el : im.elements) {
        double x0 = el.w.mid();
        for (const auto& ev : el.history) {
            if (!ev.deep || ev.critical < 0 || ev.p < 1) continue;
            double x = iterate_n(m, x0, ev.nu);
            Side s = (x >= m.critical[ev.critical].c) ? Side::plus : Side::minus;
            const CriticalOrbitRecord& rec = tables.at(ev.critical, s);
            int p = std::min(ev.p, rec.N);
            DerivProduct d;
            bool ok = false;
            for (Side hs : {Side::interior, Side::plus, Side::minus}) {
                try {
                    d = map_deriv_n(m, {x, hs}, p);
                    ok = true;
                    break;
                } catch (const OrbitHitsCriticalError&) {
                }
            }
            if (!ok || d.zero) continue;
            double g = rec.gamma[std::min(p, rec.N)];
            double k1 = std::exp(d.log_abs + std::log(g));
            rep.K1 = std::min(rep.K1, k1);
            rep.events += 1;
        }
    }
    if (!std::isfinite(rep.K1)) rep.K1 = 0.0;
    rep.pass = rep.events > 0 && rep.K1 > 0.0;
    return rep;
}

double iterate_value(const PiecewiseMap& m, double x, long n) {
    return iterate_n(m, x, n);
}

} // namespace ergodic
