#include "ergodic/orbit_diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "ergodic/numeric.hpp"
#include "ergodic/rng.hpp"

namespace ergodic {

namespace {

// Closest critical point to x; distance ties broken toward the smaller gamma
// argument, i.e. the conservative choice.
void nearest_critical(const PiecewiseMap& m, double x, double l_start,
                      double log_dn, int& index, double& dist, double& order) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& cp : m.critical) best = std::min(best, std::abs(x - cp.c));
    index = -1;
    double best_arg = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < m.critical.size(); ++j) {
        const auto& cp = m.critical[j];
        double d = std::abs(x - cp.c);
        if (d > best + PiecewiseMap::tie_tol) continue;
        double l_t = cp.order(x >= cp.c ? Side::plus : Side::minus);
        double arg = ((l_t - l_start) * std::log(d) - log_dn) / (2.0 * l_start - 1.0);
        if (arg < best_arg) {
            best_arg = arg;
            index = static_cast<int>(j);
            dist = d;
            order = l_t;
        }
    }
}

} // namespace

CriticalOrbitRecord critical_orbit(const PiecewiseMap& m, int critical_index,
                                   Side side, int N) {
    if (N < 1) throw ErgodicError("BadHorizon", "horizon must be >= 1");
    if (critical_index < 0 || critical_index >= static_cast<int>(m.critical.size()))
        throw ErgodicError("BadCriticalIndex", "critical index out of range");
    if (side == Side::interior)
        throw ErgodicError("BadSide", "critical orbit needs an approach side");

    const CriticalPoint& cp = m.critical[critical_index];
    CriticalOrbitRecord rec;
    rec.critical_index = critical_index;
    rec.side = side;
    rec.N = N;
    rec.l_start = cp.order(side);
    const double l_c = rec.l_start;

    auto sized = [N](auto fill) {
        return std::vector<double>(static_cast<size_t>(N) + 1, fill);
    };
    rec.orbit = sized(0.0);
    rec.log_deriv = sized(0.0);
    rec.nearest.assign(static_cast<size_t>(N) + 1, -1);
    rec.nearest_order = sized(1.0);
    rec.dist = sized(0.0);
    rec.gamma = sized(0.0);
    rec.gamma_raw = sized(0.0);
    rec.dmin = sized(std::numeric_limits<double>::infinity());

    SidedPoint p{cp.c, side};
    p = m.eval(p);  // f(c) on the chosen side
    KahanSum s1, s2, logD;
    std::vector<double> dterm_log(static_cast<size_t>(N) + 1, 0.0);
    double running_dmin = std::numeric_limits<double>::infinity();

    for (int n = 1; n <= N; ++n) {
        rec.orbit[n] = p.x;
        if (m.critical_index(p.x) >= 0)
            throw OrbitHitsCriticalError(n);

        // Df at f^n(c), on the branch the sided orbit actually uses.
        const Branch& br = m.branch_at(p);
        double df = br.deriv(p.x);
        if (df == 0.0)
            throw OrbitHitsCriticalError(n);
        logD.add(std::log(std::abs(df)));
        rec.log_deriv[n] = logD.value();

        nearest_critical(m, p.x, l_c, rec.log_deriv[n], rec.nearest[n],
                         rec.dist[n], rec.nearest_order[n]);
        double log_d = std::log(rec.dist[n]);
        double log_arg = ((rec.nearest_order[n] - l_c) * log_d - rec.log_deriv[n]) /
                         (2.0 * l_c - 1.0);
        rec.gamma_raw[n] = std::exp(log_arg);
        rec.gamma[n] = std::min(rec.gamma_raw[n], 0.5);

        rec.dmin[n] = running_dmin;  // min over i < n, so update after recording
        dterm_log[n] = (std::log(rec.gamma[n]) - rec.log_deriv[n]) / l_c +
                       (rec.nearest_order[n] / l_c) * log_d;
        running_dmin = std::min(running_dmin, std::exp(dterm_log[n]));

        s1.add(rec.gamma_raw[n]);
        s2.add(std::exp(-rec.log_deriv[n] / l_c));
        rec.S1_partial.push_back(s1.value());
        rec.S2_partial.push_back(s2.value());

        if (n < N) p = m.eval(p);
    }
    // S1/S2 were built densely; re-align to 1-based indexing.
    rec.S1_partial.insert(rec.S1_partial.begin(), 0.0);
    rec.S2_partial.insert(rec.S2_partial.begin(), 0.0);
    return rec;
}

const char* verdict_name(SumVerdict v) {
    switch (v) {
        case SumVerdict::converging: return "converging";
        case SumVerdict::diverging: return "diverging";
        default: return "inconclusive";
    }
}

const char* regime_name(Regime r) {
    switch (r) {
        case Regime::polynomial: return "polynomial";
        case Regime::stretched: return "stretched";
        case Regime::exponential: return "exponential";
        default: return "inconclusive";
    }
}

RegimeFit classify_decay(const std::vector<double>& a) {
    const size_t L = a.size();
    if (L < 30) throw ErgodicError("SequenceTooShort", "need at least 30 terms");
    bool all_equal = true;
    for (size_t i = 0; i < L; ++i) {
        if (a[i] <= 0.0) throw DegenerateSequenceError();
        if (std::abs(a[i] - a[0]) > 1e-14 * std::abs(a[0])) all_equal = false;
    }
    if (all_equal) throw DegenerateSequenceError();

    const size_t i0 = L / 2;
    std::vector<double> n_lin, n_log, y;
    for (size_t i = i0; i < L; ++i) {
        double n = static_cast<double>(i + 1);
        n_lin.push_back(n);
        n_log.push_back(std::log(n));
        y.push_back(std::log(a[i]));
    }

    LinearFit poly = linear_fit(n_log, y);
    LinearFit expf = linear_fit(n_lin, y);

    // Stretched model via the double-log transform; only ratios < 1 admit it.
    std::vector<double> sx, sy;
    for (size_t i = i0; i < L; ++i) {
        double r = a[i] / a[0];
        if (r >= 1.0 || r <= 0.0) continue;
        sx.push_back(std::log(static_cast<double>(i + 1)));
        sy.push_back(std::log(-std::log(r)));
    }
    LinearFit str;
    str.r_squared = -1.0;
    if (sx.size() >= 10) {
        str = linear_fit(sx, sy);
        if (!(str.slope > 0.05 && str.slope < 1.2)) str.r_squared = -1.0;
    }

    RegimeFit out;
    double rp = poly.r_squared, re = expf.r_squared, rs = str.r_squared;
    if (poly.slope >= 0.0) rp = -1.0;  // decay models only
    if (expf.slope >= 0.0) re = -1.0;

    enum { P, E, S } best = P;
    double rbest = rp;
    if (re > rbest) { best = E; rbest = re; }
    if (rs > rbest) { best = S; rbest = rs; }
    if (best == S && str.slope >= 0.95 && str.slope <= 1.05 && re > 0.0) {
        best = E;
        rbest = re;
    }
    out.r_squared = std::max(0.0, rbest);

    if (rbest < 0.98) {
        out.regime = Regime::inconclusive;
        return out;
    }
    if (best == P) {
        out.regime = Regime::polynomial;
        out.alpha = -poly.slope;
        out.fitted_constant = std::exp(poly.intercept);
    } else if (best == E) {
        out.regime = Regime::exponential;
        out.beta = -expf.slope;
        out.fitted_constant = std::exp(expf.intercept);
    } else {
        // The double-log fit locates alpha well but biases beta; refine by a
        // grid search over alpha, refitting log a ~ logC - beta n^alpha on a
        // wider window each time and keeping the least-squares winner.
        size_t j0 = std::max<size_t>(4, L / 8);
        std::vector<double> wy;
        for (size_t i = j0; i < L; ++i) wy.push_back(std::log(a[i]));
        double best_sse = std::numeric_limits<double>::infinity();
        double best_alpha = str.slope, best_beta = 0.0, best_logc = 0.0;
        for (double al = std::max(0.05, str.slope - 0.15);
             al <= std::min(0.99, str.slope + 0.15) + 1e-12; al += 0.005) {
            std::vector<double> wx;
            for (size_t i = j0; i < L; ++i)
                wx.push_back(std::pow(static_cast<double>(i + 1), al));
            LinearFit ft = linear_fit(wx, wy);
            double sse = 0.0;
            for (size_t i = 0; i < wx.size(); ++i) {
                double resid = wy[i] - (ft.intercept + ft.slope * wx[i]);
                sse += resid * resid;
            }
            if (sse < best_sse) {
                best_sse = sse;
                best_alpha = al;
                best_beta = -ft.slope;
                best_logc = ft.intercept;
            }
        }
        out.regime = Regime::stretched;
        out.alpha = best_alpha;
        out.beta = best_beta;
        out.fitted_constant = std::exp(best_logc);
    }
    return out;
}

SumVerdict series_verdict(const std::vector<double>& terms) {
    if (terms.size() < 30) return SumVerdict::inconclusive;
    std::vector<double> a = terms;
    for (double& v : a) v = std::max(v, 1e-300);  // classifier needs positivity
    RegimeFit fit;
    try {
        fit = classify_decay(a);
    } catch (const DegenerateSequenceError&) {
        return SumVerdict::diverging;  // constant positive terms cannot sum
    }
    if (fit.regime == Regime::exponential || fit.regime == Regime::stretched)
        return SumVerdict::converging;
    if (fit.regime == Regime::polynomial) {
        if (fit.alpha >= 1.05) return SumVerdict::converging;
        // n*a_n bounded below over the tail marks a harmonic-or-worse series.
        size_t i0 = a.size() / 2;
        double lo = std::numeric_limits<double>::infinity(), first = 0.0;
        for (size_t i = i0; i < a.size(); ++i) {
            double b = static_cast<double>(i + 1) * a[i];
            if (i == i0) first = b;
            lo = std::min(lo, b);
        }
        if (fit.alpha <= 1.0 && lo >= 0.1 * first) return SumVerdict::diverging;
    }
    return SumVerdict::inconclusive;
}

SummabilityVerdict summability_verdict(const CriticalOrbitRecord& rec) {
    if (rec.N < 50)
        throw ErgodicError("RecordTooShort", "summability verdict needs N >= 50");
    std::vector<double> t1(rec.gamma_raw.begin() + 1, rec.gamma_raw.end());
    std::vector<double> t2;
    for (int n = 1; n <= rec.N; ++n)
        t2.push_back(std::exp(-rec.log_deriv[n] / rec.l_start));
    return {series_verdict(t1), series_verdict(t2)};
}

ExpansionReport expansion_outside_delta(const PiecewiseMap& m, double delta,
                                        int sample_orbits, int horizon,
                                        std::uint64_t seed) {
    if (delta <= 0.0) throw ErgodicError("BadDelta", "delta must be positive");
    for (size_t i = 0; i + 1 < m.critical.size(); ++i)
        if (m.critical[i + 1].c - m.critical[i].c <= 2.0 * delta)
            throw ErgodicError("BadDelta", "critical neighborhoods overlap");

    auto outside = [&](double x) {
        for (const auto& cp : m.critical)
            if (std::abs(x - cp.c) < delta) return false;
        return true;
    };

    struct Segment {
        std::vector<double> logD;  // cumulative log|Df^k| along the segment
    };
    std::vector<Segment> segs;

    for (int o = 0; o < sample_orbits; ++o) {
        auto gen = substream(seed, static_cast<std::uint64_t>(o));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        SidedPoint p{unif(gen), Side::interior};
        Segment cur;
        double acc = 0.0;
        bool open = false;
        auto close = [&]() {
            if (open && !cur.logD.empty()) segs.push_back(std::move(cur));
            cur = Segment{};
            acc = 0.0;
            open = false;
        };
        for (int t = 0; t < horizon; ++t) {
            if (m.critical_index(p.x) >= 0) { close(); break; }
            if (!outside(p.x)) {
                close();
            } else {
                const Branch& br = m.branch_at(p);
                double df = std::abs(br.deriv(p.x));
                if (df <= 0.0) { close(); break; }
                acc += std::log(df);
                cur.logD.push_back(acc);
                open = true;
            }
            try {
                p = m.eval(p);
            } catch (const NoBranchError&) {
                close();
                break;
            }
        }
        close();
    }

    ExpansionReport rep;
    rep.segments = static_cast<int>(segs.size());
    if (segs.empty()) throw NoSegmentsError();

    double lambda = std::numeric_limits<double>::infinity();
    for (const auto& s : segs) {
        if (s.logD.size() < 2) continue;
        std::vector<double> k(s.logD.size());
        for (size_t i = 0; i < k.size(); ++i) k[i] = static_cast<double>(i + 1);
        lambda = std::min(lambda, linear_fit(k, s.logD).slope);
        rep.slope_segments++;
    }
    if (rep.slope_segments == 0) {
        for (const auto& s : segs) lambda = std::min(lambda, s.logD.front());
    }
    double log_c = 0.0;
    for (const auto& s : segs)
        for (size_t i = 0; i < s.logD.size(); ++i)
            log_c = std::min(log_c, s.logD[i] - lambda * static_cast<double>(i + 1));

    rep.lambda_delta = lambda;
    rep.C_delta = std::exp(log_c);
    rep.red_flag = !(lambda > 0.0);
    return rep;
}

} // namespace ergodic
