#include "ergodic/measure_stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "ergodic/numeric.hpp"
#include "ergodic/parallel.hpp"
#include "ergodic/rng.hpp"

namespace ergodic {

namespace {

constexpr double kPi = 3.14159265358979323846;

Interval map_domain(const PiecewiseMap& m) {
    return {m.branches.front().domain.lo, m.branches.back().domain.hi};
}

int bin_of(double x, const Interval& dom, int bins) {
    int j = static_cast<int>((x - dom.lo) / dom.length() * bins);
    return std::clamp(j, 0, bins - 1);
}

void require_bins(int bins) {
    if (bins < 256 || bins > 65536 || (bins & (bins - 1)) != 0)
        throw ErgodicError("BadBins", "bins must be a power of two in [256, 65536]");
}

double uniform01(std::mt19937_64& gen) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    return unif(gen);
}

// Orbits of maps with exactly representable expanding branches (full tent,
// doubling) collapse in floating point: each step shifts the mantissa left,
// so every double-precision start reaches a fixed point within ~60 steps.
// Statistical estimators therefore step with seeded uniform jitter far below
// every bin width and tolerance used here; the partition constructions
// elsewhere in the library remain exact.
constexpr double kJitter = 1e-12;

double jitter_step(const PiecewiseMap& m, double x, int power, std::mt19937_64& gen,
                   const Interval& dom) {
    double y = iterate_value(m, x, power);
    y += kJitter * (2.0 * uniform01(gen) - 1.0);
    return std::clamp(y, dom.lo, dom.hi);
}

// Bin-to-bin mass transfer matrix, compressed rows. Each source bin is
// sampled at 64 evenly spaced interior points; every sample carries 1/64 of
// the bin's mass to its image bin, so rows sum to exactly 1.
struct Transfer {
    std::vector<int> ptr, col;
    std::vector<double> val;
};

Transfer build_transfer(const PiecewiseMap& m, int bins, const Interval& dom, int threads) {
    const int S = 64;
    double w = dom.length() / bins;
    std::vector<std::vector<std::pair<int, double>>> rows(bins);
    parallel_for(static_cast<size_t>(bins), threads, [&](size_t i) {
        int idx[S];
        for (int k = 0; k < S; ++k) {
            double x = dom.lo + (static_cast<double>(i) + (k + 0.5) / S) * w;
            idx[k] = bin_of(iterate_value(m, x, 1), dom, bins);
        }
        std::sort(idx, idx + S);
        auto& row = rows[i];
        for (int k = 0; k < S;) {
            int j = idx[k], c = 0;
            while (k < S && idx[k] == j) { ++k; ++c; }
            row.emplace_back(j, c / 64.0);
        }
    });
    Transfer t;
    t.ptr.reserve(bins + 1);
    t.ptr.push_back(0);
    for (const auto& row : rows) {
        for (const auto& [j, v] : row) { t.col.push_back(j); t.val.push_back(v); }
        t.ptr.push_back(static_cast<int>(t.col.size()));
    }
    return t;
}

// Signed autocovariance / cross-covariance estimates per lag with a standard
// error over seeds.
struct CovSeries {
    std::vector<double> mean;  // lag 0..n_max
    std::vector<double> se;
};

// Time-average estimator along one orbit per seed: two deterministic passes
// over the same orbit, the first for the observable means, the second
// accumulating lagged products through a ring buffer, so memory stays O(n_max)
// at any orbit length.
CovSeries covariance_series(const PiecewiseMap& m, const Observable& phi,
                            const Observable& psi, int n_max, long L,
                            const std::vector<std::uint64_t>& seeds, int power,
                            int threads) {
    if (seeds.size() < 2)
        throw ErgodicError("NeedSeeds", "covariance error bars need at least two seeds");
    if (n_max < 1 || L <= 2 * n_max)
        throw ErgodicError("BadParams", "orbit length must exceed twice the maximal lag");
    Interval dom = map_domain(m);
    const long burn = 10000;
    const int W = n_max + 1;
    std::vector<std::vector<double>> per_seed(seeds.size());

    parallel_for(seeds.size(), threads, [&](size_t s) {
        // Two passes over the same jittered orbit: reseeding the substream
        // replays the identical step sequence, so the second pass subtracts
        // means computed from exactly the points it visits.
        auto start = [&](std::mt19937_64& gen) {
            double x = dom.lo + dom.length() * uniform01(gen);
            for (long t = 0; t < burn; ++t) x = jitter_step(m, x, power, gen, dom);
            return x;
        };
        auto gen = substream(seeds[s], 1);
        double x = start(gen);
        KahanSum su, sv;
        for (long t = 0; t < L; ++t) {
            su.add(phi.f(x));
            sv.add(psi.f(x));
            x = jitter_step(m, x, power, gen, dom);
        }
        double mu = su.value() / L, mv = sv.value() / L;

        std::vector<KahanSum> acc(W);
        std::vector<double> ring(W, 0.0);
        gen = substream(seeds[s], 1);
        x = start(gen);
        for (long t = 0; t < L; ++t) {
            double u = phi.f(x) - mu;
            ring[t % W] = psi.f(x) - mv;
            long kmax = std::min<long>(t, n_max);
            for (long k = 0; k <= kmax; ++k) acc[k].add(u * ring[(t - k) % W]);
            x = jitter_step(m, x, power, gen, dom);
        }
        auto& covs = per_seed[s];
        covs.resize(W);
        for (int k = 0; k < W; ++k) covs[k] = acc[k].value() / (L - k);
    });

    CovSeries out;
    out.mean.assign(W, 0.0);
    out.se.assign(W, 0.0);
    const double S = static_cast<double>(seeds.size());
    for (int k = 0; k < W; ++k) {
        KahanSum mk;
        for (const auto& covs : per_seed) mk.add(covs[k]);
        out.mean[k] = mk.value() / S;
        KahanSum vk;
        for (const auto& covs : per_seed) {
            double d = covs[k] - out.mean[k];
            vk.add(d * d);
        }
        out.se[k] = std::sqrt(vk.value() / (S * (S - 1.0)));
    }
    return out;
}

// Decay-regime fit for short positive sequences (a few lags above noise):
// log a_n regressed against n, log n and sqrt n. Highest r-squared wins,
// with the exponential model preferred on near ties; declared only at
// r-squared >= 0.9.
RegimeFit fit_short_decay(const std::vector<double>& C, int K) {
    std::vector<double> y, xe, xp, xs;
    for (int n = 1; n <= K; ++n) {
        y.push_back(std::log(std::max(C[n], 1e-300)));
        xe.push_back(n);
        xp.push_back(std::log(static_cast<double>(n)));
        xs.push_back(std::sqrt(static_cast<double>(n)));
    }
    LinearFit fe = linear_fit(xe, y), fp = linear_fit(xp, y), fs = linear_fit(xs, y);
    RegimeFit out;
    double best = std::max({fe.r_squared, fp.r_squared, fs.r_squared});
    if (best < 0.9 || fe.slope >= 0.0) {
        out.r_squared = best;
        return out;
    }
    if (fe.r_squared >= best - 0.005) {
        out.regime = Regime::exponential;
        out.beta = -fe.slope;
        out.fitted_constant = std::exp(fe.intercept);
        out.r_squared = fe.r_squared;
    } else if (fp.r_squared == best) {
        out.regime = Regime::polynomial;
        out.alpha = -fp.slope;
        out.fitted_constant = std::exp(fp.intercept);
        out.r_squared = fp.r_squared;
    } else {
        out.regime = Regime::stretched;
        out.alpha = 0.5;
        out.beta = -fs.slope;
        out.fitted_constant = std::exp(fs.intercept);
        out.r_squared = fs.r_squared;
    }
    return out;
}

int regime_rank(Regime r) {
    switch (r) {
        case Regime::exponential: return 3;
        case Regime::stretched: return 2;
        case Regime::polynomial: return 1;
        default: return 0;
    }
}

std::string short_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

} // namespace

const char* density_method_name(DensityMethod m) {
    return m == DensityMethod::ulam ? "ulam" : "birkhoff";
}

DensityEstimate ulam_density(const PiecewiseMap& m, int bins, int max_power_iters) {
    require_bins(bins);
    Interval dom = map_domain(m);
    Transfer t = build_transfer(m, bins, dom, 1);

    std::vector<double> mass(bins, 1.0 / bins), next(bins);
    double residual = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_power_iters; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int i = 0; i < bins; ++i) {
            double mi = mass[i];
            if (mi == 0.0) continue;
            for (int k = t.ptr[i]; k < t.ptr[i + 1]; ++k) next[t.col[k]] += mi * t.val[k];
        }
        KahanSum diff, total;
        for (int i = 0; i < bins; ++i) {
            diff.add(std::abs(next[i] - mass[i]));
            total.add(next[i]);
        }
        residual = diff.value();
        double norm = total.value();
        for (int i = 0; i < bins; ++i) mass[i] = next[i] / norm;
        if (residual <= 1e-8) {
            DensityEstimate d;
            d.bins = bins;
            d.method = DensityMethod::ulam;
            d.residual = residual;
            d.support = dom;
            d.rho.resize(bins);
            double w = dom.length() / bins;
            for (int i = 0; i < bins; ++i) d.rho[i] = mass[i] / w;
            return d;
        }
    }
    throw NonConvergenceError(residual, max_power_iters);
}

DensityEstimate birkhoff_density(const PiecewiseMap& m, long orbit_length, int bins,
                                 long burn_in, const std::vector<std::uint64_t>& seeds,
                                 int threads) {
    require_bins(bins);
    if (seeds.empty()) throw ErgodicError("NeedSeeds", "at least one seed");
    Interval dom = map_domain(m);
    std::vector<std::vector<double>> counts(seeds.size());

    parallel_for(seeds.size(), threads, [&](size_t s) {
        auto gen = substream(seeds[s], 2);
        double x = dom.lo + dom.length() * uniform01(gen);
        for (long t = 0; t < burn_in; ++t) x = jitter_step(m, x, 1, gen, dom);
        auto& c = counts[s];
        c.assign(bins, 0.0);
        for (long t = 0; t < orbit_length; ++t) {
            c[bin_of(x, dom, bins)] += 1.0;
            x = jitter_step(m, x, 1, gen, dom);
        }
    });

    DensityEstimate d;
    d.bins = bins;
    d.method = DensityMethod::birkhoff;
    d.support = dom;
    d.rho.assign(bins, 0.0);
    double total = static_cast<double>(orbit_length) * seeds.size();
    double w = dom.length() / bins;
    for (int i = 0; i < bins; ++i) {
        KahanSum ci;
        for (const auto& c : counts) ci.add(c[i]);
        d.rho[i] = ci.value() / (total * w);
    }
    return d;
}

double density_l1_diff(const DensityEstimate& a, const DensityEstimate& b) {
    if (a.bins != b.bins) throw ErgodicError("BinMismatch", "densities use different bins");
    KahanSum s;
    double w = a.bin_width();
    for (int i = 0; i < a.bins; ++i) s.add(std::abs(a.rho[i] - b.rho[i]) * w);
    return s.value();
}

std::vector<double> density_cdf(const DensityEstimate& d) {
    std::vector<double> cdf(d.bins + 1, 0.0);
    KahanSum s;
    double w = d.bin_width();
    for (int i = 0; i < d.bins; ++i) {
        s.add(d.rho[i] * w);
        cdf[i + 1] = s.value();
    }
    return cdf;
}

double density_integrate(const DensityEstimate& d, const std::function<double(double)>& f) {
    KahanSum s;
    double w = d.bin_width();
    for (int i = 0; i < d.bins; ++i) {
        double x = d.support.lo + (i + 0.5) * w;
        s.add(d.rho[i] * w * f(x));
    }
    return s.value();
}

double density_quantile(const DensityEstimate& d, double u) {
    std::vector<double> cdf = density_cdf(d);
    double t = std::clamp(u, 0.0, 1.0) * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), t);
    int i = std::clamp(static_cast<int>(it - cdf.begin()) - 1, 0, d.bins - 1);
    double lo = cdf[i], hi = cdf[i + 1];
    double frac = hi > lo ? (t - lo) / (hi - lo) : 0.5;
    return d.support.lo + (i + frac) * d.bin_width();
}

LpTrend lp_mass_trend(const PiecewiseMap& m, double p, const std::vector<int>& bin_ladder) {
    if (p <= 1.0) throw ErgodicError("BadParams", "exponent p must exceed 1");
    if (bin_ladder.size() < 2 || !std::is_sorted(bin_ladder.begin(), bin_ladder.end()))
        throw ErgodicError("BadParams", "bin ladder must be increasing with >= 2 rungs");
    LpTrend t;
    t.p = p;
    for (int bins : bin_ladder) {
        DensityEstimate d = ulam_density(m, bins);
        KahanSum s;
        for (double r : d.rho) s.add(std::pow(r, p));
        t.bins.push_back(bins);
        t.mass.push_back(s.value() / bins);
    }
    double prev = t.mass[t.mass.size() - 2], last = t.mass.back();
    bool growing = true;
    for (size_t i = 1; i < t.mass.size(); ++i) growing = growing && t.mass[i] > t.mass[i - 1];
    if (std::abs(last - prev) < 0.10 * std::abs(prev))
        t.verdict = "bounded";
    else if (growing && t.mass.back() > 1.5 * t.mass.front())
        t.verdict = "diverging";
    else
        t.verdict = "indeterminate";
    return t;
}

Observable obs_coordinate() {
    return {"x", 1.0, [](double x) { return x; }};
}

Observable obs_sqrt_dist() {
    return {"sqrt_dist_half", 0.5, [](double x) { return std::sqrt(std::abs(x - 0.5)); }};
}

Observable obs_cos(int k) {
    if (k < 1) throw ErgodicError("BadParams", "frequency must be >= 1");
    return {"cos_2pi_" + std::to_string(k) + "x", 1.0,
            [k](double x) { return std::cos(2.0 * kPi * k * x); }};
}

Observable obs_bump(double center, double halfwidth) {
    return {"bump_" + short_number(center) + "_" + short_number(halfwidth), 1.0,
            [center, halfwidth](double x) {
                return std::clamp(2.0 - 2.0 * std::abs(x - center) / halfwidth, 0.0, 1.0);
            }};
}

Observable obs_coboundary(const PiecewiseMap& m) {
    return {"coboundary_sin", 1.0, [m](double x) {
                return std::sin(2.0 * kPi * iterate_value(m, x, 1)) - std::sin(2.0 * kPi * x);
            }};
}

std::vector<Observable> default_observables() {
    std::vector<Observable> v{obs_coordinate(), obs_sqrt_dist()};
    for (int k = 1; k <= 4; ++k) v.push_back(obs_cos(k));
    v.push_back(obs_bump(0.3, 0.1));
    return v;
}

Regime predicted_regime_from_gamma(const DiagTables& tables, double* rate) {
    int worst = 4;
    Regime regime = Regime::inconclusive;
    double worst_rate = 0.0;
    for (const auto& rec : tables.recs) {
        RegimeFit fit;
        try {
            std::vector<double> a(rec.gamma_raw.begin() + 1, rec.gamma_raw.begin() + 1 + rec.N);
            for (double& v : a) v = std::max(v, 1e-300);
            fit = classify_decay(a);
        } catch (const ErgodicError&) {
            fit.regime = Regime::inconclusive;
        }
        if (regime_rank(fit.regime) < worst) {
            worst = regime_rank(fit.regime);
            regime = fit.regime;
            worst_rate = fit.regime == Regime::polynomial ? fit.alpha : fit.beta;
        }
    }
    if (rate) *rate = worst_rate;
    return regime;
}

CorrelationReport correlation(const PiecewiseMap& m, const Observable& phi,
                              const Observable& psi, int n_max, long orbit_length,
                              const std::vector<std::uint64_t>& seeds,
                              const DiagTables* predict_from, int power, int threads) {
    CovSeries cs = covariance_series(m, phi, psi, n_max, orbit_length, seeds, power, threads);

    CorrelationReport rep;
    rep.phi_name = phi.name;
    rep.psi_name = psi.name;
    rep.phi_alpha = phi.holder_alpha;
    rep.psi_alpha = psi.holder_alpha;
    rep.power = power;
    rep.cov_signed = cs.mean;
    rep.SE = cs.se;
    rep.C.resize(cs.mean.size());
    for (size_t k = 0; k < cs.mean.size(); ++k) rep.C[k] = std::abs(cs.mean[k]);
    while (rep.resolved + 1 <= n_max && rep.C[rep.resolved + 1] > 3.0 * rep.SE[rep.resolved + 1])
        ++rep.resolved;
    if (predict_from) rep.predicted = predicted_regime_from_gamma(*predict_from);

    if (phi.name == psi.name) {
        KahanSum gk;
        gk.add(rep.cov_signed[0]);
        for (int k = 1; k <= n_max; ++k) {
            if (std::abs(rep.cov_signed[k]) <= rep.SE[k]) break;
            gk.add(2.0 * rep.cov_signed[k]);
        }
        rep.sigma2_green_kubo = gk.value();
    }

    if (rep.resolved < 5) throw NoiseFloorError(std::move(rep));
    rep.fit = fit_short_decay(rep.C, rep.resolved);
    return rep;
}

CLTReport clt_test(const PiecewiseMap& m, const Observable& phi, long block_n,
                   long samples, std::uint64_t seed, const DensityEstimate& density,
                   int power, int threads) {
    if (block_n < 1000) throw ErgodicError("BadParams", "block length must be >= 1000");
    if (samples < 10000) throw ErgodicError("BadParams", "need >= 10000 samples");

    CLTReport rep;
    rep.phi_name = phi.name;
    rep.block_n = block_n;
    rep.samples = samples;
    rep.mean_phi = density_integrate(density, phi.f);
    rep.var_phi = density_integrate(density, [&](double x) {
        double d = phi.f(x) - rep.mean_phi;
        return d * d;
    });

    Interval dom = map_domain(m);
    std::vector<double> cdf = density_cdf(density);
    double cdf_total = cdf.back();
    double w = density.bin_width();
    rep.S.assign(samples, 0.0);
    double rootn = std::sqrt(static_cast<double>(block_n));

    parallel_for(static_cast<size_t>(samples), threads, [&](size_t i) {
        auto gen = substream(seed, 0x10000 + i);
        double t = uniform01(gen) * cdf_total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), t);
        int b = std::clamp(static_cast<int>(it - cdf.begin()) - 1, 0, density.bins - 1);
        double frac = cdf[b + 1] > cdf[b] ? (t - cdf[b]) / (cdf[b + 1] - cdf[b]) : 0.5;
        double x = density.support.lo + (b + frac) * w;

        KahanSum acc;
        for (long j = 0; j < block_n; ++j) {
            acc.add(phi.f(x));
            x = jitter_step(m, x, power, gen, dom);
        }
        rep.S[i] = (acc.value() - block_n * rep.mean_phi) / rootn;
    });

    KahanSum sm;
    for (double s : rep.S) sm.add(s);
    double mean_S = sm.value() / samples;
    KahanSum sv;
    for (double s : rep.S) sv.add((s - mean_S) * (s - mean_S));
    rep.sigma_hat = std::sqrt(sv.value() / (samples - 1.0));
    rep.coboundary_flag = rep.sigma_hat * rep.sigma_hat < 1e-3 * rep.var_phi;

    std::vector<double> sorted = rep.S;
    std::sort(sorted.begin(), sorted.end());
    double sig = std::max(rep.sigma_hat, 1e-300);
    double ks = 0.0;
    for (long i = 0; i < samples; ++i) {
        double F = 0.5 * std::erfc(-sorted[i] / (sig * std::sqrt(2.0)));
        ks = std::max(ks, std::abs(F - (i + 1.0) / samples));
        ks = std::max(ks, std::abs(F - static_cast<double>(i) / samples));
    }
    rep.ks_statistic = ks;

    std::vector<std::uint64_t> gk_seeds;
    for (int s = 0; s < 6; ++s) gk_seeds.push_back(splitmix64(seed ^ (0xC17ull + s)));
    const int gk_lags = 32;
    CovSeries cs = covariance_series(m, phi, phi, gk_lags, 1000000, gk_seeds, power, threads);
    KahanSum gk;
    gk.add(cs.mean[0]);
    for (int k = 1; k <= gk_lags; ++k) {
        if (std::abs(cs.mean[k]) <= cs.se[k]) break;
        gk.add(2.0 * cs.mean[k]);
    }
    rep.sigma2_green_kubo = gk.value();
    return rep;
}

} // namespace ergodic
