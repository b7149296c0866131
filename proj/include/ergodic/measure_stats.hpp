#pragma once

// Empirical statistics of the invariant measure: acip density estimates
// (transfer-matrix fixed point and long-orbit histograms), L^p mass trends
// under bin refinement, correlation decay with regime fits, and central
// limit / Green-Kubo variance tests.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ergodic/inducer.hpp"
#include "ergodic/map_model.hpp"
#include "ergodic/orbit_diagnostics.hpp"

namespace ergodic {

enum class DensityMethod { ulam, birkhoff };
const char* density_method_name(DensityMethod m);

struct DensityEstimate {
    int bins = 0;
    std::vector<double> rho;   // density per unit length, constant on each bin
    DensityMethod method = DensityMethod::ulam;
    double residual = 0.0;     // L1 fixed-point residual (transfer matrix only)
    Interval support{0.0, 1.0};

    double bin_width() const { return (support.hi - support.lo) / bins; }
};

struct NonConvergenceError : ErgodicError {
    double residual;
    int iters;
    NonConvergenceError(double residual_, int iters_)
        : ErgodicError("NonConvergence",
                       "transfer-matrix power iteration still above the 1e-8 residual after " +
                           std::to_string(iters_) + " iterations"),
          residual(residual_), iters(iters_) {}
};

// Fixed density of the bin-to-bin transfer matrix (64 sample points per bin,
// mass split by image bin). Bins must be a power of two in [2^8, 2^16].
DensityEstimate ulam_density(const PiecewiseMap& m, int bins, int max_power_iters = 5000);

// Histogram of long orbits from random starts, averaged over seeds.
DensityEstimate birkhoff_density(const PiecewiseMap& m, long orbit_length, int bins,
                                 long burn_in, const std::vector<std::uint64_t>& seeds,
                                 int threads = 1);

// L1 distance of two piecewise-constant densities on the same support.
double density_l1_diff(const DensityEstimate& a, const DensityEstimate& b);

// Cumulative distribution at the bins+1 bin edges; starts at 0, ends at 1.
std::vector<double> density_cdf(const DensityEstimate& d);

// Midpoint quadrature of f against the density.
double density_integrate(const DensityEstimate& d, const std::function<double(double)>& f);

// Inverse CDF by linear interpolation within the located bin; u in [0,1).
double density_quantile(const DensityEstimate& d, double u);

struct LpTrend {
    double p = 0.0;
    std::vector<int> bins;
    std::vector<double> mass;  // sum rho_i^p / bins at each refinement
    std::string verdict;       // "bounded" | "diverging" | "indeterminate"
};

// Discrete L^p mass of the fixed density along a bin refinement ladder.
// Bounded when the last two values differ by < 10%; diverging when some
// refinement step grows the mass by > 50%.
LpTrend lp_mass_trend(const PiecewiseMap& m, double p, const std::vector<int>& bin_ladder);

// Named observable with a declared Holder exponent. The exponent is carried
// for reporting; no certification of the class is attempted.
struct Observable {
    std::string name;
    double holder_alpha = 1.0;
    std::function<double(double)> f;
};

Observable obs_coordinate();                          // x
Observable obs_sqrt_dist();                           // |x - 1/2|^{1/2}, exponent 1/2
Observable obs_cos(int k);                            // cos(2 pi k x), k >= 1
Observable obs_bump(double center, double halfwidth); // Lipschitz trapezoid bump
Observable obs_coboundary(const PiecewiseMap& m);     // sin(2 pi f(x)) - sin(2 pi x)
std::vector<Observable> default_observables();

struct CorrelationReport {
    std::string phi_name, psi_name;
    double phi_alpha = 1.0, psi_alpha = 1.0;
    int power = 1;                   // lag steps iterate f^power
    std::vector<double> C;           // |covariance| at lag n, n = 0..n_max
    std::vector<double> SE;          // standard error over seeds
    std::vector<double> cov_signed;  // signed covariances (Green-Kubo input)
    int resolved = 0;                // maximal prefix of lags with C_n > 3 SE_n
    RegimeFit fit;                   // decay regime over the resolved lags
    Regime predicted = Regime::inconclusive;
    double sigma2_green_kubo = 0.0;  // truncated at the noise floor; phi = psi only
};

// Raised when fewer than 5 lags clear their noise floor; the report carries
// the full data with the fit left unattempted.
struct NoiseFloorError : ErgodicError {
    CorrelationReport report;
    explicit NoiseFloorError(CorrelationReport r)
        : ErgodicError("NoiseFloor",
                       "only " + std::to_string(r.resolved) +
                           " correlation lags clear the noise floor; no fit attempted"),
          report(std::move(r)) {}
};

// Worst (slowest) decay regime of the gamma sequences across one-sided
// critical records; the mixing-rate prediction for Holder observables.
Regime predicted_regime_from_gamma(const DiagTables& tables, double* rate = nullptr);

// Time-average correlation estimate along one long orbit per seed, with
// mean subtraction, averaged over seeds. Lags iterate f^power. The decay
// regime is fitted on the maximal prefix of lags resolved above 3 SE.
CorrelationReport correlation(const PiecewiseMap& m, const Observable& phi,
                              const Observable& psi, int n_max, long orbit_length,
                              const std::vector<std::uint64_t>& seeds,
                              const DiagTables* predict_from = nullptr,
                              int power = 1, int threads = 1);

struct CLTReport {
    std::string phi_name;
    long block_n = 0;
    long samples = 0;
    double mean_phi = 0.0;            // density quadrature
    double var_phi = 0.0;             // density quadrature
    double sigma_hat = 0.0;           // std of the normalized block sums
    double ks_statistic = 0.0;        // against Normal(0, sigma_hat)
    double sigma2_green_kubo = 0.0;   // Var + 2 sum of autocovariances, noise-truncated
    bool coboundary_flag = false;     // sigma_hat^2 < 1e-3 Var(phi)
    std::vector<double> S;            // normalized block sums, sample order
};

// Normalized Birkhoff block sums S = (sum phi(f^j x) - n mean) / sqrt(n)
// from acip-distributed starts (inverse CDF of the density estimate). The
// Green-Kubo variance is estimated from orbit autocovariances on derived
// substreams of the same master seed.
CLTReport clt_test(const PiecewiseMap& m, const Observable& phi, long block_n,
                   long samples, std::uint64_t seed, const DensityEstimate& density,
                   int power = 1, int threads = 1);

} // namespace ergodic
