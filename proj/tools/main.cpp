// Command-line entry point: parses a map spec, runs one analysis subcommand
// (or the whole pipeline), and persists plot-ready CSV tables plus a JSON
// verdict. All output is deterministic for a fixed spec, seed and flags,
// independent of the thread count.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ergodic/families.hpp"
#include "ergodic/parallel.hpp"
#include "ergodic/pipeline.hpp"
#include "ergodic/rng.hpp"

namespace fs = std::filesystem;
using namespace ergodic;

namespace {

// ---------------------------------------------------------------- output ---

// Every floating-point value is serialized with 17 significant digits so the
// exact double round-trips through the text artifacts.
std::string fmt17(double v) {
    if (std::isnan(v) || std::isinf(v)) return "null";
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

// Minimal ordered JSON writer; field order is fixed by call order, which
// keeps byte-identical output across runs.
struct Json {
    std::string s;
    bool need_comma = false;

    void sep() {
        if (need_comma) s += ',';
        need_comma = false;
    }
    Json& obj() { sep(); s += '{'; return *this; }
    Json& arr() { sep(); s += '['; return *this; }
    Json& end_obj() { s += '}'; need_comma = true; return *this; }
    Json& end_arr() { s += ']'; need_comma = true; return *this; }
    Json& key(const std::string& k) { sep(); s += '"'; s += escape(k); s += "\":"; return *this; }
    Json& v(double x) { sep(); s += fmt17(x); need_comma = true; return *this; }
    Json& v(int x) { sep(); s += std::to_string(x); need_comma = true; return *this; }
    Json& v(long x) { sep(); s += std::to_string(x); need_comma = true; return *this; }
    Json& v(long long x) { sep(); s += std::to_string(x); need_comma = true; return *this; }
    Json& v(std::uint64_t x) { sep(); s += std::to_string(x); need_comma = true; return *this; }
    Json& v(bool x) { sep(); s += x ? "true" : "false"; need_comma = true; return *this; }
    Json& v(const char* x) { return v(std::string(x)); }
    Json& v(const std::string& x) {
        sep();
        s += '"';
        s += escape(x);
        s += '"';
        need_comma = true;
        return *this;
    }
    Json& interval(const Interval& iv) { arr(); v(iv.lo); v(iv.hi); return end_arr(); }

    static std::string escape(const std::string& in) {
        std::string out;
        for (char c : in) {
            switch (c) {
                case '"': out += "\\\""; break;
                case '\\': out += "\\\\"; break;
                case '\n': out += "\\n"; break;
                case '\t': out += "\\t"; break;
                default:
                    if (static_cast<unsigned char>(c) < 0x20) {
                        char b[8];
                        std::snprintf(b, sizeof b, "\\u%04x", c);
                        out += b;
                    } else {
                        out += c;
                    }
            }
        }
        return out;
    }
};

// Recursive emitter for configuration subtrees loaded from a spec file.
void emit_config(Json& j, const nlohmann::json& n) {
    using t = nlohmann::json::value_t;
    switch (n.type()) {
        case t::object:
            j.obj();
            for (auto it = n.begin(); it != n.end(); ++it) {
                j.key(it.key());
                emit_config(j, it.value());
            }
            j.end_obj();
            break;
        case t::array:
            j.arr();
            for (const auto& e : n) emit_config(j, e);
            j.end_arr();
            break;
        case t::string: j.v(n.get<std::string>()); break;
        case t::boolean: j.v(n.get<bool>()); break;
        case t::number_integer: j.v(n.get<long long>()); break;
        case t::number_unsigned: j.v(n.get<std::uint64_t>()); break;
        case t::number_float: j.v(n.get<double>()); break;
        default: j.sep(); j.s += "null"; j.need_comma = true;
    }
}

void write_atomic(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f << content;
        f.flush();
        if (!f) throw ErgodicError("WriteFailed", "cannot write " + p.string());
    }
    fs::rename(tmp, p);
}

void write_json(const fs::path& p, Json& j) {
    j.s += '\n';
    write_atomic(p, j.s);
}

// Numeric table written as CSV, or as a columns/rows JSON object when the
// run was configured with --format json.
struct Table {
    std::vector<std::string> cols;
    std::vector<std::vector<double>> rows;

    void row(std::initializer_list<double> vals) { rows.emplace_back(vals); }
};

void write_table(const fs::path& dir, const std::string& name, const Table& t,
                 const std::string& format) {
    if (format == "json") {
        Json j;
        j.obj().key("columns").arr();
        for (const auto& c : t.cols) j.v(c);
        j.end_arr().key("rows").arr();
        for (const auto& r : t.rows) {
            j.arr();
            for (double x : r) j.v(x);
            j.end_arr();
        }
        j.end_arr().end_obj();
        write_json(dir / (name + ".json"), j);
        return;
    }
    std::string s;
    for (size_t i = 0; i < t.cols.size(); ++i) {
        if (i) s += ',';
        s += t.cols[i];
    }
    s += '\n';
    for (const auto& r : t.rows) {
        for (size_t i = 0; i < r.size(); ++i) {
            if (i) s += ',';
            // CSV keeps inf/nan spelled out rather than null.
            char b[40];
            std::snprintf(b, sizeof b, "%.17g", r[i]);
            s += b;
        }
        s += '\n';
    }
    write_atomic(dir / (name + ".csv"), s);
}

// ---------------------------------------------------------------- errors ---

int exit_code_for(const std::string& code) {
    // 3 = a numerical budget was exhausted; 2 = the input or a precondition
    // was rejected.
    if (code == "LeakBudgetExceeded" || code == "NonConvergence" || code == "NoiseFloor" ||
        code == "DensityFailure" || code == "NoFeasibleDelta")
        return 3;
    return 2;
}

void error_to_stderr(const std::string& code, const std::string& message) {
    Json j;
    j.obj().key("error").v(code).key("message").v(message).end_obj();
    std::fprintf(stderr, "%s\n", j.s.c_str());
}

// ---------------------------------------------------------------- config ---

struct Common {
    std::string map_path;
    std::string outdir = "out";
    std::string format = "csv";
    std::uint64_t seed = 1;
    int threads = 0;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--map", c.map_path, "map spec JSON file")->required();
    sub->add_option("--out", c.outdir, "output directory")->capture_default_str();
    sub->add_option("--seed", c.seed, "master seed; all randomness derives from it")
        ->capture_default_str();
    sub->add_option("--threads", c.threads,
                    "worker threads; 0 uses ERGODIC_INTERVAL_THREADS, then hardware")
        ->capture_default_str();
    sub->add_option("--format", c.format, "table format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
}

Observable obs_by_name(const std::string& name, const PiecewiseMap& m) {
    if (name == "x") return obs_coordinate();
    if (name == "sqrt_dist") return obs_sqrt_dist();
    if (name == "cos1") return obs_cos(1);
    if (name == "cos2") return obs_cos(2);
    if (name == "cos3") return obs_cos(3);
    if (name == "cos4") return obs_cos(4);
    if (name == "bump") return obs_bump(0.3, 0.1);
    if (name == "coboundary") return obs_coboundary(m);
    throw ErgodicError("BadParams",
                       "unknown observable '" + name +
                           "'; use x, sqrt_dist, cos1..cos4, bump or coboundary");
}

Interval domain_of(const PiecewiseMap& m) {
    return {m.branches.front().domain.lo, m.branches.back().domain.hi};
}

// ------------------------------------------------------------- sections ----

void emit_regime_fit(Json& j, const RegimeFit& f) {
    j.obj()
        .key("regime").v(regime_name(f.regime))
        .key("alpha").v(f.alpha)
        .key("beta").v(f.beta)
        .key("r_squared").v(f.r_squared)
        .key("fitted_constant").v(f.fitted_constant)
        .end_obj();
}

void emit_tail_verdict(Json& j, const TailVerdict& t) {
    j.obj()
        .key("measured").v(tail_regime_name(t.measured))
        .key("predicted").v(tail_regime_name(t.predicted))
        .key("measured_rate").v(t.measured_rate)
        .key("predicted_rate").v(t.predicted_rate)
        .key("match").v(t.match)
        .end_obj();
}

void emit_distortion(Json& j, const DistortionCheck& d) {
    j.obj()
        .key("beta_hat").v(d.beta_hat)
        .key("C_hat").v(d.C_hat)
        .key("pass").v(d.pass)
        .key("trivial").v(d.trivial)
        .key("envelope_coverage").v(d.envelope_coverage)
        .key("pairs_deep").v(d.pairs_deep)
        .end_obj();
}

void emit_correlation(Json& j, const CorrelationReport& r, bool noise_floor) {
    j.obj()
        .key("phi").v(r.phi_name)
        .key("psi").v(r.psi_name)
        .key("power").v(r.power)
        .key("resolved").v(r.resolved)
        .key("noise_floor").v(noise_floor)
        .key("predicted").v(regime_name(r.predicted))
        .key("measured").v(regime_name(r.fit.regime))
        .key("match").v(!noise_floor && r.fit.regime != Regime::inconclusive &&
                        r.fit.regime == r.predicted)
        .key("sigma2_green_kubo").v(r.sigma2_green_kubo)
        .key("fit");
    emit_regime_fit(j, r.fit);
    j.end_obj();
}

void emit_clt(Json& j, const CLTReport& c) {
    j.obj()
        .key("phi").v(c.phi_name)
        .key("block_n").v(c.block_n)
        .key("samples").v(c.samples)
        .key("mean_phi").v(c.mean_phi)
        .key("var_phi").v(c.var_phi)
        .key("sigma_hat").v(c.sigma_hat)
        .key("sigma2").v(c.sigma_hat * c.sigma_hat)
        .key("ks_statistic").v(c.ks_statistic)
        .key("ks_critical_1pct").v(1.628 / std::sqrt(static_cast<double>(c.samples)))
        .key("sigma2_green_kubo").v(c.sigma2_green_kubo)
        .key("coboundary_flag").v(c.coboundary_flag)
        .end_obj();
}

Table correlation_table(const CorrelationReport& r) {
    Table t;
    t.cols = {"n", "C", "SE", "cov"};
    for (size_t n = 0; n < r.C.size(); ++n)
        t.row({static_cast<double>(n), r.C[n], r.SE[n], r.cov_signed[n]});
    return t;
}

Table clt_quantile_table(const CLTReport& c) {
    std::vector<double> sorted = c.S;
    std::sort(sorted.begin(), sorted.end());
    Table t;
    t.cols = {"q", "S_q"};
    for (int i = 0; i <= 100; ++i) {
        size_t idx = static_cast<size_t>(std::llround(i / 100.0 * (sorted.size() - 1)));
        t.row({i / 100.0, sorted[idx]});
    }
    return t;
}

Table density_table(const DensityEstimate& d) {
    Table t;
    t.cols = {"bin_lo", "rho"};
    for (int i = 0; i < d.bins; ++i) t.row({d.support.lo + i * d.bin_width(), d.rho[i]});
    return t;
}

Table diag_table(const CriticalOrbitRecord& rec) {
    Table t;
    t.cols = {"n", "orbit", "log_deriv", "dist", "gamma", "gamma_raw", "dmin",
              "S1_partial", "S2_partial"};
    for (int n = 1; n <= rec.N; ++n)
        t.row({static_cast<double>(n), rec.orbit[n], rec.log_deriv[n], rec.dist[n], rec.gamma[n],
               rec.gamma_raw[n], rec.dmin[n], rec.S1_partial[n], rec.S2_partial[n]});
    return t;
}

std::string diag_name(const CriticalOrbitRecord& rec) {
    return "diag_c" + std::to_string(rec.critical_index) + "_" + side_name(rec.side);
}

void emit_diag_summary(Json& j, const DiagTables& tables,
                       const std::vector<SummabilityVerdict>& verdicts) {
    j.arr();
    for (size_t i = 0; i < tables.recs.size(); ++i) {
        const auto& rec = tables.recs[i];
        RegimeFit fit;
        try {
            std::vector<double> a(rec.gamma_raw.begin() + 1, rec.gamma_raw.begin() + 1 + rec.N);
            fit = classify_decay(a);
        } catch (const ErgodicError&) {
        }
        j.obj()
            .key("critical_index").v(rec.critical_index)
            .key("side").v(side_name(rec.side))
            .key("l_start").v(rec.l_start)
            .key("table").v(diag_name(rec))
            .key("S1").v(verdict_name(verdicts[i].S1))
            .key("S2").v(verdict_name(verdicts[i].S2))
            .key("gamma_fit");
        emit_regime_fit(j, fit);
        j.end_obj();
    }
    j.end_arr();
}

Table q_table(const FullMarkovMap& fm) {
    Table t;
    t.cols = {"left", "right", "R"};
    for (const auto& e : fm.Q) t.row({e.w_tilde.lo, e.w_tilde.hi, static_cast<double>(e.R)});
    return t;
}

Table r_tail_table(const FullMarkovMap& fm) {
    std::vector<double> tail = return_tail(fm);
    Table t;
    t.cols = {"n", "tail"};
    for (size_t n = 0; n < tail.size(); ++n) t.row({static_cast<double>(n), tail[n]});
    return t;
}

Table distortion_table(const DistortionCheck& d) {
    Table t;
    t.cols = {"s", "ratio_minus_1"};
    for (const auto& p : d.pairs) t.row({static_cast<double>(p.s), p.ratio_minus_1});
    return t;
}

void emit_markov_verdict(Json& j, const FullMarkovMap& fm, const TailVerdict& tv,
                         const DistortionCheck& dc, const OmegaChoice& oc) {
    j.obj()
        .key("schema").v(1)
        .key("regime_measured").v(tail_regime_name(tv.measured))
        .key("regime_predicted").v(tail_regime_name(tv.predicted))
        .key("match").v(tv.match)
        .key("gcd_R").v(fm.gcd_R)
        .key("t0").v(fm.t0)
        .key("omega").interval(fm.omega)
        .key("elements").v(fm.Q.size())
        .key("coverage").v(fm.coverage)
        .key("unresolved_mass").v(fm.unresolved_mass)
        .key("max_R").v(fm.max_R)
        .key("xi").v(fm.xi)
        .key("max_endpoint_residual").v(fm.max_residual)
        .key("windows").v(oc.windows.size())
        .key("tail");
    emit_tail_verdict(j, tv);
    j.key("distortion");
    emit_distortion(j, dc);
    j.end_obj();
}

// ---------------------------------------------------------- subcommands ----

void run_validate(const Common& c) {
    Json j;
    try {
        PiecewiseMap m = load_map_file(c.map_path);
        MapValidation v = validate_map(m);
        auto orders = verify_orders(m);
        SchwarzianReport sch = schwarzian_check(m);
        j.obj().key("schema").v(1).key("ok").v(v.ok).key("violations").arr();
        for (const auto& s : v.violations) j.v(s);
        j.end_arr()
            .key("branches").v(m.branches.size())
            .key("continuous").v(m.continuous)
            .key("critical").arr();
        for (size_t i = 0; i < m.critical.size(); ++i) {
            const auto& cp = m.critical[i];
            bool order_ok = true;
            for (const auto& oc : orders)
                if (oc.critical_index == static_cast<int>(i) && !oc.pass) order_ok = false;
            j.obj()
                .key("c").v(cp.c)
                .key("l_minus").v(cp.l_minus)
                .key("l_plus").v(cp.l_plus)
                .key("order_check").v(order_ok)
                .end_obj();
        }
        j.end_arr().key("schwarzian");
        j.obj()
            .key("pass").v(sch.pass)
            .key("weak").v(sch.weak)
            .key("max_sample").v(sch.max_sample)
            .end_obj();
        j.end_obj();
        write_json(fs::path(c.outdir) / "verdict.json", j);
    } catch (const InvalidMapError&) {
        // Still record the failure before the error propagates to stderr.
        throw;
    }
}

void run_diagnose(const Common& c, int horizon) {
    PiecewiseMap m = load_map_file(c.map_path);
    DiagTables tables = build_tables(m, horizon);
    std::vector<SummabilityVerdict> verdicts;
    for (const auto& rec : tables.recs) verdicts.push_back(summability_verdict(rec));
    for (const auto& rec : tables.recs)
        write_table(c.outdir, diag_name(rec), diag_table(rec), c.format);
    Json j;
    j.obj().key("schema").v(1).key("horizon").v(horizon).key("records");
    emit_diag_summary(j, tables, verdicts);
    j.end_obj();
    write_json(fs::path(c.outdir) / "verdict.json", j);
}

void emit_cycles(Json& j, const std::vector<IntervalCycle>& cycles) {
    j.arr();
    for (const auto& cy : cycles) {
        j.obj().key("period").v(cy.period).key("minimal").v(cy.minimal).key("intervals").arr();
        for (const auto& iv : cy.intervals) j.interval(iv);
        j.end_arr().end_obj();
    }
    j.end_arr();
}

void run_cycles(const Common& c, int max_period) {
    PiecewiseMap m = load_map_file(c.map_path);
    CycleSearchOptions opt;
    opt.max_period = max_period;
    std::vector<IntervalCycle> cycles;
    if (m.continuous) cycles = find_minimal_cycles(m, opt);
    Json j;
    j.obj()
        .key("schema").v(1)
        .key("continuous").v(m.continuous)
        .key("count").v(cycles.size())
        .key("cycles");
    emit_cycles(j, cycles);
    j.end_obj();
    write_json(fs::path(c.outdir) / "verdict.json", j);
}

void run_renorm(const Common& c, int period, int max_period) {
    PiecewiseMap m = load_map_file(c.map_path);
    Interval iv = domain_of(m);
    int chosen = 1;
    if (period > 0) {
        CycleSearchOptions opt;
        std::vector<IntervalCycle> cycles;
        if (m.continuous) cycles = find_minimal_cycles(m, opt);
        bool found = false;
        for (const auto& cy : cycles)
            if (cy.period == period) {
                iv = cy.intervals.front();
                chosen = period;
                found = true;
            }
        if (!found)
            throw ErgodicError("BadParams",
                               "no detected cycle has period " + std::to_string(period));
    } else {
        CycleSearchOptions opt;
        opt.max_period = max_period;
        std::vector<IntervalCycle> cycles;
        if (m.continuous) cycles = find_minimal_cycles(m, opt);
        for (const auto& cy : cycles)
            if (cy.minimal && cy.period > chosen) {
                chosen = cy.period;
                iv = cy.intervals.front();
            }
    }
    // Validate the chart before emitting the spec.
    renormalize_interval(m, iv, chosen);
    Json j;
    j.obj().key("family").v("renorm").key("params").obj();
    j.key("base");
    emit_config(j, m.config);
    j.key("interval").interval(iv).key("period").v(chosen).end_obj().end_obj();
    write_json(fs::path(c.outdir) / "renorm.json", j);
}

void run_induce(const Common& c, double j_lo, double j_hi) {
    PiecewiseMap m = load_map_file(c.map_path);
    DiagTables tables = build_tables(m);
    InducerParams P = select_delta(m, tables);
    InducedMap im = build_induced(m, {j_lo, j_hi}, P, tables, c.threads);

    Table el;
    el.cols = {"lo", "hi", "p_hat", "image_lo", "image_hi", "distortion"};
    for (const auto& e : im.elements)
        el.row({e.w.lo, e.w.hi, static_cast<double>(e.p_hat), e.image.lo, e.image.hi,
                e.distortion});
    write_table(c.outdir, "induced_elements", el, c.format);

    std::vector<double> tail = tail_distribution(im);
    Table tt;
    tt.cols = {"n", "tail"};
    for (size_t n = 0; n < tail.size(); ++n) tt.row({static_cast<double>(n), tail[n]});
    write_table(c.outdir, "induced_tail", tt, c.format);

    RegimeFit fit;
    try {
        std::vector<double> positive;
        for (double t : tail)
            if (t > 0.0) positive.push_back(t);
        fit = classify_decay(positive);
    } catch (const ErgodicError&) {
    }

    Json j;
    j.obj()
        .key("schema").v(1)
        .key("J").interval(im.J)
        .key("delta").v(P.delta)
        .key("delta1").v(P.delta1)
        .key("delta_prime").v(P.delta_prime)
        .key("delta_dprime").v(P.delta_dprime)
        .key("eps").v(P.eps)
        .key("elements").v(im.elements.size())
        .key("deep").v(im.n_deep)
        .key("shallow").v(im.n_shallow)
        .key("unresolved_mass").v(im.unresolved_mass)
        .key("unresolved_fraction").v(im.unresolved_mass / im.J.length())
        .key("K_eps").v(im.K_eps)
        .key("tail_fit");
    emit_regime_fit(j, fit);
    j.end_obj();
    write_json(fs::path(c.outdir) / "verdict.json", j);
}

void run_markov(const Common& c, double hcap) {
    PiecewiseMap m = load_map_file(c.map_path);
    DiagTables tables = build_tables(m);
    InducerParams P = select_delta(m, tables);
    P.w_min = 1e-14;
    OmegaChoice oc = choose_omega(m, domain_of(m), 0, P.delta_prime, hcap);
    FullMarkovMap fm = build_full_markov(m, oc, P, tables, c.threads);
    TailVerdict tv = compare_return_tail(fm, tables);
    DistortionCheck dc = separation_distortion_check(fm, m, 30, 4000,
                                                     splitmix64(c.seed ^ streams::distortion));

    write_table(c.outdir, "q_elements", q_table(fm), c.format);
    write_table(c.outdir, "r_tails", r_tail_table(fm), c.format);
    write_table(c.outdir, "distortion_pairs", distortion_table(dc), c.format);
    Json j;
    emit_markov_verdict(j, fm, tv, dc, oc);
    write_json(fs::path(c.outdir) / "verdict.json", j);
}

void run_density(const Common& c, int bins, long points) {
    PiecewiseMap m = load_map_file(c.map_path);
    DensityEstimate du = ulam_density(m, bins);
    DensityEstimate db = birkhoff_density(m, points, bins, 10000,
                                          derived_seeds(c.seed, streams::birkhoff, 4), c.threads);
    write_table(c.outdir, "density_ulam", density_table(du), c.format);
    write_table(c.outdir, "density_birkhoff", density_table(db), c.format);
    Json j;
    j.obj()
        .key("schema").v(1)
        .key("bins").v(bins)
        .key("ulam_residual").v(du.residual)
        .key("birkhoff_points").v(points)
        .key("l1_diff").v(density_l1_diff(du, db))
        .key("support").interval(du.support)
        .end_obj();
    write_json(fs::path(c.outdir) / "verdict.json", j);
}

void run_correlations(const Common& c, const std::string& phi_name, const std::string& psi_name,
                      int n_max, long orbit, int nseeds, int power) {
    PiecewiseMap m = load_map_file(c.map_path);
    DiagTables tables = build_tables(m);
    Observable phi = obs_by_name(phi_name, m);
    Observable psi = obs_by_name(psi_name, m);
    auto seeds = derived_seeds(c.seed, streams::corr, nseeds);
    bool noise_floor = false;
    CorrelationReport rep;
    try {
        rep = correlation(m, phi, psi, n_max, orbit, seeds, &tables, power, c.threads);
    } catch (const NoiseFloorError& e) {
        rep = e.report;
        noise_floor = true;
    }
    write_table(c.outdir, "correlations", correlation_table(rep), c.format);
    Json j;
    j.obj().key("schema").v(1).key("correlation");
    emit_correlation(j, rep, noise_floor);
    j.end_obj();
    write_json(fs::path(c.outdir) / "verdict.json", j);
    if (noise_floor)
        throw NoiseFloorError(std::move(rep));
}

void run_clt(const Common& c, const std::string& phi_name, long block, long samples, int power) {
    PiecewiseMap m = load_map_file(c.map_path);
    Observable phi = obs_by_name(phi_name, m);
    DensityEstimate d = ulam_density(m, 4096);
    CLTReport rep = clt_test(m, phi, block, samples, splitmix64(c.seed ^ streams::clt), d,
                             power, c.threads);
    write_table(c.outdir, "clt_quantiles", clt_quantile_table(rep), c.format);
    Json j;
    j.obj().key("schema").v(1).key("clt");
    emit_clt(j, rep);
    j.end_obj();
    write_json(fs::path(c.outdir) / "verdict.json", j);
}

void run_full_report_cmd(const Common& c) {
    PiecewiseMap m = load_map_file(c.map_path);
    PipelineOptions opt;
    opt.seed = c.seed;
    opt.threads = c.threads;
    FullReport rep = run_full_report(m, opt);

    for (const auto& rec : rep.tables.recs)
        write_table(c.outdir, diag_name(rec), diag_table(rec), c.format);
    write_table(c.outdir, "q_elements", q_table(rep.markov), c.format);
    write_table(c.outdir, "r_tails", r_tail_table(rep.markov), c.format);
    write_table(c.outdir, "distortion_pairs", distortion_table(rep.distortion), c.format);
    write_table(c.outdir, "density_ulam", density_table(rep.density_ulam), c.format);
    write_table(c.outdir, "density_birkhoff", density_table(rep.density_birkhoff), c.format);
    write_table(c.outdir, "correlations", correlation_table(rep.corr), c.format);
    write_table(c.outdir, "clt_quantiles", clt_quantile_table(rep.clt), c.format);

    std::string family = m.config.is_object() && m.config.contains("family")
                             ? m.config["family"].get<std::string>()
                             : "unknown";
    Json j;
    j.obj()
        .key("schema").v(1)
        .key("family").v(family)
        .key("seed").v(c.seed)
        .key("predicted").v(regime_name(rep.verdict.predicted))
        .key("measured").v(regime_name(rep.verdict.measured))
        .key("match").v(rep.verdict.match)
        .key("noise_floor").v(rep.verdict.noise_floor)
        .key("period").v(rep.period)
        .key("cycle_interval").interval(rep.cycle_interval)
        .key("gcd_R").v(rep.markov.gcd_R)
        .key("t0").v(rep.markov.t0)
        .key("omega").interval(rep.markov.omega)
        .key("diagnostics");
    emit_diag_summary(j, rep.tables, rep.summability);
    j.key("cycles");
    emit_cycles(j, rep.cycles);
    j.key("induced");
    j.obj()
        .key("elements").v(rep.induced.elements.size())
        .key("unresolved_fraction").v(rep.induced.unresolved_mass / rep.induced.J.length())
        .key("delta").v(rep.params.delta)
        .key("delta_prime").v(rep.params.delta_prime)
        .end_obj();
    j.key("markov");
    emit_markov_verdict(j, rep.markov, rep.tail, rep.distortion, rep.omega);
    j.key("tower");
    j.obj()
        .key("elements").v(rep.tower.elements.size())
        .key("levels").v(rep.tower.level_mass.size())
        .key("total_mass").v(rep.tower.total_mass)
        .end_obj();
    j.key("density");
    j.obj()
        .key("bins").v(rep.density_ulam.bins)
        .key("ulam_residual").v(rep.density_ulam.residual)
        .key("l1_diff").v(density_l1_diff(rep.density_ulam, rep.density_birkhoff))
        .end_obj();
    j.key("correlation");
    emit_correlation(j, rep.corr, rep.verdict.noise_floor);
    j.key("clt");
    emit_clt(j, rep.clt);
    j.end_obj();
    write_json(fs::path(c.outdir) / "verdict.json", j);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"statistics of piecewise-smooth interval maps: critical-orbit diagnostics, "
                 "induced Markov structures, invariant densities, correlations and the CLT"};
    app.require_subcommand(1);

    Common c;

    auto* s_validate = app.add_subcommand("validate", "check a map spec against the model");
    add_common(s_validate, c);
    s_validate->callback([&] { run_validate(c); });

    int horizon = 200;
    auto* s_diag = app.add_subcommand("diagnose", "critical-orbit gamma/d tables and verdicts");
    add_common(s_diag, c);
    s_diag->add_option("--horizon", horizon, "orbit length")->capture_default_str();
    s_diag->callback([&] { run_diagnose(c, horizon); });

    int max_period = 32;
    auto* s_cycles = app.add_subcommand("cycles", "minimal interval cycles");
    add_common(s_cycles, c);
    s_cycles->add_option("--max-period", max_period, "search bound")->capture_default_str();
    s_cycles->callback([&] { run_cycles(c, max_period); });

    int renorm_period = 0;
    auto* s_renorm = app.add_subcommand(
        "renorm", "emit the renormalized map as a spec usable by every other subcommand");
    add_common(s_renorm, c);
    s_renorm->add_option("--period", renorm_period,
                         "cycle period to renormalize to; 0 picks the deepest minimal cycle")
        ->capture_default_str();
    s_renorm->callback([&] { run_renorm(c, renorm_period, max_period); });

    std::vector<double> j_range{0.0, 1.0};
    auto* s_induce = app.add_subcommand("induce", "first-large-scale induced Markov map");
    add_common(s_induce, c);
    s_induce->add_option("--J", j_range, "starting interval lo,hi")
        ->expected(2)
        ->delimiter(',')
        ->required();
    s_induce->callback([&] { run_induce(c, j_range[0], j_range[1]); });

    double hcap = 0.4;
    auto* s_markov = app.add_subcommand("markov", "full-return Markov partition and tower checks");
    add_common(s_markov, c);
    s_markov->add_option("--hcap", hcap, "half-width cap for the common image Omega")
        ->capture_default_str();
    s_markov->callback([&] { run_markov(c, hcap); });

    int bins = 4096;
    long points = 1000000;
    auto* s_density = app.add_subcommand("density", "invariant density estimates");
    add_common(s_density, c);
    s_density->add_option("--bins", bins, "histogram bins, a power of two")->capture_default_str();
    s_density->add_option("--points", points, "orbit points per seed")->capture_default_str();
    s_density->callback([&] { run_density(c, bins, points); });

    std::string phi = "sqrt_dist", psi = "sqrt_dist";
    int n_max = 32, nseeds = 8, power = 1;
    long orbit = 1000000;
    auto* s_corr = app.add_subcommand("correlations", "decay of correlations with regime fit");
    add_common(s_corr, c);
    s_corr->add_option("--phi", phi, "first observable")->capture_default_str();
    s_corr->add_option("--psi", psi, "second observable")->capture_default_str();
    s_corr->add_option("--nmax", n_max, "maximal lag")->capture_default_str();
    s_corr->add_option("--orbit", orbit, "orbit length per seed")->capture_default_str();
    s_corr->add_option("--nseeds", nseeds, "independent orbits")->capture_default_str();
    s_corr->add_option("--power", power, "iterate f^power per lag step")->capture_default_str();
    s_corr->callback([&] { run_correlations(c, phi, psi, n_max, orbit, nseeds, power); });

    std::string clt_phi = "x";
    long block = 1000, samples = 10000;
    int clt_power = 1;
    auto* s_clt = app.add_subcommand("clt", "central-limit test on Birkhoff block sums");
    add_common(s_clt, c);
    s_clt->add_option("--phi", clt_phi, "observable")->capture_default_str();
    s_clt->add_option("--block", block, "block length n")->capture_default_str();
    s_clt->add_option("--samples", samples, "number of block sums")->capture_default_str();
    s_clt->add_option("--power", clt_power, "iterate f^power per step")->capture_default_str();
    s_clt->callback([&] { run_clt(c, clt_phi, block, samples, clt_power); });

    auto* s_full = app.add_subcommand("full-report", "the whole pipeline with one verdict");
    add_common(s_full, c);
    s_full->callback([&] { run_full_report_cmd(c); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ErgodicError& e) {
        error_to_stderr(e.code, e.what());
        return exit_code_for(e.code);
    } catch (const std::exception& e) {
        error_to_stderr("Internal", e.what());
        return 2;
    }
    return 0;
}
