#include "ergodic/pipeline.hpp"

#include <algorithm>

#include "ergodic/rng.hpp"

namespace ergodic {

namespace {

// The cycle the analysis renormalizes to: the minimal cycle of the largest
// period, i.e. the deepest renormalization level detected.
const IntervalCycle* pick_cycle(const std::vector<IntervalCycle>& cycles) {
    const IntervalCycle* best = nullptr;
    for (const auto& c : cycles)
        if (c.minimal && (!best || c.period > best->period)) best = &c;
    return best;
}

} // namespace

std::vector<std::uint64_t> derived_seeds(std::uint64_t master, std::uint64_t purpose,
                                         int count) {
    std::vector<std::uint64_t> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(splitmix64(master ^ splitmix64(purpose ^ (0x51ull + i))));
    return out;
}

FullReport run_full_report(const PiecewiseMap& m, const PipelineOptions& opt) {
    FullReport rep;

    rep.tables = build_tables(m, opt.diag_horizon);
    for (const auto& rec : rep.tables.recs) rep.summability.push_back(summability_verdict(rec));

    CycleSearchOptions copt;
    copt.max_period = opt.max_cycle_period;
    if (m.continuous) rep.cycles = find_minimal_cycles(m, copt);
    const IntervalCycle* cyc = pick_cycle(rep.cycles);
    if (cyc && cyc->period > 1) {
        Renormalization r = renormalize(m, *cyc);
        rep.period = r.period;
        rep.cycle_interval = r.interval;
        rep.analyzed = std::move(r.map);
        rep.analyzed_tables = build_tables(rep.analyzed, opt.diag_horizon);
    } else {
        rep.period = 1;
        Interval dom{m.branches.front().domain.lo, m.branches.back().domain.hi};
        rep.cycle_interval = dom;
        rep.analyzed = m;
        rep.analyzed_tables = rep.tables;
    }
    const PiecewiseMap& g = rep.analyzed;
    Interval dom{g.branches.front().domain.lo, g.branches.back().domain.hi};

    rep.params = select_delta(g, rep.analyzed_tables);
    rep.params.w_min = opt.markov_w_min;
    rep.induced = build_induced(g, dom, rep.params, rep.analyzed_tables, opt.threads);

    rep.omega = choose_omega(g, dom, 0, rep.params.delta_prime, opt.omega_hcap);
    rep.markov = build_full_markov(g, rep.omega, rep.params, rep.analyzed_tables, opt.threads);
    rep.tail = compare_return_tail(rep.markov, rep.analyzed_tables);
    rep.distortion = separation_distortion_check(rep.markov, g, opt.distortion_depth,
                                                 opt.distortion_samples,
                                                 splitmix64(opt.seed ^ streams::distortion));
    AffineConj conj{rep.cycle_interval.length(), rep.cycle_interval.lo};
    rep.tower = build_tower(rep.markov, 1, conj);

    rep.density_ulam = ulam_density(g, opt.bins);
    rep.density_birkhoff =
        birkhoff_density(g, opt.birkhoff_points, opt.bins, opt.birkhoff_burn,
                         derived_seeds(opt.seed, streams::birkhoff, opt.birkhoff_seeds),
                         opt.threads);

    int power = static_cast<int>(std::max<long long>(rep.markov.gcd_R, 1));
    try {
        rep.corr = correlation(g, obs_sqrt_dist(), obs_sqrt_dist(), opt.corr_n_max,
                               opt.corr_orbit, derived_seeds(opt.seed, streams::corr, opt.corr_seeds),
                               &rep.analyzed_tables, power, opt.threads);
    } catch (const NoiseFloorError& e) {
        rep.corr = e.report;
        rep.verdict.noise_floor = true;
    }
    rep.clt = clt_test(g, obs_coordinate(), opt.clt_block, opt.clt_samples,
                       splitmix64(opt.seed ^ streams::clt), rep.density_ulam, power, opt.threads);

    rep.verdict.predicted = rep.corr.predicted;
    rep.verdict.measured = rep.corr.fit.regime;
    rep.verdict.match = !rep.verdict.noise_floor &&
                        rep.verdict.measured != Regime::inconclusive &&
                        rep.verdict.measured == rep.verdict.predicted;
    return rep;
}

} // namespace ergodic
