#include "ergodic/families.hpp"

#include <cmath>
#include <fstream>

#include "ergodic/cycle_finder.hpp"

namespace ergodic {

namespace {

Branch affine_branch(double a, double b, double slope, double offset) {
    Branch br;
    br.domain = {a, b};
    br.value = [slope, offset](double x) { return slope * x + offset; };
    br.deriv = [slope](double) { return slope; };
    br.second_deriv = [](double) { return 0.0; };
    br.monotone_sign = slope >= 0 ? 1 : -1;
    return br;
}

} // namespace

PiecewiseMap make_tent(double s) {
    if (!(s > 1.0 && s <= 2.0)) throw InvalidMapError("tent slope must lie in (1,2]");
    PiecewiseMap m;
    m.branches.push_back(affine_branch(0.0, 0.5, s, 0.0));
    m.branches.push_back(affine_branch(0.5, 1.0, -s, s));
    m.critical = {{0.5, 1.0, 1.0}};
    m.continuous = true;
    m.config = {{"family", "tent"}, {"params", {{"s", s}}}};
    return m;
}

PiecewiseMap make_quadratic(double a) {
    if (!(a > 0.0 && a <= 4.0)) throw InvalidMapError("quadratic parameter must lie in (0,4]");
    PiecewiseMap m;
    auto value = [a](double x) { return a * x * (1.0 - x); };
    auto deriv = [a](double x) { return a * (1.0 - 2.0 * x); };
    auto second = [a](double) { return -2.0 * a; };
    Branch left{{0.0, 0.5}, value, deriv, second, 1};
    Branch right{{0.5, 1.0}, value, deriv, second, -1};
    m.branches = {left, right};
    m.critical = {{0.5, 2.0, 2.0}};
    m.continuous = true;
    m.config = {{"family", "quadratic"}, {"params", {{"a", a}}}};
    return m;
}

PiecewiseMap make_doubling() {
    PiecewiseMap m;
    m.branches.push_back(affine_branch(0.0, 0.5, 2.0, 0.0));
    m.branches.push_back(affine_branch(0.5, 1.0, 2.0, -1.0));
    m.critical = {{0.5, 1.0, 1.0}};
    m.continuous = false;
    m.config = {{"family", "doubling"}, {"params", nlohmann::json::object()}};
    return m;
}

PiecewiseMap make_lorenz(double c, double b_minus, double b_plus,
                         double rho_minus, double rho_plus) {
    if (!(c > 0.0 && c < 1.0)) throw InvalidMapError("lorenz break point must lie in (0,1)");
    if (!(rho_minus >= 1.0 && rho_plus >= 1.0))
        throw InvalidMapError("lorenz exponents must satisfy rho >= 1 (orders >= 1)");
    PiecewiseMap m;
    Branch left;
    left.domain = {0.0, c};
    left.value = [c, b_minus, rho_minus](double x) {
        return 1.0 - b_minus * std::pow(c - x, rho_minus);
    };
    left.deriv = [c, b_minus, rho_minus](double x) {
        return b_minus * rho_minus * std::pow(c - x, rho_minus - 1.0);
    };
    left.second_deriv = [c, b_minus, rho_minus](double x) {
        if (rho_minus == 1.0) return 0.0;
        return -b_minus * rho_minus * (rho_minus - 1.0) * std::pow(c - x, rho_minus - 2.0);
    };
    left.monotone_sign = 1;
    Branch right;
    right.domain = {c, 1.0};
    right.value = [c, b_plus, rho_plus](double x) {
        return b_plus * std::pow(x - c, rho_plus);
    };
    right.deriv = [c, b_plus, rho_plus](double x) {
        return b_plus * rho_plus * std::pow(x - c, rho_plus - 1.0);
    };
    right.second_deriv = [c, b_plus, rho_plus](double x) {
        if (rho_plus == 1.0) return 0.0;
        return b_plus * rho_plus * (rho_plus - 1.0) * std::pow(x - c, rho_plus - 2.0);
    };
    right.monotone_sign = 1;
    m.branches = {left, right};
    m.critical = {{c, rho_minus, rho_plus}};
    m.continuous = false;
    m.config = {{"family", "lorenz"},
                {"params", {{"c", c}, {"b_minus", b_minus}, {"b_plus", b_plus},
                            {"rho_minus", rho_minus}, {"rho_plus", rho_plus}}}};
    return m;
}

namespace {

struct PowerTerm {
    double coefficient = 0.0;
    double exponent = 0.0;
    double center = 0.0;
    bool integer_exp = false;
    long k = 0;

    double value(double x) const {
        double u = x - center;
        if (integer_exp) {
            double v = 1.0;
            for (long i = 0; i < k; ++i) v *= u;
            return coefficient * v;
        }
        return coefficient * std::pow(std::abs(u), exponent);
    }
    double deriv(double x) const {
        double u = x - center;
        if (integer_exp) {
            if (k == 0) return 0.0;
            double v = 1.0;
            for (long i = 0; i < k - 1; ++i) v *= u;
            return coefficient * k * v;
        }
        if (exponent == 0.0) return 0.0;
        double s = u >= 0 ? 1.0 : -1.0;
        return coefficient * exponent * std::pow(std::abs(u), exponent - 1.0) * s;
    }
    double second(double x) const {
        double u = x - center;
        if (integer_exp) {
            if (k < 2) return 0.0;
            double v = 1.0;
            for (long i = 0; i < k - 2; ++i) v *= u;
            return coefficient * k * (k - 1) * v;
        }
        if (exponent == 0.0 || exponent == 1.0) return 0.0;
        return coefficient * exponent * (exponent - 1.0) *
               std::pow(std::abs(u), exponent - 2.0);
    }
};

PowerTerm parse_term(const nlohmann::json& j) {
    PowerTerm t;
    t.coefficient = j.at("coefficient").get<double>();
    t.exponent = j.at("exponent").get<double>();
    t.center = j.value("center", 0.0);
    double r = std::round(t.exponent);
    if (std::abs(t.exponent - r) < 1e-12 && r >= 0.0) {
        t.integer_exp = true;
        t.k = static_cast<long>(r);
    }
    if (t.exponent < 0.0) throw InvalidMapError("negative term exponent");
    return t;
}

} // namespace

PiecewiseMap make_piecewise(const nlohmann::json& params,
                            std::vector<CriticalPoint> critical, bool continuous) {
    PiecewiseMap m;
    if (!params.contains("branches") || !params["branches"].is_array() ||
        params["branches"].empty())
        throw InvalidMapError("piecewise map needs a non-empty branches array");
    for (const auto& jb : params["branches"]) {
        Branch br;
        auto dom = jb.at("domain");
        br.domain = {dom.at(0).get<double>(), dom.at(1).get<double>()};
        if (br.domain.length() <= 0.0) throw InvalidMapError("branch domain is empty");
        std::vector<PowerTerm> terms;
        for (const auto& jt : jb.at("terms")) terms.push_back(parse_term(jt));
        br.value = [terms](double x) {
            double v = 0.0;
            for (const auto& t : terms) v += t.value(x);
            return v;
        };
        br.deriv = [terms](double x) {
            double v = 0.0;
            for (const auto& t : terms) v += t.deriv(x);
            return v;
        };
        br.second_deriv = [terms](double x) {
            double v = 0.0;
            for (const auto& t : terms) v += t.second(x);
            return v;
        };
        if (jb.contains("monotone_sign")) {
            br.monotone_sign = jb["monotone_sign"].get<int>() >= 0 ? 1 : -1;
        } else {
            double a = br.domain.lo + 0.25 * br.domain.length();
            double b = br.domain.lo + 0.75 * br.domain.length();
            br.monotone_sign = br.value(b) >= br.value(a) ? 1 : -1;
        }
        m.branches.push_back(std::move(br));
    }
    std::sort(m.branches.begin(), m.branches.end(),
              [](const Branch& a, const Branch& b) { return a.domain.lo < b.domain.lo; });
    m.critical = std::move(critical);
    m.continuous = continuous;
    return m;
}

PiecewiseMap load_map(const nlohmann::json& spec) {
    if (!spec.contains("family")) throw InvalidMapError("map spec missing family");
    const std::string family = spec["family"].get<std::string>();
    const nlohmann::json params = spec.value("params", nlohmann::json::object());

    PiecewiseMap m;
    if (family == "tent") {
        m = make_tent(params.value("s", 2.0));
    } else if (family == "quadratic") {
        m = make_quadratic(params.value("a", 4.0));
    } else if (family == "doubling") {
        m = make_doubling();
    } else if (family == "lorenz") {
        m = make_lorenz(params.value("c", 0.5), params.value("b_minus", 1.0),
                        params.value("b_plus", 1.0), params.value("rho_minus", 2.0),
                        params.value("rho_plus", 2.0));
    } else if (family == "piecewise" || family == "renorm") {
        std::vector<CriticalPoint> critical;
        if (spec.contains("critical_points"))
            for (const auto& jc : spec["critical_points"])
                critical.push_back({jc.at("c").get<double>(),
                                    jc.value("l_minus", 1.0), jc.value("l_plus", 1.0)});
        if (family == "piecewise") {
            if (critical.empty())
                throw InvalidMapError("piecewise map needs explicit critical_points");
            m = make_piecewise(params, std::move(critical), spec.value("continuous", true));
        } else {
            PiecewiseMap base = load_map(params.at("base"));
            auto iv = params.at("interval");
            int period = params.at("period").get<int>();
            Renormalization r = renormalize_interval(
                base, {iv.at(0).get<double>(), iv.at(1).get<double>()}, period);
            m = std::move(r.map);
        }
    } else {
        throw InvalidMapError("unknown family: " + family);
    }

    // Explicit overrides for builtin families.
    if (family != "piecewise" && family != "renorm") {
        if (spec.contains("critical_points")) {
            std::vector<CriticalPoint> critical;
            for (const auto& jc : spec["critical_points"])
                critical.push_back({jc.at("c").get<double>(),
                                    jc.value("l_minus", 1.0), jc.value("l_plus", 1.0)});
            m.critical = std::move(critical);
        }
        if (spec.contains("continuous")) m.continuous = spec["continuous"].get<bool>();
    }
    m.config = spec;
    MapValidation v = validate_map(m);
    if (!v.ok) throw InvalidMapError(v.violations.front());
    return m;
}

PiecewiseMap load_map_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidMapError("cannot open map spec: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw InvalidMapError(std::string("map spec is not valid JSON: ") + e.what());
    }
    return load_map(j);
}

} // namespace ergodic
