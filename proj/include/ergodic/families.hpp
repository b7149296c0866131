#pragma once

#include <string>

#include "ergodic/map_model.hpp"

namespace ergodic {

// Built-in families. Each constructor fills branches, critical set with
// default one-sided orders, the continuity flag, and the source config.

// T_s(x) = s * min(x, 1-x), s in (1, 2]; orders 1/1 at c = 1/2.
PiecewiseMap make_tent(double s);

// f_a(x) = a x (1-x), a in (0, 4]; orders 2/2 at c = 1/2.
PiecewiseMap make_quadratic(double a);

// 2x mod 1 with a discontinuity at 1/2; orders 1/1.
PiecewiseMap make_doubling();

// Lorenz-type: 1 - b_m (c-x)^{rho_m} left of c, b_p (x-c)^{rho_p} right of c.
PiecewiseMap make_lorenz(double c, double b_minus, double b_plus,
                         double rho_minus, double rho_plus);

// User map from power-sum branch terms; see load_map for the schema.
PiecewiseMap make_piecewise(const nlohmann::json& params,
                            std::vector<CriticalPoint> critical, bool continuous);

// Builds a map from a JSON spec:
//   {"family": "tent"|"quadratic"|"doubling"|"lorenz"|"piecewise"|"renorm",
//    "params": {...},
//    "critical_points": [{"c":., "l_minus":., "l_plus":.}, ...],   (optional for builtins)
//    "continuous": bool}                                           (optional for builtins)
// piecewise params: {"branches":[{"domain":[a,b], "monotone_sign":1,
//    "terms":[{"coefficient":., "exponent":., "center":.}]}]}
// renorm params: {"base": <spec>, "period": m, "interval": [lo,hi]}
PiecewiseMap load_map(const nlohmann::json& spec);
PiecewiseMap load_map_file(const std::string& path);

} // namespace ergodic
