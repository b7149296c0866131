#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace ergodic {

// Closed interval [lo, hi]. Degenerate (lo == hi) is allowed.
struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double length() const { return hi - lo; }
    double mid() const { return 0.5 * (lo + hi); }
    bool contains(double x) const { return x >= lo && x <= hi; }
    bool strictly_contains(double x, double margin = 0.0) const {
        return x > lo + margin && x < hi - margin;
    }
    bool empty() const { return hi < lo; }
};

inline Interval hull(const Interval& a, const Interval& b) {
    return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
}

inline Interval intersect(const Interval& a, const Interval& b) {
    return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

inline bool overlaps(const Interval& a, const Interval& b) {
    return std::max(a.lo, b.lo) < std::min(a.hi, b.hi);
}

// Union of disjoint closed intervals kept sorted by left endpoint.
using IntervalSet = std::vector<Interval>;

inline double total_length(const IntervalSet& s) {
    double t = 0.0;
    for (const auto& iv : s) t += iv.length();
    return t;
}

// Merges overlapping or touching members (within eps) into a sorted disjoint set.
inline IntervalSet normalize(IntervalSet s, double eps = 0.0) {
    if (s.empty()) return s;
    std::sort(s.begin(), s.end(),
              [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
    IntervalSet out;
    out.push_back(s.front());
    for (size_t i = 1; i < s.size(); ++i) {
        if (s[i].lo <= out.back().hi + eps)
            out.back().hi = std::max(out.back().hi, s[i].hi);
        else
            out.push_back(s[i]);
    }
    return out;
}

// Lebesgue measure of the symmetric difference of two normalized sets.
inline double symmetric_difference(const IntervalSet& a, const IntervalSet& b) {
    // measure(A) + measure(B) - 2 measure(A ∩ B)
    double inter = 0.0;
    size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        double lo = std::max(a[i].lo, b[j].lo);
        double hi = std::min(a[i].hi, b[j].hi);
        if (hi > lo) inter += hi - lo;
        if (a[i].hi < b[j].hi) ++i; else ++j;
    }
    return total_length(a) + total_length(b) - 2.0 * inter;
}

} // namespace ergodic
