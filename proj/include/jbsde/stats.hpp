#ifndef JBSDE_STATS_HPP
#define JBSDE_STATS_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "jbsde/util.hpp"

namespace jbsde {

struct SampleStats {
    std::size_t n = 0;
    double mean = 0.0;
    double variance = 0.0;  // unbiased
    double se = 0.0;        // standard error of the mean
};

inline SampleStats sample_stats(const std::vector<double>& x) {
    SampleStats s;
    s.n = x.size();
    if (s.n == 0) return s;
    s.mean = pairwise_sum(x) / static_cast<double>(s.n);
    if (s.n > 1) {
        std::vector<double> dev2(s.n);
        for (std::size_t i = 0; i < s.n; ++i) {
            const double d = x[i] - s.mean;
            dev2[i] = d * d;
        }
        s.variance = pairwise_sum(dev2) / static_cast<double>(s.n - 1);
        s.se = std::sqrt(s.variance / static_cast<double>(s.n));
    }
    return s;
}

// Central sample moment of given order.
inline double sample_moment(const std::vector<double>& x, int order) {
    if (x.empty()) return 0.0;
    const double m = pairwise_sum(x) / static_cast<double>(x.size());
    std::vector<double> p(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) p[i] = std::pow(x[i] - m, order);
    return pairwise_sum(p) / static_cast<double>(x.size());
}

// |mean(x) - target| <= k * se(x); degenerate samples pass only on equality.
inline bool within_se(const std::vector<double>& x, double target, double k = 3.0) {
    const SampleStats s = sample_stats(x);
    if (s.se == 0.0) return s.mean == target;
    return std::abs(s.mean - target) <= k * s.se;
}

}  // namespace jbsde

#endif  // JBSDE_STATS_HPP
