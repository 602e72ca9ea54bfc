#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pathgt {

/// Benjamini-Hochberg step-up: q_(i) = min_{j>=i} p_(j) m / j, capped at 1.
std::vector<double> bh_adjust(std::span<const double> p);

struct WelchResult {
    double t = 0.0;
    double p = 1.0;
};

/// Two-sided Welch test with a standard-normal reference distribution.
/// Zero variance in both groups gives p = 1 for equal means, else p = 0.
WelchResult welch_test(std::span<const double> a, std::span<const double> b);

double normal_cdf(double x);

/// Two-sided label-permutation p-values for differences in group means, one
/// per column of `values` (row-major n x m). All columns share the same
/// shuffles; p = (1 + #{|stat*| >= |stat|}) / (1 + n_perm).
std::vector<double> permutation_pvalues(std::span<const double> values, std::size_t n_cols, std::span<const int> labels,
                                        std::size_t n_perm, std::uint64_t seed);

double mean(std::span<const double> v);

/// Population standard deviation (divides by n).
double stddev(std::span<const double> v);

} // namespace pathgt
