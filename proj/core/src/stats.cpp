#include "pathgt/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "pathgt/error.hpp"
#include "pathgt/rng.hpp"

namespace pathgt {

std::vector<double> bh_adjust(std::span<const double> p) {
    const std::size_t m = p.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
    std::vector<double> q(m);
    double running = 1.0;
    for (std::size_t r = m; r-- > 0;) {
        const double v = p[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
        running = std::min(running, v);
        q[order[r]] = running;
    }
    return q;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double mean(std::span<const double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

WelchResult welch_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw input_error("welch_test needs at least two samples per group");
    auto moments = [](std::span<const double> v) {
        const double m = mean(v);
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::pair{m, ss / static_cast<double>(v.size() - 1)};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    const double se2 = va / static_cast<double>(a.size()) + vb / static_cast<double>(b.size());
    WelchResult r;
    if (se2 <= 0.0) {
        if (ma == mb) return r;
        r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(se2);
    r.p = std::erfc(std::abs(r.t) / std::numbers::sqrt2);
    return r;
}

std::vector<double> permutation_pvalues(std::span<const double> values, std::size_t n_cols, std::span<const int> labels,
                                        std::size_t n_perm, std::uint64_t seed) {
    const std::size_t n = labels.size();
    if (values.size() != n * n_cols) throw input_error("permutation_pvalues: values must be n x m");
    auto stats = [&](const std::vector<int>& y) {
        std::vector<double> s1(n_cols, 0.0), s0(n_cols, 0.0);
        std::size_t n1 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            auto& s = y[i] == 1 ? s1 : s0;
            n1 += y[i] == 1;
            for (std::size_t c = 0; c < n_cols; ++c) s[c] += values[i * n_cols + c];
        }
        if (n1 == 0 || n1 == n) throw input_error("permutation test needs both classes");
        std::vector<double> d(n_cols);
        for (std::size_t c = 0; c < n_cols; ++c) {
            d[c] = std::abs(s1[c] / static_cast<double>(n1) - s0[c] / static_cast<double>(n - n1));
        }
        return d;
    };
    std::vector<int> y(labels.begin(), labels.end());
    const auto observed = stats(y);
    std::vector<std::size_t> exceed(n_cols, 0);
    Rng rng(seed);
    for (std::size_t k = 0; k < n_perm; ++k) {
        rng.shuffle(y);
        const auto d = stats(y);
        for (std::size_t c = 0; c < n_cols; ++c) {
            // Relative slack so floating noise in identical statistics counts as a tie.
            exceed[c] += d[c] >= observed[c] * (1.0 - 1e-12);
        }
    }
    std::vector<double> p(n_cols);
    for (std::size_t c = 0; c < n_cols; ++c) {
        p[c] = (1.0 + static_cast<double>(exceed[c])) / (1.0 + static_cast<double>(n_perm));
    }
    return p;
}

} // namespace pathgt
