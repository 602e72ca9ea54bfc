#include <doctest.h>

#include <cmath>
#include <limits>

#include "pathgt/metrics.hpp"
#include "pathgt/stats.hpp"
#include "support.hpp"

using namespace pathgt;
using namespace pathgt::testing;

namespace {

double pair_count_auroc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            pairs += 1.0;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return num / pairs;
}

double f1_at(const std::vector<double>& s, const std::vector<int>& y, double tau) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const bool pred = s[i] >= tau;
        if (pred && y[i]) ++tp;
        if (pred && !y[i]) ++fp;
        if (!pred && y[i]) ++fn;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return 2 * p * r / (p + r + 1e-12);
}

// q_i = min over j >= i (in sorted order) of p_(j) m / j, mapped back.
std::vector<double> brute_bh(const std::vector<double>& p) {
    const std::size_t m = p.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
    std::vector<double> q(m);
    for (std::size_t i = 0; i < m; ++i) {
        double best = 1.0;
        for (std::size_t j = i; j < m; ++j) best = std::min(best, p[order[j]] * double(m) / double(j + 1));
        q[order[i]] = best;
    }
    return q;
}

struct Scored {
    std::vector<double> s;
    std::vector<int> y;
};

Scored random_scored(Rng& rng, std::size_t n, bool coarse) {
    Scored out;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = rng.bernoulli(0.4) ? 1 : 0;
        double s = rng.uniform(0.0, 1.0) + 0.3 * y;
        if (coarse) s = std::round(s * 5.0) / 5.0;
        out.s.push_back(s);
        out.y.push_back(y);
    }
    out.y[0] = 0;
    out.y[1] = 1;
    return out;
}

} // namespace

TEST_CASE("auroc equals the pair-counting oracle with and without ties") {
    Rng rng(2024);
    for (int rep = 0; rep < 50; ++rep) {
        const auto d = random_scored(rng, 200, rep % 2 == 0);
        CHECK(auroc(d.s, d.y) == pair_count_auroc(d.s, d.y));
    }
}

TEST_CASE("auroc and auprc edge cases") {
    const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(auroc(s, y) == 1.0);
    CHECK(auprc(s, y) == 1.0);
    const std::vector<int> one_class{1, 1, 1, 1};
    CHECK(std::isnan(auroc(s, one_class)));
    CHECK(std::isnan(auprc(s, std::vector<int>{0, 0, 0, 0})));
    // reversed ranking: AP = mean of precision at each positive = (1/3 + 2/4) / 2
    const std::vector<int> rev{1, 1, 0, 0};
    CHECK(auroc(s, rev) == 0.0);
    CHECK(auprc(s, rev) == doctest::Approx((1.0 / 3.0 + 0.5) / 2.0));
}

TEST_CASE("null scores give auroc near one half") {
    Rng rng(5);
    std::vector<double> s;
    std::vector<int> y;
    const std::size_t n = 4000;
    for (std::size_t i = 0; i < n; ++i) {
        s.push_back(rng.uniform(0.0, 1.0));
        y.push_back(rng.bernoulli(0.5) ? 1 : 0);
    }
    CHECK(std::abs(auroc(s, y) - 0.5) < 3.0 / std::sqrt(double(n)));
}

TEST_CASE("auprc matches a step-sum oracle") {
    Rng rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        const auto d = random_scored(rng, 60, rep % 2 == 0);
        // sum over distinct thresholds of (R_k - R_{k-1}) P_k
        std::vector<double> th(d.s);
        std::sort(th.begin(), th.end(), std::greater<>());
        th.erase(std::unique(th.begin(), th.end()), th.end());
        double npos = 0;
        for (int v : d.y) npos += v;
        double ap = 0.0, prev_r = 0.0;
        for (double t : th) {
            double tp = 0, fp = 0;
            for (std::size_t i = 0; i < d.s.size(); ++i) {
                if (d.s[i] >= t) (d.y[i] ? tp : fp) += 1;
            }
            const double r = tp / npos;
            ap += (r - prev_r) * tp / (tp + fp);
            prev_r = r;
        }
        CHECK(auprc(d.s, d.y) == doctest::Approx(ap).epsilon(1e-12));
    }
}

TEST_CASE("threshold calibration examples") {
    const std::vector<double> s{0.1, 0.4, 0.6, 0.9};
    CHECK(calibrate_threshold(s, std::vector<int>{0, 0, 1, 1}) == 0.6);
    CHECK(calibrate_threshold(s, std::vector<int>{1, 1, 1, 1}) == 0.1);
}

TEST_CASE("calibrated threshold is never beaten by a fine grid") {
    Rng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        const auto d = random_scored(rng, 80, rep % 3 == 0);
        const double tau = calibrate_threshold(d.s, d.y);
        const double best = f1_at(d.s, d.y, tau);
        for (int k = 0; k <= 1400; ++k) CHECK(best >= f1_at(d.s, d.y, k * 1e-3) - 1e-15);
        // global maximum over the distinct scores, smallest on ties
        for (double c : d.s) {
            const double f = f1_at(d.s, d.y, c);
            CHECK(f <= best + 1e-15);
            if (f == best) CHECK(tau <= c);
        }
    }
}

TEST_CASE("evaluate_scores binary metrics and confusion") {
    const std::vector<double> s{0.2, 0.7, 0.4, 0.9, 0.1};
    const std::vector<int> y{0, 1, 1, 0, 0};
    const auto m = evaluate_scores(s, y, 0.5);
    CHECK(m.confusion[0][0] == 2);
    CHECK(m.confusion[0][1] == 1);
    CHECK(m.confusion[1][0] == 1);
    CHECK(m.confusion[1][1] == 1);
    CHECK(m.count() == 5);
    CHECK(m.precision == 0.5);
    CHECK(m.recall == 0.5);
    CHECK(m.accuracy == doctest::Approx(0.6));
    CHECK(m.f1 == doctest::Approx(0.5));

    const auto none = evaluate_scores(s, y, 2.0);
    CHECK(none.precision == 0.0);
    CHECK(none.precision_undefined);
    const auto single = evaluate_scores(s, std::vector<int>{0, 0, 0, 0, 0}, 0.5);
    CHECK(std::isnan(single.auroc));
    CHECK(single.recall_undefined);
    const auto back = metrics_from_json(to_json(single));
    CHECK(std::isnan(back.auroc));
    CHECK(back.confusion == single.confusion);
    CHECK(to_json(single)["auroc"].is_null());
}

TEST_CASE("roc and pr grids") {
    const auto grid = unit_grid(100);
    REQUIRE(grid.size() == 100);
    CHECK(grid.front() == 0.0);
    CHECK(grid.back() == 1.0);
    const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
    const std::vector<int> y{0, 0, 1, 1};
    const auto roc = roc_on_grid(s, y, grid);
    for (double v : roc) CHECK(v == 1.0);
    const auto pr = pr_on_grid(s, y, grid);
    for (double v : pr) CHECK(v == 1.0);

    // One inversion: roc passes (0,0.5) (0.5,0.5) (0.5,1) (1,1).
    const std::vector<double> s2{0.1, 0.6, 0.5, 0.9};
    const auto roc2 = roc_on_grid(s2, y, std::vector<double>{0.0, 0.25, 0.5, 0.75});
    CHECK(roc2[0] == 0.5);
    CHECK(roc2[1] == 0.5);
    CHECK(roc2[2] == 1.0);
    CHECK(roc2[3] == 1.0);
    // PR points (0.5, 1) then (1, 2/3); steps hold until the next recall.
    const auto pr2 = pr_on_grid(s2, y, std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    CHECK(pr2[0] == 1.0);
    CHECK(pr2[2] == 1.0);
    CHECK(pr2[3] == 1.0);
    CHECK(pr2[4] == doctest::Approx(2.0 / 3.0));
    Rng rng(3);
    const auto d = random_scored(rng, 100, false);
    const auto r = roc_on_grid(d.s, d.y, grid);
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i] >= r[i - 1]);
}

TEST_CASE("bh adjustment examples and brute force") {
    const std::vector<double> p{0.01, 0.02, 0.03, 0.04};
    for (double q : bh_adjust(p)) CHECK(q == doctest::Approx(0.04).epsilon(1e-15));
    Rng rng(99);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t m = 1 + std::size_t(rng.uniform(0.0, 50.0));
        std::vector<double> pv;
        for (std::size_t i = 0; i < m; ++i) {
            double v = rng.uniform(0.0, 1.0);
            if (rep % 4 == 0) v = std::round(v * 10.0) / 10.0;
            pv.push_back(v * v);
        }
        CHECK(bh_adjust(pv) == brute_bh(pv));
    }
    CHECK(bh_adjust(std::vector<double>{}).empty());
}

TEST_CASE("welch test conventions") {
    const std::vector<double> a{1, 2, 3, 4}, b{1, 2, 3, 4};
    const auto same = welch_test(a, b);
    CHECK(same.t == 0.0);
    CHECK(same.p == doctest::Approx(1.0));
    const std::vector<double> c{5, 5, 5}, d{5, 5};
    CHECK(welch_test(c, d).p == 1.0);
    const std::vector<double> e{6, 6};
    CHECK(welch_test(c, e).p == 0.0);
    // t = (mean_a - mean_b) / sqrt(va/na + vb/nb) with sample variances
    const std::vector<double> x{1.0, 2.0, 4.0}, y{3.0, 5.0, 6.0, 9.0};
    const double va = (std::pow(1 - 7.0 / 3, 2) + std::pow(2 - 7.0 / 3, 2) + std::pow(4 - 7.0 / 3, 2)) / 2.0;
    const double vb = (std::pow(3 - 5.75, 2) + std::pow(5 - 5.75, 2) + std::pow(6 - 5.75, 2) + std::pow(9 - 5.75, 2)) / 3.0;
    const double t = (7.0 / 3 - 5.75) / std::sqrt(va / 3 + vb / 4);
    const auto w = welch_test(x, y);
    CHECK(w.t == doctest::Approx(t).epsilon(1e-12));
    CHECK(w.p == doctest::Approx(2.0 * normal_cdf(-std::abs(t))).epsilon(1e-12));
    CHECK(normal_cdf(0.0) == 0.5);
    CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
    CHECK_THROWS(welch_test(std::vector<double>{1.0}, y));
}

TEST_CASE("permutation p-values") {
    Rng rng(12);
    const std::size_t n = 40;
    std::vector<int> labels(n);
    std::vector<double> values(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = i % 2 == 0;
        values[i * 2] = rng.normal() + (labels[i] ? 3.0 : 0.0);
        values[i * 2 + 1] = rng.normal();
    }
    const auto p = permutation_pvalues(values, 2, labels, 500, 1);
    CHECK(p[0] == doctest::Approx(1.0 / 501.0));
    CHECK(p[1] > 0.01);
    CHECK(p == permutation_pvalues(values, 2, labels, 500, 1));
}

TEST_CASE("summary statistics use the population convention") {
    const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
    CHECK(mean(v) == 5.0);
    CHECK(stddev(v) == 2.0);
}
