#include "pathgt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pathgt/error.hpp"

namespace pathgt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw input_error("scores and labels differ in length");
    for (int y : labels) {
        if (y != 0 && y != 1) throw input_error("labels must be 0 or 1");
    }
}

// Operating points at each distinct threshold, highest score first.
struct Sweep {
    std::vector<double> thresholds;
    std::vector<std::int64_t> tp, fp;
    std::int64_t pos = 0, neg = 0;
};

Sweep sweep_desc(std::span<const double> scores, std::span<const int> labels) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    Sweep s;
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto idx = order[i];
        (labels[idx] == 1 ? tp : fp) += 1;
        if (i + 1 == order.size() || scores[order[i + 1]] != scores[idx]) {
            s.thresholds.push_back(scores[idx]);
            s.tp.push_back(tp);
            s.fp.push_back(fp);
        }
    }
    s.pos = tp;
    s.neg = fp;
    return s;
}

} // namespace

std::int64_t MetricsRecord::count() const {
    return confusion[0][0] + confusion[0][1] + confusion[1][0] + confusion[1][1];
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    // Twice the midrank keeps everything integral.
    std::int64_t rank_sum2 = 0, n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const auto twice_mid = static_cast<std::int64_t>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) {
                rank_sum2 += twice_mid;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) return kNaN;
    // U = R - n1(n1+1)/2; AUROC = U / (n1 n0), with halved ties kept exact.
    const std::int64_t u2 = rank_sum2 - n_pos * (n_pos + 1);
    return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    const Sweep s = sweep_desc(scores, labels);
    if (s.pos == 0 || s.neg == 0) return kNaN;
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < s.thresholds.size(); ++k) {
        const double recall = static_cast<double>(s.tp[k]) / static_cast<double>(s.pos);
        const double precision = static_cast<double>(s.tp[k]) / static_cast<double>(s.tp[k] + s.fp[k]);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

double f1_score(double precision, double recall) { return 2.0 * precision * recall / (precision + recall + 1e-12); }

double calibrate_threshold(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    if (scores.empty()) throw input_error("calibrate_threshold: no validation scores");
    const Sweep s = sweep_desc(scores, labels);
    double best_tau = s.thresholds.back();
    double best_f1 = -1.0;
    // Ascending thresholds so a strict improvement test keeps the smallest tau.
    for (std::size_t k = s.thresholds.size(); k-- > 0;) {
        const auto tp = static_cast<double>(s.tp[k]);
        const auto predicted = static_cast<double>(s.tp[k] + s.fp[k]);
        const double precision = predicted > 0 ? tp / predicted : 0.0;
        const double recall = s.pos > 0 ? tp / static_cast<double>(s.pos) : 0.0;
        const double f1 = f1_score(precision, recall);
        if (f1 > best_f1) {
            best_f1 = f1;
            best_tau = s.thresholds[k];
        }
    }
    return best_tau;
}

MetricsRecord evaluate_scores(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_inputs(scores, labels);
    MetricsRecord m;
    m.threshold = threshold;
    m.auroc = auroc(scores, labels);
    m.auprc = auprc(scores, labels);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int pred = scores[i] >= threshold ? 1 : 0;
        ++m.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred)];
    }
    const auto tp = static_cast<double>(m.confusion[1][1]);
    const auto fp = static_cast<double>(m.confusion[0][1]);
    const auto fn = static_cast<double>(m.confusion[1][0]);
    const auto tn = static_cast<double>(m.confusion[0][0]);
    m.precision_undefined = tp + fp == 0;
    m.recall_undefined = tp + fn == 0;
    m.precision = m.precision_undefined ? 0.0 : tp / (tp + fp);
    m.recall = m.recall_undefined ? 0.0 : tp / (tp + fn);
    m.f1 = f1_score(m.precision, m.recall);
    m.accuracy = scores.empty() ? 0.0 : (tp + tn) / static_cast<double>(scores.size());
    return m;
}

std::vector<double> unit_grid(std::size_t n) {
    if (n < 2) throw config_error("grid needs at least two points");
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = static_cast<double>(i) / static_cast<double>(n - 1);
    return g;
}

std::vector<double> roc_on_grid(std::span<const double> scores, std::span<const int> labels,
                                std::span<const double> fpr_grid) {
    check_inputs(scores, labels);
    const Sweep s = sweep_desc(scores, labels);
    std::vector<double> out(fpr_grid.size(), kNaN);
    if (s.pos == 0 || s.neg == 0) return out;
    // Every curve point is kept: on a vertical segment the last point at an
    // FPR carries the largest TPR, and the next distinct FPR starts from its
    // smallest TPR.
    std::vector<double> fx{0.0}, ty{0.0};
    for (std::size_t k = 0; k < s.thresholds.size(); ++k) {
        fx.push_back(static_cast<double>(s.fp[k]) / static_cast<double>(s.neg));
        ty.push_back(static_cast<double>(s.tp[k]) / static_cast<double>(s.pos));
    }
    for (std::size_t i = 0; i < fpr_grid.size(); ++i) {
        const double x = fpr_grid[i];
        const auto it = std::upper_bound(fx.begin(), fx.end(), x);
        if (it == fx.end()) {
            out[i] = ty.back();
            continue;
        }
        const auto hi = static_cast<std::size_t>(it - fx.begin());
        if (hi == 0) {
            out[i] = ty.front();
            continue;
        }
        const std::size_t lo = hi - 1;
        const double w = (x - fx[lo]) / (fx[hi] - fx[lo]);
        out[i] = ty[lo] + w * (ty[hi] - ty[lo]);
    }
    return out;
}

std::vector<double> pr_on_grid(std::span<const double> scores, std::span<const int> labels,
                               std::span<const double> recall_grid) {
    check_inputs(scores, labels);
    const Sweep s = sweep_desc(scores, labels);
    std::vector<double> out(recall_grid.size(), kNaN);
    if (s.pos == 0 || s.neg == 0) return out;
    // Step k covers recall in [R_k, R_{k+1}); the leading step starts at 0
    // with the precision of the highest threshold.
    std::vector<double> rx, py;
    for (std::size_t k = 0; k < s.thresholds.size(); ++k) {
        const double r = static_cast<double>(s.tp[k]) / static_cast<double>(s.pos);
        const double p = static_cast<double>(s.tp[k]) / static_cast<double>(s.tp[k] + s.fp[k]);
        if (rx.empty()) {
            rx.push_back(0.0);
            py.push_back(p);
        }
        if (r != rx.back()) {
            rx.push_back(r);
            py.push_back(p);
        }
    }
    for (std::size_t i = 0; i < recall_grid.size(); ++i) {
        const auto it = std::upper_bound(rx.begin(), rx.end(), recall_grid[i]);
        out[i] = py[static_cast<std::size_t>(it - rx.begin()) - 1];
    }
    return out;
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json to_json(const MetricsRecord& m) {
    return {{"auroc", finite_or_null(m.auroc)},
            {"auprc", finite_or_null(m.auprc)},
            {"f1", m.f1},
            {"precision", m.precision},
            {"recall", m.recall},
            {"accuracy", m.accuracy},
            {"threshold", m.threshold},
            {"confusion", {{m.confusion[0][0], m.confusion[0][1]}, {m.confusion[1][0], m.confusion[1][1]}}},
            {"precision_undefined", m.precision_undefined},
            {"recall_undefined", m.recall_undefined}};
}

MetricsRecord metrics_from_json(const nlohmann::json& j) {
    auto num = [&](const char* key) {
        const auto& v = j.at(key);
        return v.is_null() ? kNaN : v.get<double>();
    };
    MetricsRecord m;
    m.auroc = num("auroc");
    m.auprc = num("auprc");
    m.f1 = num("f1");
    m.precision = num("precision");
    m.recall = num("recall");
    m.accuracy = num("accuracy");
    m.threshold = num("threshold");
    const auto& c = j.at("confusion");
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) m.confusion[a][b] = c.at(a).at(b).get<std::int64_t>();
    m.precision_undefined = j.value("precision_undefined", false);
    m.recall_undefined = j.value("recall_undefined", false);
    return m;
}

} // namespace pathgt
