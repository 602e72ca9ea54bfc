#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace pathgt {

/// Threshold-dependent and ranking metrics for one evaluated set.
/// Undefined AUROC/AUPRC (single-class input) are NaN.
struct MetricsRecord {
    double auroc = 0.0;
    double auprc = 0.0;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double accuracy = 0.0;
    double threshold = 0.5;
    // confusion[true][predicted]
    std::array<std::array<std::int64_t, 2>, 2> confusion{};
    bool precision_undefined = false;  // no predicted positives
    bool recall_undefined = false;     // no actual positives

    std::int64_t count() const;
};

/// Rank statistic with midranks for ties; NaN when a class is absent.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Step-wise average precision, thresholds at distinct scores.
double auprc(std::span<const double> scores, std::span<const int> labels);

double f1_score(double precision, double recall);

/// F1-maximizing threshold over the distinct scores; smallest on ties.
/// A sample is predicted positive when score >= threshold.
double calibrate_threshold(std::span<const double> scores, std::span<const int> labels);

MetricsRecord evaluate_scores(std::span<const double> scores, std::span<const int> labels, double threshold);

/// `n` equally spaced points on [0, 1].
std::vector<double> unit_grid(std::size_t n = 100);

/// TPR interpolated linearly at each FPR grid point (upper envelope where the
/// ROC curve is vertical).
std::vector<double> roc_on_grid(std::span<const double> scores, std::span<const int> labels,
                                std::span<const double> fpr_grid);

/// Precision as a right-continuous step function of recall.
std::vector<double> pr_on_grid(std::span<const double> scores, std::span<const int> labels,
                               std::span<const double> recall_grid);

nlohmann::json to_json(const MetricsRecord& m);
MetricsRecord metrics_from_json(const nlohmann::json& j);

/// JSON number, or null for NaN.
nlohmann::json finite_or_null(double v);

} // namespace pathgt
