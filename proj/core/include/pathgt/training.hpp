#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathgt/cohort.hpp"
#include "pathgt/graphprior.hpp"
#include "pathgt/metrics.hpp"
#include "pathgt/model.hpp"

namespace pathgt {

enum class LossKind { weighted_ce, focal };

struct TrainSpec {
    double lr = 1e-4;
    double weight_decay = 5e-4;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 200;
    std::size_t min_epochs = 50;
    std::size_t patience = 25;
    double clip_norm = 2.0;
    LossKind loss_kind = LossKind::weighted_ce;
    double focal_gamma = 2.0;

    void validate() const;
};

nlohmann::json to_json(const TrainSpec& s);
TrainSpec train_spec_from_json(const nlohmann::json& j, TrainSpec base = {});

/// w_c = N / (2 n_c).
std::array<double, 2> class_weights(std::span<const int> labels);

/// Mean over the batch of the (focal-)weighted cross-entropy. Writes the
/// gradient with respect to the logits when `grad` is given.
template <typename T>
double loss(const Mat<T>& logits, std::span<const int> labels, const std::array<double, 2>& weights,
            const TrainSpec& spec, Mat<T>* grad = nullptr);

struct StepInfo {
    double grad_norm = 0.0;
    bool clipped = false;
};

/// Clips the accumulated gradients to `clip_norm` (global L2), then applies one
/// AdamW update. A non-finite gradient throws before anything is modified.
template <typename T>
StepInfo adamw_step(ModelState<T>& state, const TrainSpec& spec);

// --- checkpoints ---------------------------------------------------------

/// Float32 container holding parameters, AdamW moments and batch-norm
/// running statistics; `extra` is merged into the manifest.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelState<T>& state, const nlohmann::json& extra = {});

ModelState<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* manifest = nullptr);

// --- data preparation ----------------------------------------------------

struct PreprocessSpec {
    double min_freq = 0.01;
    double cnv_threshold = 0.5;
    std::size_t min_genes = 15;
    GraphMode graph_mode = GraphMode::jaccard;
};

nlohmann::json to_json(const PreprocessSpec& s);
PreprocessSpec preprocess_spec_from_json(const nlohmann::json& j, PreprocessSpec base = {});

/// Gene-filtered cohort with its pathway prior and spectral encoding.
struct PreparedCohort {
    CohortMatrix cohort;
    PathwayPrior prior;
    SpectralEncoding encoding;
};

PreparedCohort prepare_cohort(const CohortMatrix& raw, std::span<const GeneSet> pathways, const PreprocessSpec& spec,
                              std::size_t k, const std::filesystem::path& cache_dir = {});

/// Which modalities reach the model; the other is zeroed after normalization.
enum class InputArm { full, mut_only, cnv_only };

const char* to_string(InputArm arm);

/// Rows of an already normalized cohort as a model batch.
template <typename T>
Batch<T> make_batch(const CohortMatrix& normalized, std::span<const std::size_t> rows, InputArm arm = InputArm::full);

/// Class-1 probabilities in eval mode, evaluated in chunks.
std::vector<double> predict_scores(const ModelState<float>& state, const ModelGraph& graph, const Batch<float>& batch);

// --- fold training -------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_auroc = 0.0;
    double lr = 0.0;
    double clipped_fraction = 0.0;
};

struct FoldResult {
    ModelState<float> best;
    std::size_t best_epoch = 0;
    double best_val_auroc = 0.0;
    std::vector<EpochLog> log;
    NormStats norm;
};

/// Trains on one split. Normalization is fit on the training rows only; the
/// returned state is the epoch with the highest validation AUROC.
FoldResult train_fold(const CohortMatrix& cohort, const FoldSplit& fold, const ModelGraph& graph,
                      const ModelConfig& config, const TrainSpec& spec, InputArm arm = InputArm::full);

struct Evaluation {
    MetricsRecord metrics;
    std::vector<double> scores;
    std::vector<int> labels;
};

/// Scores `rows` with `state` and applies threshold `tau`.
Evaluation evaluate(const ModelState<float>& state, const ModelGraph& graph, const CohortMatrix& normalized,
                    std::span<const std::size_t> rows, double tau, InputArm arm = InputArm::full);

// --- cross-validation ----------------------------------------------------

struct RunRecord {
    std::uint64_t seed = 0;
    int fold = 0;
    FoldSplit split;
    MetricsRecord metrics;
    double threshold = 0.5;
    std::size_t best_epoch = 0;
    double best_val_auroc = 0.0;
    std::size_t epochs_run = 0;
    std::vector<double> test_scores;
    std::vector<int> test_labels;
    std::vector<double> roc;  // TPR on the FPR grid
    std::vector<double> pr;   // precision on the recall grid
    double seconds = 0.0;
};

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

struct CvReport {
    InputArm arm = InputArm::full;
    std::size_t param_count = 0;
    std::size_t param_count_closed_form = 0;
    std::vector<RunRecord> runs;
    std::vector<std::string> metric_names;  // auroc, auprc, f1, precision, recall, accuracy
    std::vector<MeanSd> metric_summary;     // parallel to metric_names
    std::vector<double> grid;
    std::vector<MeanSd> roc_band, pr_band;
    std::array<std::array<MeanSd, 2>, 2> confusion{};

    MeanSd summary(const std::string& metric) const;
};

struct CvOptions {
    std::vector<std::uint64_t> seeds{42, 123};
    int n_folds = 5;
    double val_fraction = 0.1;
    std::size_t jobs = 1;
    InputArm arm = InputArm::full;
    /// When set, each run's checkpoint, normalization statistics, training
    /// log and metrics are written under <out_dir>/runs/, and the evaluated
    /// model is the one reloaded from disk.
    std::filesystem::path out_dir;
    /// Progress events; called under a lock.
    std::function<void(const nlohmann::json&)> on_event;
};

/// Repeated stratified k-fold protocol: folds regenerated per seed, every
/// (seed, fold) trained, calibrated on its validation rows and evaluated.
CvReport run_cv(const CohortMatrix& cohort, const ModelGraph& graph, const ModelConfig& config,
                const TrainSpec& spec, const CvOptions& options);

/// Writes folds/, predictions.csv, metrics.json, curves/ and confusion.json.
void write_cv_report(const std::filesystem::path& dir, const CvReport& report, const CohortMatrix& cohort);

nlohmann::json cv_metrics_json(const CvReport& report);

/// Full, mutation-only and CNV-only arms over identical folds, written to
/// <out_dir>/{full,mut_only,cnv_only} when out_dir is set.
std::array<CvReport, 3> run_ablation(const CohortMatrix& cohort, const ModelGraph& graph, const ModelConfig& config,
                                     const TrainSpec& spec, const CvOptions& options);

std::string run_name(std::uint64_t seed, int fold);

} // namespace pathgt
