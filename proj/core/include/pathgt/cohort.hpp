#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathgt/linalg.hpp"

namespace pathgt {

/// Per-patient mutation/CNV matrices plus binary labels. Rows are
/// patients, columns genes; `mut` holds exact 0/1 values.
struct CohortMatrix {
    std::vector<std::string> patient_ids;
    std::vector<std::string> gene_ids;
    MatD mut;
    MatD cnv;
    std::vector<int> labels;

    std::size_t n_patients() const { return patient_ids.size(); }
    std::size_t n_genes() const { return gene_ids.size(); }

    /// Throws input_error if any invariant is broken.
    void validate() const;

    CohortMatrix select_rows(std::span<const std::size_t> rows) const;
};

struct NormStats {
    std::vector<std::string> gene_ids;
    std::vector<double> mean;
    std::vector<double> std;
    double epsilon = 1e-8;
    int source_fold = -1;
    std::uint64_t source_seed = 0;
    std::string convention = "population";
};

struct FoldSplit {
    int fold_index = 1;  // 1-based
    std::uint64_t base_seed = 0;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::vector<std::size_t> test_idx;

    std::uint64_t fold_seed() const { return base_seed + static_cast<std::uint64_t>(fold_index); }
};

/// One line of a GMT file.
struct GeneSet {
    std::string id;
    std::string description;
    std::vector<std::string> genes;
};

enum class SignalModality { both, cnv, mutation };

struct SynthSpec {
    std::size_t n_patients = 600;
    std::size_t n_genes = 400;
    std::size_t n_pathways = 25;
    std::size_t genes_per_pathway = 18;
    std::size_t overlap_genes = 3;
    double effect_size = 3.0;
    double positive_fraction = 0.35;
    std::size_t driver_pathways = 2;
    SignalModality signal = SignalModality::both;
    std::uint64_t seed = 7;

    void validate() const;
};

struct SynthCohort {
    CohortMatrix cohort;
    std::vector<GeneSet> pathways;
    std::vector<std::size_t> driver_pathways;  // indices into `pathways`
    std::vector<std::string> driver_genes;
};

// --- I/O -----------------------------------------------------------------

CohortMatrix load_cohort(const std::filesystem::path& mut_path,
                         const std::filesystem::path& cnv_path,
                         const std::filesystem::path& labels_path);

void write_matrix_tsv(const std::filesystem::path& path, const CohortMatrix& cohort, bool mutation);
void write_labels_tsv(const std::filesystem::path& path, const CohortMatrix& cohort);

std::vector<GeneSet> load_gmt(const std::filesystem::path& path);
void write_gmt(const std::filesystem::path& path, std::span<const GeneSet> sets);

// --- preprocessing -------------------------------------------------------

/// Keeps gene g iff the fraction of patients with m_ig = 1 or
/// |c_ig| > cnv_threshold is at least `min_freq`.
CohortMatrix filter_genes(const CohortMatrix& cohort, double min_freq, double cnv_threshold = 0.5);

NormStats fit_norm_stats(const CohortMatrix& cohort, std::span<const std::size_t> train_idx,
                         int source_fold = -1, std::uint64_t source_seed = 0);

CohortMatrix apply_norm(const CohortMatrix& cohort, const NormStats& stats);

std::vector<FoldSplit> make_folds(std::span<const int> labels, int n_folds, std::uint64_t base_seed,
                                  double val_fraction = 0.1);

SynthCohort synth_cohort(const SynthSpec& spec);

// --- serialization -------------------------------------------------------

nlohmann::json to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

nlohmann::json folds_to_json(std::uint64_t base_seed, std::span<const FoldSplit> folds);
std::vector<FoldSplit> folds_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec base = {});

} // namespace pathgt
