#pragma once

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
#include "pathgt/model.hpp"
#include "pathgt/training.hpp"

namespace pathgt {

// --- integrated gradients ------------------------------------------------

/// Scalar score of an input; fills `grad` (same length as x) when non-null.
using ScoreFn = std::function<double(std::span<const double> x, std::vector<double>* grad)>;

/// Midpoint Riemann approximation of the path integral from `baseline` to `x`.
std::vector<double> integrated_gradients(const ScoreFn& f, std::span<const double> x, std::span<const double> baseline,
                                         std::size_t steps);

/// Class-1 logits in eval mode.
std::vector<double> class1_logits(const ModelState<double>& state, const ModelGraph& graph, const Batch<double>& batch);

/// Attributions of every input coordinate of one sample, averaged over the
/// baseline rows (one all-zero row when `baselines` is empty).
InputGradients<double> model_integrated_gradients(ModelState<double>& state, const ModelGraph& graph,
                                                  const Batch<double>& sample, const Batch<double>& baselines,
                                                  std::size_t steps);

struct AttributionSet {
    MatD phi_mut;      // N x G
    MatD phi_cnv;      // N x G
    MatD phi_gene;     // N x G, phi_mut + phi_cnv
    MatD phi_pathway;  // N x P, member means of phi_gene
    std::vector<int> labels;
    std::vector<std::size_t> rows;  // cohort rows of the samples
    std::vector<double> delta_gene;
    std::vector<double> delta_pathway;
    nlohmann::json provenance;
};

/// Class-1 mean minus class-0 mean of each column; throws if a class is empty.
std::vector<double> class_delta(const MatD& values, std::span<const int> labels);

/// Fills phi_gene, phi_pathway and both deltas from phi_mut/phi_cnv/labels.
void finalize_attributions(AttributionSet& attr, const ModelGraph& graph);

AttributionSet attribute_gradients(const ModelState<float>& state, const ModelGraph& graph, const Batch<float>& samples,
                                   std::span<const int> labels, const Batch<float>& baselines, std::size_t steps);

void write_attribution_cache(const std::filesystem::path& path, const AttributionSet& attr);
AttributionSet read_attribution_cache(const std::filesystem::path& path, const ModelGraph& graph);

// --- rankings ------------------------------------------------------------

struct RankedItem {
    std::string id;
    double delta = 0.0;
    double mean_rank = 0.0;
    std::size_t recurrence = 0;  // runs placing the item in the top fraction
    std::size_t fold_count = 0;
};

/// Items sorted by descending delta (ties by id). With several runs, delta
/// is the mean over runs and mean_rank the mean of per-run 1-based ranks.
std::vector<RankedItem> rank_differential(std::span<const std::string> ids,
                                          const std::vector<std::vector<double>>& per_run_deltas,
                                          double top_fraction = 0.1);

/// 1-based ranks of each item within one run (descending delta, ties by id).
std::vector<std::size_t> ranks_of(std::span<const std::string> ids, std::span<const double> deltas);

// --- crosstalk -----------------------------------------------------------

struct Crosstalk {
    std::vector<MatD> per_sample;  // head-averaged attention, P x P
    std::vector<int> labels;
    MatD class0, class1;
    std::size_t layer = 0;
};

/// `layer` < 0 counts from the last layer.
Crosstalk crosstalk_matrices(const ModelState<float>& state, const ModelGraph& graph, const Batch<float>& samples,
                             std::span<const int> labels, int layer = -1);

/// Class means recomputed from per_sample/labels.
void finalize_crosstalk(Crosstalk& c);

enum class EdgeTest { welch, permutation };

struct EdgeStat {
    std::size_t source = 0, target = 0;
    double mean_met = 0.0, mean_pri = 0.0, delta = 0.0;
    double p = 1.0, q = 1.0;
};

struct RewiringOptions {
    EdgeTest test = EdgeTest::welch;
    std::size_t permutations = 1000;
    std::uint64_t seed = 0;
};

/// Per directed edge (i != j) difference of class means with p-values and
/// BH q-values across all P(P-1) edges. Row-major over (source, target).
std::vector<EdgeStat> rewiring_test(const Crosstalk& c, const RewiringOptions& options = {});

struct EdgeRow {
    std::size_t source = 0, target = 0;
    double learned = 0.0, base = 0.0;
    bool is_new = false;
    EdgeStat stat;
};

/// Directed pairs among the `top_pathways` pathways with the largest
/// delta_pathway, sorted by learned class-1 weight.
std::vector<EdgeRow> novel_edges(const MatD& learned, const MatD& prior_adjacency, std::span<const EdgeStat> stats,
                                 std::span<const double> delta_pathway, std::size_t top_pathways = 20);

std::string edge_table_csv(std::span<const EdgeRow> rows, std::span<const std::string> pathway_ids);

/// Pearson correlation of per-sample pathway scores over the class-1
/// samples; the alternative interaction matrix for novel edges.
MatD coactivation_matrix(const AttributionSet& attr);

// --- hubs ----------------------------------------------------------------

struct HubNode {
    std::size_t pathway = 0;
    double score = 0.0;  // H for roots, E(parent, pathway) for children
    std::vector<HubNode> children;
};

struct HubHierarchy {
    std::vector<double> s;  // max(delta_p, 0)
    MatD E;                 // A_ij s_i s_j
    std::vector<double> H;  // row sums of E
    std::vector<HubNode> hubs;
};

HubHierarchy hub_hierarchy(std::span<const double> delta_pathway, const MatD& adjacency, std::size_t top_hubs,
                           std::size_t levels);

nlohmann::json to_json(const HubHierarchy& h, std::span<const std::string> pathway_ids);

// --- gene signatures -----------------------------------------------------

struct GeneSignature {
    // Membership order of the model graph (pathway p spans offsets[p]..offsets[p+1]).
    std::vector<double> alpha_class0, alpha_class1, alpha_delta;
    std::vector<double> ig_class0, ig_class1, ig_delta;  // per gene
};

GeneSignature gene_signatures(const ModelState<float>& state, const ModelGraph& graph, const Batch<float>& samples,
                              std::span<const int> labels, const AttributionSet* attr = nullptr);

// --- per-run driver ------------------------------------------------------

enum class EdgeSource { attention, coactivation };

struct ExplainOptions {
    std::size_t steps = 50;
    std::size_t baselines = 32;  // training rows as baselines; 0 = all-zero baseline
    double alpha = 0.05;
    std::size_t top_pathways = 20;
    std::size_t top_hubs = 5;
    std::size_t levels = 2;
    int layer = -1;
    RewiringOptions rewiring;
    // Learned matrix behind the novel-edge table: class-1 attention or
    // correlation of class-1 pathway attributions.
    EdgeSource edge_source = EdgeSource::attention;
};

nlohmann::json to_json(const ExplainOptions& o);
ExplainOptions explain_options_from_json(const nlohmann::json& j, ExplainOptions base = {});

struct RunExplanation {
    AttributionSet attr;
    Crosstalk crosstalk;
    GeneSignature signature;
};

/// Explains the held-out rows of one run with its own normalization.
RunExplanation explain_run(const ModelState<float>& state, const ModelGraph& graph, const CohortMatrix& normalized,
                           const FoldSplit& split, const ExplainOptions& options, InputArm arm = InputArm::full);

} // namespace pathgt
