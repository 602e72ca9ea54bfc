#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathgt/cohort.hpp"
#include "pathgt/linalg.hpp"
#include "pathgt/rng.hpp"

namespace pathgt {

enum class GraphMode { jaccard, full };

/// Pathway membership mapped onto a gene vocabulary.
struct IndexedGeneSet {
    std::string id;
    std::vector<std::size_t> genes;  // sorted, unique
};

/// Pathway graph: memberships plus the normalized symmetric adjacency
/// (zero diagonal, entries in [0, 1]).
struct PathwayPrior {
    std::vector<std::string> pathway_ids;
    std::vector<std::vector<std::size_t>> membership;
    MatD adjacency;
    GraphMode mode = GraphMode::jaccard;
    std::size_t min_genes = 0;
    double max_raw_jaccard = 0.0;

    std::size_t n_pathways() const { return pathway_ids.size(); }
};

/// Leading eigenpairs of the symmetric normalized Laplacian.
struct SpectralEncoding {
    MatD eigvecs;                 // P x k, columns in ascending eigenvalue order
    std::vector<double> eigvals;  // k
    std::vector<double> degree;   // per-node degree, clamped at 1e-8

    std::size_t n_nodes() const { return static_cast<std::size_t>(eigvecs.rows()); }
    std::size_t k() const { return static_cast<std::size_t>(eigvecs.cols()); }
};

struct EigenDecomposition {
    std::vector<double> values;  // ascending
    MatD vectors;                // columns match `values`
    int sweeps = 0;
};

/// Maps gene symbols to vocabulary positions; unknown symbols are skipped.
std::vector<IndexedGeneSet> map_gene_sets(std::span<const GeneSet> sets, std::span<const std::string> vocabulary);

/// Drops sets with fewer than `min_genes` mapped genes, then builds the
/// Jaccard (or complete) adjacency. Throws if fewer than two pathways remain.
PathwayPrior build_prior(std::span<const IndexedGeneSet> sets, std::size_t min_genes, GraphMode mode);

MatD normalized_laplacian(const PathwayPrior& prior, std::vector<double>* degree = nullptr);

/// Cyclic Jacobi rotations for a dense symmetric matrix. Converged when the
/// largest off-diagonal magnitude falls below `tol`; throws after `max_sweeps`.
EigenDecomposition jacobi_eigen(const MatD& symmetric, double tol = 1e-10, int max_sweeps = 100);

SpectralEncoding laplacian_encoding(const PathwayPrior& prior, std::size_t k);

/// Rows are [v_p^(1..k) * flips, d_p / (P + eps)]; flips has k entries of +-1
/// (empty means no flipping).
MatD positional_inputs(const SpectralEncoding& enc, std::span<const double> flips = {});

/// Draws one +-1 per eigenvector dimension.
std::vector<double> draw_sign_flips(std::size_t k, Rng& rng);

/// Projects positional inputs: W (d x (k+1)), b (1 x d). When `training`,
/// fresh sign flips are drawn from `rng` (and returned through `flips_out`).
MatD positional_features(const SpectralEncoding& enc, const MatD& weight, const MatD& bias, bool training, Rng* rng,
                         std::vector<double>* flips_out = nullptr);

// --- export --------------------------------------------------------------

const char* to_string(GraphMode mode);
GraphMode graph_mode_from_string(const std::string& s);

void write_prior_csv(const std::filesystem::path& csv_path, const PathwayPrior& prior);
nlohmann::json prior_sidecar(const PathwayPrior& prior);

/// Writes `<stem>.bin` (little-endian float64: eigvals, eigvecs row-major,
/// degree) and `<stem>.json` ({P, k, checksum}).
void write_spectral_cache(const std::filesystem::path& stem, const SpectralEncoding& enc);
SpectralEncoding read_spectral_cache(const std::filesystem::path& stem);

/// laplacian_encoding() memoized under `cache_dir`, keyed by a checksum of
/// the adjacency and k. An empty directory disables the cache.
SpectralEncoding cached_laplacian_encoding(const PathwayPrior& prior, std::size_t k,
                                          const std::filesystem::path& cache_dir);

} // namespace pathgt
