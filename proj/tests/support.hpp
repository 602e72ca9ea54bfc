#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pathgt/graphprior.hpp"
#include "pathgt/model.hpp"
#include "pathgt/rng.hpp"

namespace pathgt::testing {

/// Small random pathway problem: overlapping gene sets over `n_genes`
/// genes, a Jaccard prior, its spectral encoding and the model graph.
struct TinyProblem {
    PathwayPrior prior;
    SpectralEncoding encoding;
    ModelGraph graph;
    ModelConfig config;
};

inline TinyProblem make_tiny_problem(const ModelConfig& config, std::size_t n_genes, std::size_t n_pathways,
                                     std::uint64_t seed, std::size_t genes_per_set = 6) {
    Rng rng(seed);
    std::vector<IndexedGeneSet> sets;
    for (std::size_t p = 0; p < n_pathways; ++p) {
        std::vector<std::size_t> all(n_genes);
        for (std::size_t g = 0; g < n_genes; ++g) all[g] = g;
        rng.shuffle(all);
        all.resize(genes_per_set);
        std::sort(all.begin(), all.end());
        sets.push_back({"PW" + std::to_string(p), all});
    }
    TinyProblem t;
    t.config = config;
    t.prior = build_prior(sets, 1, GraphMode::jaccard);
    t.encoding = laplacian_encoding(t.prior, config.k);
    t.graph = make_model_graph(t.prior, t.encoding, n_genes, config);
    return t;
}

/// Mutation entries in {0, 1}; CNV standard normal.
template <typename T>
Batch<T> random_batch(std::size_t n, std::size_t n_genes, Rng& rng) {
    Batch<T> b;
    b.mut.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_genes));
    b.cnv.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_genes));
    for (Eigen::Index i = 0; i < b.mut.size(); ++i) {
        b.mut.data()[i] = rng.bernoulli(0.3) ? T(1) : T(0);
        b.cnv.data()[i] = T(rng.normal());
    }
    return b;
}

/// Moves every parameter and running statistic away from its structured
/// initial value so that no gradient path is trivially zero.
template <typename T>
void jitter_state(ModelState<T>& s, Rng& rng, double scale = 0.3) {
    s.for_each_param([&](Param<T>& p) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += T(rng.normal(0.0, scale));
    });
    s.for_each_buffer([&](const std::string& name, Mat<T>& m) {
        const bool var = name.find("running_var") != std::string::npos;
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = var ? T(rng.uniform(0.5, 1.5)) : T(rng.normal(0.0, 0.2));
        }
    });
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("pathgt_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace pathgt::testing
