#include <benchmark/benchmark.h>

#include <vector>

#include "pathgt/cohort.hpp"
#include "pathgt/graphprior.hpp"
#include "pathgt/interpret.hpp"
#include "pathgt/metrics.hpp"
#include "pathgt/model.hpp"
#include "pathgt/rng.hpp"
#include "pathgt/stats.hpp"
#include "pathgt/training.hpp"

using namespace pathgt;

namespace {

// Default synthetic cohort with its graph, built once.
struct Fixture {
    PreparedCohort prep;
    ModelGraph graph;
    ModelConfig config;
    CohortMatrix normed;

    Fixture() {
        const auto syn = synth_cohort(SynthSpec{});
        prep = prepare_cohort(syn.cohort, syn.pathways, PreprocessSpec{}, config.k);
        graph = make_model_graph(prep.prior, prep.encoding, prep.cohort.n_genes(), config);
        std::vector<std::size_t> all(prep.cohort.n_patients());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        normed = apply_norm(prep.cohort, fit_norm_stats(prep.cohort, all));
    }

    template <typename T>
    Batch<T> batch(std::size_t n) const {
        std::vector<std::size_t> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = i;
        return make_batch<T>(normed, rows);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

void BM_ForwardEval(benchmark::State& st) {
    const auto& f = fixture();
    const auto s = init_model<float>(f.config, f.graph.n_genes, f.graph.n_pathways, 1);
    const auto b = f.batch<float>(static_cast<std::size_t>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(forward_eval(s, b, f.graph).logits());
    st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_ForwardEval)->Arg(1)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& st) {
    const auto& f = fixture();
    auto s = init_model<float>(f.config, f.graph.n_genes, f.graph.n_pathways, 1);
    const auto b = f.batch<float>(16);
    Rng rng(3);
    MatF up = MatF::Zero(16, 2);
    up.col(1).setOnes();
    ForwardOptions fo;
    fo.training = true;
    fo.rng = &rng;
    for (auto _ : st) {
        s.zero_grad();
        const auto tr = forward(s, b, f.graph, fo);
        backward(s, tr, up, f.graph);
        benchmark::DoNotOptimize(adamw_step(s, TrainSpec{}));
    }
    st.SetItemsProcessed(st.iterations() * 16);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_IntegratedGradients(benchmark::State& st) {
    const auto& f = fixture();
    auto s = cast_state<double>(init_model<float>(f.config, f.graph.n_genes, f.graph.n_pathways, 1));
    const auto x = f.batch<double>(1);
    const Batch<double> zero;
    for (auto _ : st) benchmark::DoNotOptimize(model_integrated_gradients(s, f.graph, x, zero, 50));
}
BENCHMARK(BM_IntegratedGradients)->Unit(benchmark::kMillisecond);

void BM_JacobiEigen(benchmark::State& st) {
    const auto n = st.range(0);
    Rng rng(5);
    MatD a(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.uniform();
    }
    for (auto _ : st) benchmark::DoNotOptimize(jacobi_eigen(a));
}
BENCHMARK(BM_JacobiEigen)->Arg(25)->Arg(100)->Arg(300)->Unit(benchmark::kMillisecond);

void BM_Auroc(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    Rng rng(7);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.uniform();
        y[i] = rng.bernoulli(0.35) ? 1 : 0;
    }
    for (auto _ : st) benchmark::DoNotOptimize(auroc(s, y));
    st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(10)->Range(100, 100000)->Complexity(benchmark::oNLogN);

void BM_RewiringWelch(benchmark::State& st) {
    const auto& f = fixture();
    const auto s = init_model<float>(f.config, f.graph.n_genes, f.graph.n_pathways, 1);
    const auto b = f.batch<float>(120);
    std::vector<int> labels(f.normed.labels.begin(), f.normed.labels.begin() + 120);
    const auto c = crosstalk_matrices(s, f.graph, b, labels);
    for (auto _ : st) benchmark::DoNotOptimize(rewiring_test(c));
}
BENCHMARK(BM_RewiringWelch)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
