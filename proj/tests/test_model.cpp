#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "pathgt/model.hpp"
#include "support.hpp"

using namespace pathgt;
using namespace pathgt::testing;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.d = 8;
    c.d_h = 8;
    c.layers = 1;
    c.heads = 2;
    c.k = 3;
    c.dropout = 0.0;
    return c;
}

} // namespace

TEST_CASE("scalar activations") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(softplus(50.0) == 50.0);
    CHECK(softplus(-50.0) > 0.0);
}

TEST_CASE("config validation") {
    ModelConfig c;
    c.heads = 3;
    CHECK_THROWS(c.validate());
    c = ModelConfig{};
    c.dropout = 1.0;
    CHECK_THROWS(c.validate());
    const auto back = model_config_from_json(to_json(ModelConfig{}));
    CHECK(back.d == 64);
    CHECK(back.mask_mode == MaskMode::soft);
}

TEST_CASE("initialization is seeded and follows the layout") {
    const auto a = init_model<double>(ModelConfig{}, 50, 10, 3);
    const auto b = init_model<double>(ModelConfig{}, 50, 10, 3);
    const auto c = init_model<double>(ModelConfig{}, 50, 10, 4);
    CHECK(a.gene_embed.value == b.gene_embed.value);
    CHECK(a.gene_embed.value != c.gene_embed.value);
    CHECK(a.film_w2.value.isZero());
    CHECK(a.layers[0].edge_gain_w.value.isZero());
    CHECK(a.layers[0].bn_attn.weight.value.isOnes());
    CHECK(a.layers[0].bn_attn.running_var.isOnes());
    const double bound = 1.0 / std::sqrt(64.0);
    CHECK(a.layers[0].wq.value.cwiseAbs().maxCoeff() <= bound);
    CHECK(a.layers[0].wq.decay);
    CHECK_FALSE(a.layers[0].bq.decay);
    CHECK_FALSE(a.gene_embed.decay);
}

TEST_CASE("eval-mode gradients match central differences") {
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
        auto t = make_tiny_problem(tiny_config(), 20, 5, seed);
        auto s = init_model<double>(t.config, 20, 5, seed);
        Rng rng(seed + 100);
        jitter_state(s, rng);
        const auto batch = random_batch<double>(3, 20, rng);
        MatD up(3, 2);
        for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = rng.normal();
        for (const auto& ge : gradient_check(s, t.graph, batch, up, false, 0, 1e-4, 1e-6)) {
            INFO(ge.group);
            CHECK(ge.max_rel < 1e-4);
        }
    }
}

TEST_CASE("training-mode gradients with batch statistics and dropout") {
    auto cfg = tiny_config();
    cfg.dropout = 0.2;
    cfg.layers = 2;
    auto t = make_tiny_problem(cfg, 20, 5, 9);
    auto s = init_model<double>(t.config, 20, 5, 9);
    Rng rng(77);
    jitter_state(s, rng);
    const auto batch = random_batch<double>(4, 20, rng);
    MatD up(4, 2);
    for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = rng.normal();
    for (const auto& ge : gradient_check(s, t.graph, batch, up, true, 5, 1e-4, 1e-6)) {
        INFO(ge.group);
        CHECK(ge.max_rel < 1e-4);
    }
}

TEST_CASE("input gradients match central differences") {
    auto t = make_tiny_problem(tiny_config(), 20, 5, 3);
    auto s = init_model<double>(t.config, 20, 5, 3);
    Rng rng(8);
    jitter_state(s, rng);
    auto batch = random_batch<double>(2, 20, rng);
    MatD up = MatD::Zero(2, 2);
    up.col(1).setOnes();
    BackwardOptions bo;
    bo.param_grads = false;
    bo.input_grads = true;
    const auto grads = backward(s, forward_eval(s, batch, t.graph), up, t.graph, bo);
    auto f = [&] { return forward_eval(s, batch, t.graph).logits().col(1).sum(); };
    const double h = 1e-5;
    for (Eigen::Index b = 0; b < 2; ++b) {
        for (Eigen::Index g = 0; g < 20; ++g) {
            for (int which = 0; which < 2; ++which) {
                MatD& m = which == 0 ? batch.mut : batch.cnv;
                const double orig = m(b, g);
                m(b, g) = orig + h;
                const double a = f();
                m(b, g) = orig - h;
                const double c = f();
                m(b, g) = orig;
                const double numeric = (a - c) / (2 * h);
                const double analytic = which == 0 ? grads.mut(b, g) : grads.cnv(b, g);
                CHECK(std::abs(analytic - numeric) <= 1e-6 * std::max(1.0, std::abs(numeric)));
            }
        }
    }
}

TEST_CASE("eval logits do not depend on batch composition") {
    ModelConfig cfg;
    cfg.d = 16;
    cfg.d_h = 8;
    cfg.k = 4;
    auto t = make_tiny_problem(cfg, 40, 8, 21);
    auto s = init_model<float>(cfg, 40, 8, 21);
    Rng rng(5);
    jitter_state(s, rng, 0.1);
    const auto big = random_batch<float>(13, 40, rng);
    const auto full = forward_eval(s, big, t.graph).logits();
    for (Eigen::Index i = 0; i < 13; ++i) {
        Batch<float> one{big.mut.row(i), big.cnv.row(i)};
        CHECK(forward_eval(s, one, t.graph).logits().row(0) == full.row(i));
    }
    Batch<float> sub{big.mut.middleRows(3, 5), big.cnv.middleRows(3, 5)};
    CHECK(forward_eval(s, sub, t.graph).logits() == full.middleRows(3, 5));
}

TEST_CASE("training batch of one is finite and keeps running statistics") {
    ModelConfig cfg;
    cfg.d = 16;
    cfg.d_h = 8;
    cfg.k = 4;
    auto t = make_tiny_problem(cfg, 40, 8, 2);
    auto s = init_model<float>(cfg, 40, 8, 2);
    Rng rng(1);
    const auto one = random_batch<float>(1, 40, rng);
    const auto before = s.layers[0].bn_attn.running_mean;
    ForwardOptions fo;
    fo.training = true;
    fo.rng = &rng;
    const auto tr = forward(s, one, t.graph, fo);
    CHECK(tr.logits().allFinite());
    CHECK(s.layers[0].bn_attn.running_mean == before);
    MatF up = MatF::Ones(1, 2);
    backward(s, tr, up, t.graph);
    bool finite = true;
    s.for_each_param([&](const Param<float>& p) { finite = finite && p.grad.allFinite(); });
    CHECK(finite);
}

TEST_CASE("training forward updates running statistics with momentum") {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.d_h = 4;
    cfg.k = 3;
    cfg.layers = 1;
    auto t = make_tiny_problem(cfg, 20, 5, 4);
    auto s = init_model<double>(cfg, 20, 5, 4);
    Rng rng(3);
    const auto batch = random_batch<double>(4, 20, rng);
    ForwardOptions fo;
    fo.training = true;
    fo.rng = &rng;
    const auto tr = forward(s, batch, t.graph, fo);
    const auto& c = tr.bn_cls;
    CHECK(c.batch_stats);
    const MatD expect_mean = 0.1 * c.mean;
    CHECK((s.bn_cls.running_mean - expect_mean).cwiseAbs().maxCoeff() < 1e-15);
    const MatD expect_var = MatD::Constant(1, 8, 0.9) + 0.1 * c.var * (4.0 / 3.0);
    CHECK((s.bn_cls.running_var - expect_var).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("full mask mode leaves attention logits unpenalized") {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.d_h = 4;
    cfg.k = 3;
    cfg.mask_mode = MaskMode::full;
    auto t = make_tiny_problem(cfg, 20, 5, 4);
    CHECK(t.graph.struct_mask.isZero());
    cfg.mask_mode = MaskMode::soft;
    auto u = make_tiny_problem(cfg, 20, 5, 4);
    for (Eigen::Index i = 0; i < 5; ++i) {
        for (Eigen::Index j = 0; j < 5; ++j) {
            const double expect = (i == j || u.prior.adjacency(i, j) > 0) ? 0.0 : -10.0;
            CHECK(u.graph.struct_mask(i, j) == expect);
        }
    }
}

TEST_CASE("non-finite attention logits name the layer") {
    auto t = make_tiny_problem(tiny_config(), 20, 5, 1);
    auto s = init_model<double>(t.config, 20, 5, 1);
    s.layers[0].wq.value(0, 0) = std::numeric_limits<double>::infinity();
    Rng rng(1);
    const auto batch = random_batch<double>(2, 20, rng);
    CHECK_THROWS_WITH(forward_eval(s, batch, t.graph), doctest::Contains("layer 0"));
}

TEST_CASE("parameter count: enumeration, closed form and default band") {
    const auto pc = count_params(ModelConfig{}, 5000, 300);
    CHECK(pc.enumerated >= 400000);
    CHECK(pc.enumerated <= 500000);
    // The published formula is approximate; it stays close to the enumeration.
    CHECK(std::abs(double(pc.closed_form) - double(pc.enumerated)) < 0.25 * double(pc.enumerated));
    CHECK(param_group("layer0.attn.q.w") == "layer0.attn.q");
    CHECK(param_group("gene_embed") == "gene_embed");
}

TEST_CASE("cast_state round-trips values and buffers") {
    auto s = init_model<double>(ModelConfig{}, 30, 6, 1);
    Rng rng(2);
    jitter_state(s, rng);
    const auto f = cast_state<float>(s);
    const auto d = cast_state<double>(f);
    CHECK(d.layers[1].bn_ffn.running_var.cast<float>() == f.layers[1].bn_ffn.running_var);
    CHECK(d.cls_w.value.cast<float>() == f.cls_w.value);
}
