#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathgt/graphprior.hpp"
#include "pathgt/linalg.hpp"
#include "pathgt/rng.hpp"

namespace pathgt {

enum class MaskMode { soft, full };

struct ModelConfig {
    std::size_t d = 64;
    std::size_t d_h = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t k = 16;
    double dropout = 0.2;
    MaskMode mask_mode = MaskMode::soft;
    double mask_penalty = -10.0;

    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// A learnable tensor with its gradient and AdamW moments.
template <typename T>
struct Param {
    std::string name;
    Mat<T> value;
    Mat<T> grad;
    Mat<T> adam_m;
    Mat<T> adam_v;
    bool decay = false;

    void init(std::string n, Eigen::Index rows, Eigen::Index cols, bool decays) {
        name = std::move(n);
        value = Mat<T>::Zero(rows, cols);
        grad = Mat<T>::Zero(rows, cols);
        adam_m = Mat<T>::Zero(rows, cols);
        adam_v = Mat<T>::Zero(rows, cols);
        decay = decays;
    }
    std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

/// Affine batch norm over feature columns. Running statistics are buffers,
/// not parameters.
template <typename T>
struct BatchNorm {
    Param<T> weight;
    Param<T> bias;
    Mat<T> running_mean;
    Mat<T> running_var;
};

template <typename T>
struct TransformerLayerState {
    Param<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Param<T> edge_gain_w, edge_gain_b;  // 1 x H each
    Param<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    BatchNorm<T> bn_attn, bn_ffn;
    Param<T> edge_w1, edge_b1, edge_w2, edge_b2;  // 1 -> d_h -> 1
    BatchNorm<T> bn_edge;
};

template <typename T>
struct ModelState {
    ModelConfig config;
    std::size_t n_genes = 0;
    std::size_t n_pathways = 0;
    std::int64_t step = 0;  // optimizer steps taken

    Param<T> gene_embed;                               // G x d
    Param<T> film_w1, film_b1, film_w2, film_b2;       // d_h x 2, 1 x d_h, 2d x d_h, 1 x 2d
    Param<T> pool_w, pool_b, pool_context, pool_bias;  // d x d, 1 x d, 1 x d, P x d
    Param<T> pe_w, pe_b;                               // d x (k+1), 1 x d
    std::vector<TransformerLayerState<T>> layers;
    Param<T> readout_w, readout_v;  // d/2 x d, 1 x d/2
    Param<T> cls_w, cls_b;          // d x d, 1 x d
    BatchNorm<T> bn_cls;
    Param<T> out_w, out_b;  // 2 x d, 1 x 2

    template <typename F>
    void for_each_param(F&& f) {
        visit_params(*this, f);
    }
    template <typename F>
    void for_each_param(F&& f) const {
        visit_params(*this, f);
    }

    /// Visits (name, running-statistic matrix) pairs.
    template <typename F>
    void for_each_buffer(F&& f) {
        visit_buffers(*this, f);
    }
    template <typename F>
    void for_each_buffer(F&& f) const {
        visit_buffers(*this, f);
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for_each_param([&](const auto& p) { n += p.size(); });
        return n;
    }

    void zero_grad() {
        for_each_param([](auto& p) { p.grad.setZero(); });
    }

private:
    template <typename Self, typename F>
    static void visit_params(Self& s, F& f) {
        f(s.gene_embed);
        f(s.film_w1), f(s.film_b1), f(s.film_w2), f(s.film_b2);
        f(s.pool_w), f(s.pool_b), f(s.pool_context), f(s.pool_bias);
        f(s.pe_w), f(s.pe_b);
        for (auto& l : s.layers) {
            f(l.wq), f(l.bq), f(l.wk), f(l.bk), f(l.wv), f(l.bv), f(l.wo), f(l.bo);
            f(l.edge_gain_w), f(l.edge_gain_b);
            f(l.ffn_w1), f(l.ffn_b1), f(l.ffn_w2), f(l.ffn_b2);
            f(l.bn_attn.weight), f(l.bn_attn.bias), f(l.bn_ffn.weight), f(l.bn_ffn.bias);
            f(l.edge_w1), f(l.edge_b1), f(l.edge_w2), f(l.edge_b2);
            f(l.bn_edge.weight), f(l.bn_edge.bias);
        }
        f(s.readout_w), f(s.readout_v);
        f(s.cls_w), f(s.cls_b), f(s.bn_cls.weight), f(s.bn_cls.bias);
        f(s.out_w), f(s.out_b);
    }

    template <typename Self, typename F>
    static void visit_buffers(Self& s, F& f) {
        for (std::size_t i = 0; i < s.layers.size(); ++i) {
            auto& l = s.layers[i];
            const std::string pre = "layer" + std::to_string(i) + ".";
            f(pre + "bn_attn.running_mean", l.bn_attn.running_mean);
            f(pre + "bn_attn.running_var", l.bn_attn.running_var);
            f(pre + "bn_ffn.running_mean", l.bn_ffn.running_mean);
            f(pre + "bn_ffn.running_var", l.bn_ffn.running_var);
            f(pre + "bn_edge.running_mean", l.bn_edge.running_mean);
            f(pre + "bn_edge.running_var", l.bn_edge.running_var);
        }
        f(std::string("bn_cls.running_mean"), s.bn_cls.running_mean);
        f(std::string("bn_cls.running_var"), s.bn_cls.running_var);
    }
};

/// Fresh parameters: normal(0, 0.02) gene embeddings and pooling context,
/// fan-in uniform projections, zero FiLM output layer, zero edge gains.
template <typename T>
ModelState<T> init_model(const ModelConfig& config, std::size_t n_genes, std::size_t n_pathways, std::uint64_t seed);

/// Copies values, gradients, moments and buffers into another scalar type.
template <typename U, typename T>
ModelState<U> cast_state(const ModelState<T>& src) {
    ModelState<U> dst;
    dst.config = src.config;
    dst.n_genes = src.n_genes;
    dst.n_pathways = src.n_pathways;
    dst.step = src.step;
    dst.layers.resize(src.layers.size());
    std::vector<const Param<T>*> from;
    src.for_each_param([&](const Param<T>& p) { from.push_back(&p); });
    std::size_t i = 0;
    dst.for_each_param([&](Param<U>& p) {
        const Param<T>& s = *from[i++];
        p.name = s.name;
        p.decay = s.decay;
        p.value = s.value.template cast<U>();
        p.grad = s.grad.template cast<U>();
        p.adam_m = s.adam_m.template cast<U>();
        p.adam_v = s.adam_v.template cast<U>();
    });
    std::vector<const Mat<T>*> bufs;
    src.for_each_buffer([&](const std::string&, const Mat<T>& m) { bufs.push_back(&m); });
    i = 0;
    dst.for_each_buffer([&](const std::string&, Mat<U>& m) { m = bufs[i++]->template cast<U>(); });
    return dst;
}

/// Graph-derived constants the network needs, prepared once per prior.
struct ModelGraph {
    std::size_t n_genes = 0;
    std::size_t n_pathways = 0;
    std::vector<std::size_t> offsets;  // P + 1 offsets into `genes`
    std::vector<std::size_t> genes;    // flattened pathway membership
    MatD adjacency;                    // initial scalar edge feature
    MatD struct_mask;                  // 0 on edges/diagonal, penalty elsewhere
    SpectralEncoding encoding;

    std::size_t membership_size() const { return genes.size(); }
};

ModelGraph make_model_graph(const PathwayPrior& prior, const SpectralEncoding& enc, std::size_t n_genes,
                            const ModelConfig& config);

/// One mini-batch. CNV values are already normalized.
template <typename T>
struct Batch {
    Mat<T> mut;  // B x G
    Mat<T> cnv;  // B x G
    std::size_t size() const { return static_cast<std::size_t>(mut.rows()); }
};

struct ForwardOptions {
    bool training = false;
    bool update_running_stats = true;  // ignored unless training
    Rng* rng = nullptr;                // dropout masks and sign flips; required when training
};

template <typename T>
struct BnCache {
    bool batch_stats = false;
    Mat<T> inv_std;  // 1 x n
    Mat<T> mean;
    Mat<T> var;
};

template <typename T>
struct LayerTrace {
    Mat<T> x_in, q, k, v, attn, o, r1, xh, f1, g1, mask1, d1, f2, mask2, r2, x_out;
    // attn stacks heads: row h*P + p holds head h's distribution for query p.
};

template <typename T>
struct SampleTrace {
    Mat<T> film_in, film_pre, film_act, gamma_raw, gamma, gene_repr;  // G x {2, d_h, d_h, d, d, d}
    Mat<T> pool_proj;                                                // G x d, W h + b
    Mat<T> alpha;                                                    // 1 x M
    Mat<T> tokens;                                                   // P x d, pooled
    std::vector<LayerTrace<T>> layers;
    Mat<T> readout_hidden;  // P x d/2, tanh(W_attn x)
    Mat<T> readout_w;       // 1 x P
    Mat<T> pooled;          // 1 x d
    Mat<T> cls_pre, cls_norm, cls_act, cls_mask, cls_drop;
    Mat<T> logits;  // 1 x 2
};

template <typename T>
struct EdgeLayerTrace {
    Mat<T> e_in;     // P x P
    Mat<T> gain_z;   // P*P x H pre-softplus
    Mat<T> bias;     // P x P
    Mat<T> hidden_pre, hidden_act;  // P*P x d_h
    Mat<T> out_pre;  // P*P x 1
    BnCache<T> bn;
    Mat<T> e_out;    // P x P
};

/// Everything captured by a forward pass; backward() consumes it.
template <typename T>
struct ForwardTrace {
    bool training = false;
    std::vector<SampleTrace<T>> samples;
    std::vector<double> sign_flips;  // empty in eval mode
    Mat<T> pe_inputs;                // P x (k+1)
    Mat<T> pe;                       // P x d
    std::vector<EdgeLayerTrace<T>> edges;
    std::vector<BnCache<T>> bn_attn, bn_ffn;  // per layer
    BnCache<T> bn_cls;

    std::size_t batch_size() const { return samples.size(); }
    Mat<T> logits() const;           // B x 2
    Mat<T> readout_weights() const;  // B x P
    /// Head-averaged attention (P x P) of `layer` for sample b.
    Mat<T> mean_attention(std::size_t b, std::size_t layer) const;
};

template <typename T>
ForwardTrace<T> forward(ModelState<T>& state, const Batch<T>& batch, const ModelGraph& graph,
                        const ForwardOptions& options);

/// Eval-mode pass that leaves the state untouched.
template <typename T>
ForwardTrace<T> forward_eval(const ModelState<T>& state, const Batch<T>& batch, const ModelGraph& graph);

template <typename T>
struct InputGradients {
    Mat<T> mut;  // B x G
    Mat<T> cnv;  // B x G
};

struct BackwardOptions {
    bool param_grads = true;
    bool input_grads = false;
};

/// Reverse pass for upstream gradient `dlogits` (B x 2). Parameter gradients
/// are accumulated into `state`; sign flips and dropout masks are constants.
template <typename T>
InputGradients<T> backward(ModelState<T>& state, const ForwardTrace<T>& trace, const Mat<T>& dlogits,
                           const ModelGraph& graph, const BackwardOptions& options = {});

struct ParamCount {
    std::size_t enumerated = 0;   // sum over instantiated tensors
    std::size_t closed_form = 0;  // the published approximate formula
};

ParamCount count_params(const ModelConfig& config, std::size_t n_genes, std::size_t n_pathways);

/// Group name for a parameter ("film", "pool", "layer0.attn", ...).
std::string param_group(const std::string& param_name);

// Scalar activations shared with tests.
double gelu(double x);
double softplus(double x);

} // namespace pathgt
