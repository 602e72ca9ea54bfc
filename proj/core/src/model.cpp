#include "pathgt/model.hpp"

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/SpecialFunctions>

#include "pathgt/error.hpp"

namespace pathgt {

namespace {

constexpr double kGammaFloor = 1e-3;
constexpr double kEdgeLogEps = 1e-8;
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kSoftplusLinear = 20.0;

// --- elementwise helpers -------------------------------------------------

template <typename T>
Mat<T> gelu_m(const Mat<T>& x) {
    const auto a = x.array();
    return (T(0.5) * a * (T(1) + (a * T(std::numbers::sqrt2 / 2)).erf())).matrix();
}

template <typename T>
Mat<T> gelu_grad_m(const Mat<T>& x) {
    const auto a = x.array();
    const T inv_sqrt_2pi = T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    return (T(0.5) * (T(1) + (a * T(std::numbers::sqrt2 / 2)).erf()) + a * (T(-0.5) * a.square()).exp() * inv_sqrt_2pi)
        .matrix();
}

template <typename T>
Mat<T> softplus_m(const Mat<T>& x) {
    const auto a = x.array();
    return (a > T(kSoftplusLinear)).select(a, a.min(T(kSoftplusLinear)).exp().log1p()).matrix();
}

template <typename T>
Mat<T> sigmoid_m(const Mat<T>& x) {
    return (T(1) / (T(1) + (-x.array()).exp())).matrix();
}

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
    Mat<T> y(x.rows(), w.rows());
    y.noalias() = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
}

// Row-wise softmax in place.
template <typename T>
void softmax_rows(Mat<T>& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        auto row = s.row(r);
        const T m = row.maxCoeff();
        row = (row.array() - m).exp().matrix();
        row /= row.sum();
    }
}

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    Mat<T> m(rows, cols);
    const T keep_scale = T(1.0 / (1.0 - rate));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < rate ? T(0) : keep_scale;
    return m;
}

// --- batch norm ----------------------------------------------------------

template <typename T>
void bn_forward(const BatchNorm<T>& bn, BatchNorm<T>* live, const std::vector<const Mat<T>*>& xs,
                const std::vector<Mat<T>*>& ys, bool batch_stats, BnCache<T>& cache) {
    const auto nf = bn.weight.value.cols();
    cache.batch_stats = batch_stats;
    if (batch_stats) {
        Mat<T> sum = Mat<T>::Zero(1, nf);
        Eigen::Index rows = 0;
        for (const auto* x : xs) {
            sum += x->colwise().sum();
            rows += x->rows();
        }
        cache.mean = sum / T(rows);
        Mat<T> ss = Mat<T>::Zero(1, nf);
        for (const auto* x : xs) ss += (x->rowwise() - cache.mean.row(0)).array().square().matrix().colwise().sum();
        cache.var = ss / T(rows);
        if (live) {
            const T m = T(kBnMomentum);
            live->running_mean = (T(1) - m) * live->running_mean + m * cache.mean;
            live->running_var = (T(1) - m) * live->running_var + m * cache.var * (T(rows) / T(rows - 1));
        }
    } else {
        cache.mean = bn.running_mean;
        cache.var = bn.running_var;
    }
    cache.inv_std = (cache.var.array() + T(kBnEps)).rsqrt().matrix();
    const Mat<T> scale = (cache.inv_std.array() * bn.weight.value.array()).matrix();
    const Mat<T> shift = bn.bias.value - (cache.mean.array() * scale.array()).matrix();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Mat<T>& y = *ys[i];
        y = (xs[i]->array().rowwise() * scale.row(0).array()).matrix();
        y.rowwise() += shift.row(0);
    }
}

// Overwrites each dys[i] with the input gradient.
template <typename T>
void bn_backward(BatchNorm<T>& bn, const BnCache<T>& cache, const std::vector<const Mat<T>*>& xs,
                 std::vector<Mat<T>>& dys, bool param_grads) {
    const auto nf = bn.weight.value.cols();
    Mat<T> sum_dy = Mat<T>::Zero(1, nf);
    Mat<T> sum_dy_xhat = Mat<T>::Zero(1, nf);
    Eigen::Index rows = 0;
    std::vector<Mat<T>> xhats(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xhats[i] = ((xs[i]->rowwise() - cache.mean.row(0)).array().rowwise() * cache.inv_std.row(0).array()).matrix();
        sum_dy += dys[i].colwise().sum();
        sum_dy_xhat += (dys[i].array() * xhats[i].array()).matrix().colwise().sum();
        rows += xs[i]->rows();
    }
    if (param_grads) {
        bn.weight.grad += sum_dy_xhat;
        bn.bias.grad += sum_dy;
    }
    const auto w = bn.weight.value.row(0).array();
    if (!cache.batch_stats) {
        const Mat<T> scale = (cache.inv_std.array() * bn.weight.value.array()).matrix();
        for (auto& dy : dys) dy = (dy.array().rowwise() * scale.row(0).array()).matrix();
        return;
    }
    // dxhat = dy*w; dx = inv_std/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
    const T n = T(rows);
    const auto sum_dxhat = (sum_dy.row(0).array() * w).eval();
    const auto sum_dxhat_xhat = (sum_dy_xhat.row(0).array() * w).eval();
    const auto coef = (cache.inv_std.row(0).array() / n).eval();
    for (std::size_t i = 0; i < dys.size(); ++i) {
        Mat<T> dxhat = (dys[i].array().rowwise() * w).matrix();
        Mat<T> t = (n * dxhat.array()).matrix();
        t.rowwise() -= sum_dxhat.matrix();
        t -= (xhats[i].array().rowwise() * sum_dxhat_xhat).matrix();
        dys[i] = (t.array().rowwise() * coef).matrix();
    }
}

template <typename T>
void accumulate_linear(Param<T>& w, Param<T>& b, const Mat<T>& dy, const Mat<T>& x) {
    w.grad.noalias() += dy.transpose() * x;
    b.grad += dy.colwise().sum();
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void fill_uniform(Mat<T>& m, double fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(rng.uniform(-bound, bound));
}

template <typename T>
void fill_normal(Mat<T>& m, double sd, Rng& rng) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(rng.normal(0.0, sd));
}

template <typename T>
void init_linear(Param<T>& w, Param<T>& b, const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
    w.init(name + ".w", static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in), true);
    b.init(name + ".b", 1, static_cast<Eigen::Index>(out), false);
    fill_uniform(w.value, static_cast<double>(in), rng);
    fill_uniform(b.value, static_cast<double>(in), rng);
}

template <typename T>
void init_bn(BatchNorm<T>& bn, const std::string& name, std::size_t n) {
    const auto c = static_cast<Eigen::Index>(n);
    bn.weight.init(name + ".weight", 1, c, false);
    bn.bias.init(name + ".bias", 1, c, false);
    bn.weight.value.setOnes();
    bn.running_mean = Mat<T>::Zero(1, c);
    bn.running_var = Mat<T>::Ones(1, c);
}

template <typename T>
void check_state(const ModelState<T>& s, const ModelGraph& g) {
    if (s.n_genes != g.n_genes || s.n_pathways != g.n_pathways) {
        throw input_error("model state (G=" + std::to_string(s.n_genes) + ", P=" + std::to_string(s.n_pathways) +
                          ") does not match graph (G=" + std::to_string(g.n_genes) +
                          ", P=" + std::to_string(g.n_pathways) + ")");
    }
}

// Gathered pre-activation rows for pooling: row m = W h_g + b + b_p for the
// m-th (pathway, gene) membership entry.
template <typename T>
Mat<T> pool_tanh(const ModelState<T>& s, const ModelGraph& g, const Mat<T>& pool_proj) {
    const auto d = static_cast<Eigen::Index>(s.config.d);
    Mat<T> t(static_cast<Eigen::Index>(g.membership_size()), d);
    for (std::size_t p = 0; p < g.n_pathways; ++p) {
        for (std::size_t m = g.offsets[p]; m < g.offsets[p + 1]; ++m) {
            t.row(static_cast<Eigen::Index>(m)) =
                pool_proj.row(static_cast<Eigen::Index>(g.genes[m])) + s.pool_bias.value.row(static_cast<Eigen::Index>(p));
        }
    }
    return t.array().tanh().matrix();
}

template <typename T>
ForwardTrace<T> forward_impl(const ModelState<T>& s, ModelState<T>* live, const Batch<T>& batch, const ModelGraph& g,
                             const ForwardOptions& opt) {
    check_state(s, g);
    const std::size_t bsz = batch.size();
    if (bsz == 0) throw input_error("forward: empty batch");
    if (batch.mut.cols() != static_cast<Eigen::Index>(g.n_genes) || batch.cnv.cols() != batch.mut.cols() ||
        batch.cnv.rows() != batch.mut.rows()) {
        throw input_error("forward: batch columns do not match the gene vocabulary");
    }
    const ModelConfig& cfg = s.config;
    const bool training = opt.training;
    if (training && !opt.rng) throw runtime_error("forward: training mode needs an rng");
    const bool use_dropout = training && cfg.dropout > 0.0;
    // Singleton batches fall back to running statistics.
    const bool token_batch_stats = training && bsz > 1;
    const auto d = static_cast<Eigen::Index>(cfg.d);
    const auto heads = static_cast<Eigen::Index>(cfg.heads);
    const auto dk = d / heads;
    const auto np = static_cast<Eigen::Index>(g.n_pathways);
    const T inv_sqrt_dk = T(1.0 / std::sqrt(static_cast<double>(dk)));
    ModelState<T>* upd = (training && opt.update_running_stats) ? live : nullptr;

    ForwardTrace<T> tr;
    tr.training = training;
    tr.samples.resize(bsz);

    // Positional encoding (shared by the batch).
    if (training) tr.sign_flips = draw_sign_flips(g.encoding.k(), *opt.rng);
    tr.pe_inputs = positional_inputs(g.encoding, tr.sign_flips).template cast<T>();
    tr.pe = linear(tr.pe_inputs, s.pe_w.value, s.pe_b.value);

    // Edge path (sample independent).
    const auto np2 = np * np;
    Mat<T> e = g.adjacency.template cast<T>();
    tr.edges.resize(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto& ls = s.layers[l];
        auto& et = tr.edges[l];
        et.e_in = e;
        const Eigen::Map<const Mat<T>> flat(et.e_in.data(), np2, 1);
        et.gain_z = flat * ls.edge_gain_w.value;
        et.gain_z.rowwise() += ls.edge_gain_b.value.row(0);
        const Mat<T> logs = (softplus_m(et.gain_z).array() + T(kEdgeLogEps)).log().matrix();
        Mat<T> bias_flat = logs.rowwise().mean();
        et.bias = Eigen::Map<Mat<T>>(bias_flat.data(), np, np);

        et.hidden_pre = linear(Mat<T>(flat), ls.edge_w1.value, ls.edge_b1.value);
        et.hidden_act = gelu_m(et.hidden_pre);
        et.out_pre = linear(et.hidden_act, ls.edge_w2.value, ls.edge_b2.value);
        Mat<T> out_flat;
        bn_forward<T>(ls.bn_edge, upd ? &upd->layers[l].bn_edge : nullptr, {&et.out_pre}, {&out_flat},
                      training && np2 > 1, et.bn);
        et.e_out = Eigen::Map<Mat<T>>(out_flat.data(), np, np);
        e = et.e_out;
    }

    // Stage 1 + 2 per sample.
    for (std::size_t b = 0; b < bsz; ++b) {
        auto& st = tr.samples[b];
        const auto bi = static_cast<Eigen::Index>(b);
        st.film_in.resize(static_cast<Eigen::Index>(g.n_genes), 2);
        st.film_in.col(0) = batch.mut.row(bi).transpose();
        st.film_in.col(1) = batch.cnv.row(bi).transpose();
        st.film_pre = linear(st.film_in, s.film_w1.value, s.film_b1.value);
        st.film_act = gelu_m(st.film_pre);
        const Mat<T> film_out = linear(st.film_act, s.film_w2.value, s.film_b2.value);
        st.gamma_raw = film_out.leftCols(d);
        st.gamma = (softplus_m(st.gamma_raw).array() + T(kGammaFloor)).matrix();
        st.gene_repr = (st.gamma.array() * s.gene_embed.value.array()).matrix() + film_out.rightCols(d);

        st.pool_proj = linear(st.gene_repr, s.pool_w.value, s.pool_b.value);
        const Mat<T> t = pool_tanh(s, g, st.pool_proj);
        Mat<T> scores = t * s.pool_context.value.transpose();  // M x 1
        st.alpha.resize(1, static_cast<Eigen::Index>(g.membership_size()));
        st.tokens = Mat<T>::Zero(np, d);
        for (std::size_t p = 0; p < g.n_pathways; ++p) {
            const auto lo = static_cast<Eigen::Index>(g.offsets[p]);
            const auto cnt = static_cast<Eigen::Index>(g.offsets[p + 1] - g.offsets[p]);
            auto seg = scores.col(0).segment(lo, cnt);
            const T mx = seg.maxCoeff();
            Mat<T> w = (seg.array() - mx).exp().matrix().transpose();
            w /= w.sum();
            st.alpha.block(0, lo, 1, cnt) = w;
            for (Eigen::Index m = 0; m < cnt; ++m) {
                st.tokens.row(static_cast<Eigen::Index>(p)) +=
                    w(0, m) * st.gene_repr.row(static_cast<Eigen::Index>(g.genes[static_cast<std::size_t>(lo + m)]));
            }
        }
    }

    // Stage 3.
    tr.bn_attn.resize(cfg.layers);
    tr.bn_ffn.resize(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto& ls = s.layers[l];
        const Mat<T> mask = g.struct_mask.template cast<T>() + tr.edges[l].bias;
        std::vector<const Mat<T>*> r1s, r2s;
        std::vector<Mat<T>*> xhs, xouts;
        for (std::size_t b = 0; b < bsz; ++b) {
            auto& st = tr.samples[b];
            st.layers.resize(cfg.layers);
            auto& lt = st.layers[l];
            if (l == 0) {
                lt.x_in = st.tokens + tr.pe;
            } else {
                lt.x_in = st.layers[l - 1].x_out;
            }
            lt.q = linear(lt.x_in, ls.wq.value, ls.bq.value);
            lt.k = linear(lt.x_in, ls.wk.value, ls.bk.value);
            lt.v = linear(lt.x_in, ls.wv.value, ls.bv.value);
            lt.attn.resize(heads * np, np);
            lt.o.resize(np, d);
            for (Eigen::Index h = 0; h < heads; ++h) {
                Mat<T> sc = (lt.q.middleCols(h * dk, dk) * lt.k.middleCols(h * dk, dk).transpose()) * inv_sqrt_dk;
                sc += mask;
                if (!sc.allFinite()) {
                    throw runtime_error("non-finite attention logits in transformer layer " + std::to_string(l));
                }
                softmax_rows(sc);
                lt.attn.middleRows(h * np, np) = sc;
                lt.o.middleCols(h * dk, dk).noalias() = sc * lt.v.middleCols(h * dk, dk);
            }
            lt.r1 = lt.x_in + linear(lt.o, ls.wo.value, ls.bo.value);
            r1s.push_back(&lt.r1);
            xhs.push_back(&lt.xh);
        }
        bn_forward<T>(ls.bn_attn, upd ? &upd->layers[l].bn_attn : nullptr, r1s, xhs, token_batch_stats, tr.bn_attn[l]);

        for (std::size_t b = 0; b < bsz; ++b) {
            auto& lt = tr.samples[b].layers[l];
            lt.f1 = linear(lt.xh, ls.ffn_w1.value, ls.ffn_b1.value);
            lt.g1 = gelu_m(lt.f1);
            if (use_dropout) {
                lt.mask1 = dropout_mask<T>(lt.g1.rows(), lt.g1.cols(), cfg.dropout, *opt.rng);
                lt.d1 = (lt.g1.array() * lt.mask1.array()).matrix();
            } else {
                lt.d1 = lt.g1;
            }
            lt.f2 = linear(lt.d1, ls.ffn_w2.value, ls.ffn_b2.value);
            if (use_dropout) {
                lt.mask2 = dropout_mask<T>(lt.f2.rows(), lt.f2.cols(), cfg.dropout, *opt.rng);
                lt.r2 = lt.xh + (lt.f2.array() * lt.mask2.array()).matrix();
            } else {
                lt.r2 = lt.xh + lt.f2;
            }
            r2s.push_back(&lt.r2);
            xouts.push_back(&lt.x_out);
        }
        bn_forward<T>(ls.bn_ffn, upd ? &upd->layers[l].bn_ffn : nullptr, r2s, xouts, token_batch_stats, tr.bn_ffn[l]);
    }

    // Stage 4.
    std::vector<const Mat<T>*> cls_in;
    std::vector<Mat<T>*> cls_out;
    for (std::size_t b = 0; b < bsz; ++b) {
        auto& st = tr.samples[b];
        const Mat<T>& x = cfg.layers > 0 ? st.layers.back().x_out : st.tokens;
        st.readout_hidden = (x * s.readout_w.value.transpose()).array().tanh().matrix();
        Mat<T> sc = (st.readout_hidden * s.readout_v.value.transpose()).transpose();  // 1 x P
        softmax_rows(sc);
        st.readout_w = sc;
        st.pooled = st.readout_w * x;
        st.cls_pre = linear(st.pooled, s.cls_w.value, s.cls_b.value);
        cls_in.push_back(&st.cls_pre);
        cls_out.push_back(&st.cls_norm);
    }
    bn_forward<T>(s.bn_cls, upd ? &upd->bn_cls : nullptr, cls_in, cls_out, token_batch_stats, tr.bn_cls);
    for (std::size_t b = 0; b < bsz; ++b) {
        auto& st = tr.samples[b];
        st.cls_act = gelu_m(st.cls_norm);
        if (use_dropout) {
            st.cls_mask = dropout_mask<T>(1, d, cfg.dropout, *opt.rng);
            st.cls_drop = (st.cls_act.array() * st.cls_mask.array()).matrix();
        } else {
            st.cls_drop = st.cls_act;
        }
        st.logits = linear(st.cls_drop, s.out_w.value, s.out_b.value);
    }
    return tr;
}

} // namespace

// --- public --------------------------------------------------------------

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double softplus(double x) { return x > kSoftplusLinear ? x : std::log1p(std::exp(x)); }

void ModelConfig::validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) throw config_error("model: d must be a positive multiple of heads");
    if (d % 2 != 0) throw config_error("model: d must be even (readout uses d/2)");
    if (d_h == 0) throw config_error("model: d_h must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw config_error("model: dropout must lie in [0, 1)");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"d", c.d},
            {"d_h", c.d_h},
            {"layers", c.layers},
            {"heads", c.heads},
            {"k", c.k},
            {"dropout", c.dropout},
            {"mask_mode", c.mask_mode == MaskMode::full ? "full" : "soft"},
            {"mask_penalty", c.mask_penalty}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
    c.d = j.value("d", c.d);
    c.d_h = j.value("d_h", c.d_h);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.k = j.value("k", c.k);
    c.dropout = j.value("dropout", c.dropout);
    c.mask_penalty = j.value("mask_penalty", c.mask_penalty);
    if (j.contains("mask_mode")) {
        const auto m = j.at("mask_mode").get<std::string>();
        if (m == "soft") {
            c.mask_mode = MaskMode::soft;
        } else if (m == "full") {
            c.mask_mode = MaskMode::full;
        } else {
            throw config_error("model.mask_mode must be soft|full, got '" + m + "'");
        }
    }
    c.validate();
    return c;
}

template <typename T>
ModelState<T> init_model(const ModelConfig& cfg, std::size_t n_genes, std::size_t n_pathways, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelState<T> s;
    s.config = cfg;
    s.n_genes = n_genes;
    s.n_pathways = n_pathways;
    const auto d = static_cast<Eigen::Index>(cfg.d);
    const auto dh = cfg.d_h;

    s.gene_embed.init("gene_embed", static_cast<Eigen::Index>(n_genes), d, false);
    fill_normal(s.gene_embed.value, 0.02, rng);

    init_linear(s.film_w1, s.film_b1, "film1", dh, 2, rng);
    s.film_w2.init("film2.w", 2 * d, static_cast<Eigen::Index>(dh), true);
    s.film_b2.init("film2.b", 1, 2 * d, false);

    init_linear(s.pool_w, s.pool_b, "pool", cfg.d, cfg.d, rng);
    s.pool_context.init("pool.context", 1, d, false);
    fill_normal(s.pool_context.value, 0.02, rng);
    s.pool_bias.init("pool.pathway_bias", static_cast<Eigen::Index>(n_pathways), d, false);

    init_linear(s.pe_w, s.pe_b, "pe", cfg.d, cfg.k + 1, rng);

    s.layers.resize(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        auto& L = s.layers[l];
        const std::string pre = "layer" + std::to_string(l) + ".";
        init_linear(L.wq, L.bq, pre + "attn.q", cfg.d, cfg.d, rng);
        init_linear(L.wk, L.bk, pre + "attn.k", cfg.d, cfg.d, rng);
        init_linear(L.wv, L.bv, pre + "attn.v", cfg.d, cfg.d, rng);
        init_linear(L.wo, L.bo, pre + "attn.o", cfg.d, cfg.d, rng);
        L.edge_gain_w.init(pre + "edge_gain.w", 1, static_cast<Eigen::Index>(cfg.heads), false);
        L.edge_gain_b.init(pre + "edge_gain.b", 1, static_cast<Eigen::Index>(cfg.heads), false);
        init_linear(L.ffn_w1, L.ffn_b1, pre + "ffn1", 4 * cfg.d, cfg.d, rng);
        init_linear(L.ffn_w2, L.ffn_b2, pre + "ffn2", cfg.d, 4 * cfg.d, rng);
        init_bn(L.bn_attn, pre + "bn_attn", cfg.d);
        init_bn(L.bn_ffn, pre + "bn_ffn", cfg.d);
        init_linear(L.edge_w1, L.edge_b1, pre + "edge_mlp1", dh, 1, rng);
        init_linear(L.edge_w2, L.edge_b2, pre + "edge_mlp2", 1, dh, rng);
        init_bn(L.bn_edge, pre + "bn_edge", 1);
    }

    s.readout_w.init("readout.w", d / 2, d, true);
    fill_uniform(s.readout_w.value, static_cast<double>(cfg.d), rng);
    s.readout_v.init("readout.v", 1, d / 2, false);
    fill_uniform(s.readout_v.value, static_cast<double>(cfg.d / 2), rng);
    init_linear(s.cls_w, s.cls_b, "cls", cfg.d, cfg.d, rng);
    init_bn(s.bn_cls, "bn_cls", cfg.d);
    init_linear(s.out_w, s.out_b, "out", 2, cfg.d, rng);
    return s;
}

ModelGraph make_model_graph(const PathwayPrior& prior, const SpectralEncoding& enc, std::size_t n_genes,
                            const ModelConfig& config) {
    ModelGraph g;
    g.n_genes = n_genes;
    g.n_pathways = prior.n_pathways();
    if (enc.n_nodes() != g.n_pathways) throw input_error("spectral encoding size does not match the prior");
    if (enc.k() != config.k) {
        throw config_error("spectral encoding has k=" + std::to_string(enc.k()) + " but the model expects k=" +
                           std::to_string(config.k));
    }
    g.offsets.push_back(0);
    for (const auto& m : prior.membership) {
        if (m.empty()) throw input_error("pathway with empty membership");
        for (auto gene : m) {
            if (gene >= n_genes) throw input_error("pathway membership index out of range");
            g.genes.push_back(gene);
        }
        g.offsets.push_back(g.genes.size());
    }
    g.adjacency = prior.adjacency;
    const auto np = static_cast<Eigen::Index>(g.n_pathways);
    g.struct_mask = MatD::Zero(np, np);
    if (config.mask_mode == MaskMode::soft) {
        for (Eigen::Index i = 0; i < np; ++i)
            for (Eigen::Index j = 0; j < np; ++j)
                if (i != j && !(prior.adjacency(i, j) > 0.0)) g.struct_mask(i, j) = config.mask_penalty;
    }
    g.encoding = enc;
    return g;
}

template <typename T>
ForwardTrace<T> forward(ModelState<T>& state, const Batch<T>& batch, const ModelGraph& graph,
                        const ForwardOptions& options) {
    return forward_impl(state, &state, batch, graph, options);
}

template <typename T>
ForwardTrace<T> forward_eval(const ModelState<T>& state, const Batch<T>& batch, const ModelGraph& graph) {
    return forward_impl(state, static_cast<ModelState<T>*>(nullptr), batch, graph, ForwardOptions{});
}

template <typename T>
Mat<T> ForwardTrace<T>::logits() const {
    Mat<T> out(static_cast<Eigen::Index>(samples.size()), 2);
    for (std::size_t b = 0; b < samples.size(); ++b) out.row(static_cast<Eigen::Index>(b)) = samples[b].logits;
    return out;
}

template <typename T>
Mat<T> ForwardTrace<T>::readout_weights() const {
    if (samples.empty()) return {};
    Mat<T> out(static_cast<Eigen::Index>(samples.size()), samples[0].readout_w.cols());
    for (std::size_t b = 0; b < samples.size(); ++b) out.row(static_cast<Eigen::Index>(b)) = samples[b].readout_w;
    return out;
}

template <typename T>
Mat<T> ForwardTrace<T>::mean_attention(std::size_t b, std::size_t layer) const {
    const Mat<T>& a = samples.at(b).layers.at(layer).attn;
    const auto np = a.cols();
    const auto heads = a.rows() / np;
    Mat<T> out = Mat<T>::Zero(np, np);
    for (Eigen::Index h = 0; h < heads; ++h) out += a.middleRows(h * np, np);
    return out / T(heads);
}

template <typename T>
InputGradients<T> backward(ModelState<T>& s, const ForwardTrace<T>& tr, const Mat<T>& dlogits, const ModelGraph& g,
                           const BackwardOptions& opt) {
    check_state(s, g);
    const std::size_t bsz = tr.batch_size();
    if (bsz == 0) throw runtime_error("backward: missing forward trace");
    if (dlogits.rows() != static_cast<Eigen::Index>(bsz) || dlogits.cols() != 2) {
        throw input_error("backward: upstream gradient must be B x 2");
    }
    const ModelConfig& cfg = s.config;
    const bool pg = opt.param_grads;
    const auto d = static_cast<Eigen::Index>(cfg.d);
    const auto heads = static_cast<Eigen::Index>(cfg.heads);
    const auto dk = d / heads;
    const auto np = static_cast<Eigen::Index>(g.n_pathways);
    const auto np2 = np * np;
    const T inv_sqrt_dk = T(1.0 / std::sqrt(static_cast<double>(dk)));

    // Head.
    std::vector<Mat<T>> dcls(bsz);
    std::vector<const Mat<T>*> cls_in;
    for (std::size_t b = 0; b < bsz; ++b) {
        const auto& st = tr.samples[b];
        const Mat<T> dlog = dlogits.row(static_cast<Eigen::Index>(b));
        if (pg) accumulate_linear(s.out_w, s.out_b, dlog, st.cls_drop);
        Mat<T> da = dlog * s.out_w.value;
        if (st.cls_mask.size() > 0) da = (da.array() * st.cls_mask.array()).matrix();
        dcls[b] = (da.array() * gelu_grad_m(st.cls_norm).array()).matrix();
        cls_in.push_back(&st.cls_pre);
    }
    bn_backward(s.bn_cls, tr.bn_cls, cls_in, dcls, pg);

    // Readout.
    std::vector<Mat<T>> dx(bsz);
    for (std::size_t b = 0; b < bsz; ++b) {
        const auto& st = tr.samples[b];
        const Mat<T>& x = cfg.layers > 0 ? st.layers.back().x_out : st.tokens;
        if (pg) accumulate_linear(s.cls_w, s.cls_b, dcls[b], st.pooled);
        const Mat<T> dpooled = dcls[b] * s.cls_w.value;                 // 1 x d
        dx[b] = st.readout_w.transpose() * dpooled;                        // P x d
        const Mat<T> dw = (x * dpooled.transpose()).transpose();           // 1 x P
        const T dot = (dw.array() * st.readout_w.array()).sum();
        const Mat<T> dsc = (st.readout_w.array() * (dw.array() - dot)).matrix();  // 1 x P
        const Mat<T> dpre =
            ((dsc.transpose() * s.readout_v.value).array() * (T(1) - st.readout_hidden.array().square())).matrix();
        if (pg) {
            s.readout_v.grad.noalias() += dsc * st.readout_hidden;
            s.readout_w.grad.noalias() += dpre.transpose() * x;
        }
        dx[b].noalias() += dpre * s.readout_w.value;
    }

    // Transformer layers, last to first. dbias[l] collects d(loss)/d(edge bias).
    std::vector<Mat<T>> dbias(cfg.layers, Mat<T>::Zero(np, np));
    for (std::size_t li = cfg.layers; li-- > 0;) {
        auto& ls = s.layers[li];
        std::vector<const Mat<T>*> r2s, r1s;
        for (std::size_t b = 0; b < bsz; ++b) r2s.push_back(&tr.samples[b].layers[li].r2);
        bn_backward(ls.bn_ffn, tr.bn_ffn[li], r2s, dx, pg);  // dx now d r2

        std::vector<Mat<T>> dxh(bsz);
        for (std::size_t b = 0; b < bsz; ++b) {
            const auto& lt = tr.samples[b].layers[li];
            const Mat<T>& dr2 = dx[b];
            Mat<T> df2 = lt.mask2.size() > 0 ? Mat<T>((dr2.array() * lt.mask2.array()).matrix()) : dr2;
            if (pg) accumulate_linear(ls.ffn_w2, ls.ffn_b2, df2, lt.d1);
            Mat<T> dd1 = df2 * ls.ffn_w2.value;
            if (lt.mask1.size() > 0) dd1 = (dd1.array() * lt.mask1.array()).matrix();
            const Mat<T> df1 = (dd1.array() * gelu_grad_m(lt.f1).array()).matrix();
            if (pg) accumulate_linear(ls.ffn_w1, ls.ffn_b1, df1, lt.xh);
            dxh[b] = dr2;
            dxh[b].noalias() += df1 * ls.ffn_w1.value;
            r1s.push_back(&lt.r1);
        }
        bn_backward(ls.bn_attn, tr.bn_attn[li], r1s, dxh, pg);  // dxh now d r1

        for (std::size_t b = 0; b < bsz; ++b) {
            const auto& lt = tr.samples[b].layers[li];
            const Mat<T>& dr1 = dxh[b];
            if (pg) accumulate_linear(ls.wo, ls.bo, dr1, lt.o);
            const Mat<T> d_o = dr1 * ls.wo.value;
            Mat<T> dq(np, d), dkm(np, d), dv(np, d);
            for (Eigen::Index h = 0; h < heads; ++h) {
                const auto a = lt.attn.middleRows(h * np, np);
                const auto doh = d_o.middleCols(h * dk, dk);
                const Mat<T> da = doh * lt.v.middleCols(h * dk, dk).transpose();
                dv.middleCols(h * dk, dk).noalias() = a.transpose() * doh;
                const Mat<T> rowdot = (da.array() * a.array()).rowwise().sum().matrix();
                Mat<T> ds = (a.array() * (da.colwise() - rowdot.col(0)).array()).matrix();
                dbias[li] += ds;
                ds *= inv_sqrt_dk;
                dq.middleCols(h * dk, dk).noalias() = ds * lt.k.middleCols(h * dk, dk);
                dkm.middleCols(h * dk, dk).noalias() = ds.transpose() * lt.q.middleCols(h * dk, dk);
            }
            if (pg) {
                accumulate_linear(ls.wq, ls.bq, dq, lt.x_in);
                accumulate_linear(ls.wk, ls.bk, dkm, lt.x_in);
                accumulate_linear(ls.wv, ls.bv, dv, lt.x_in);
            }
            dx[b] = dr1;
            dx[b].noalias() += dq * ls.wq.value;
            dx[b].noalias() += dkm * ls.wk.value;
            dx[b].noalias() += dv * ls.wv.value;
        }
    }

    // Edge path, last layer first. The last layer's updated edges feed nothing.
    if (pg) {
        Mat<T> de_out = Mat<T>::Zero(np, np);
        for (std::size_t li = cfg.layers; li-- > 0;) {
            auto& ls = s.layers[li];
            const auto& et = tr.edges[li];
            std::vector<Mat<T>> dflat(1, Mat<T>(Eigen::Map<const Mat<T>>(de_out.data(), np2, 1)));
            bn_backward(ls.bn_edge, et.bn, {&et.out_pre}, dflat, true);
            const Mat<T>& dout_pre = dflat[0];
            const Eigen::Map<const Mat<T>> eflat(et.e_in.data(), np2, 1);
            accumulate_linear(ls.edge_w2, ls.edge_b2, dout_pre, et.hidden_act);
            const Mat<T> dhid =
                ((dout_pre * ls.edge_w2.value).array() * gelu_grad_m(et.hidden_pre).array()).matrix();
            accumulate_linear(ls.edge_w1, ls.edge_b1, dhid, Mat<T>(eflat));
            Mat<T> de_in = dhid * ls.edge_w1.value;  // P^2 x 1

            const Eigen::Map<const Mat<T>> dbf(dbias[li].data(), np2, 1);
            const Mat<T> phi = softplus_m(et.gain_z);
            const Mat<T> sig = sigmoid_m(et.gain_z);
            const Mat<T> dz = ((phi.array() + T(kEdgeLogEps)).inverse() * sig.array()).matrix();  // P^2 x H
            for (Eigen::Index h = 0; h < heads; ++h) {
                const Mat<T> dzh = (dbf.array() * dz.col(h).array()).matrix() / T(heads);
                ls.edge_gain_w.grad(0, h) += (dzh.array() * eflat.array()).sum();
                ls.edge_gain_b.grad(0, h) += dzh.sum();
                de_in += dzh * ls.edge_gain_w.value(0, h);
            }
            de_out = Eigen::Map<Mat<T>>(de_in.data(), np, np);
        }
    }

    // Positional encoding.
    if (pg) {
        Mat<T> dpe = Mat<T>::Zero(np, d);
        for (const auto& v : dx) dpe += v;
        accumulate_linear(s.pe_w, s.pe_b, dpe, tr.pe_inputs);
    }

    InputGradients<T> in;
    if (opt.input_grads) {
        in.mut.resize(static_cast<Eigen::Index>(bsz), static_cast<Eigen::Index>(g.n_genes));
        in.cnv.resize(static_cast<Eigen::Index>(bsz), static_cast<Eigen::Index>(g.n_genes));
    }

    // Pooling and FiLM, per sample.
    for (std::size_t b = 0; b < bsz; ++b) {
        const auto& st = tr.samples[b];
        const Mat<T>& dz = dx[b];  // d tokens
        const Mat<T> t = pool_tanh(s, g, st.pool_proj);
        const auto nm = static_cast<Eigen::Index>(g.membership_size());
        Mat<T> dh = Mat<T>::Zero(static_cast<Eigen::Index>(g.n_genes), d);
        Mat<T> ds(nm, 1);
        for (std::size_t p = 0; p < g.n_pathways; ++p) {
            const auto lo = static_cast<Eigen::Index>(g.offsets[p]);
            const auto hi = static_cast<Eigen::Index>(g.offsets[p + 1]);
            T dot = T(0);
            for (Eigen::Index m = lo; m < hi; ++m) {
                const auto gene = static_cast<Eigen::Index>(g.genes[static_cast<std::size_t>(m)]);
                const T dalpha = dz.row(static_cast<Eigen::Index>(p)).dot(st.gene_repr.row(gene));
                ds(m, 0) = dalpha;
                dot += st.alpha(0, m) * dalpha;
                dh.row(gene) += st.alpha(0, m) * dz.row(static_cast<Eigen::Index>(p));
            }
            for (Eigen::Index m = lo; m < hi; ++m) ds(m, 0) = st.alpha(0, m) * (ds(m, 0) - dot);
        }
        const Mat<T> dpre = ((ds * s.pool_context.value).array() * (T(1) - t.array().square())).matrix();  // M x d
        Mat<T> dproj = Mat<T>::Zero(static_cast<Eigen::Index>(g.n_genes), d);
        for (std::size_t p = 0; p < g.n_pathways; ++p) {
            for (std::size_t m = g.offsets[p]; m < g.offsets[p + 1]; ++m) {
                const auto mi = static_cast<Eigen::Index>(m);
                dproj.row(static_cast<Eigen::Index>(g.genes[m])) += dpre.row(mi);
                if (pg) s.pool_bias.grad.row(static_cast<Eigen::Index>(p)) += dpre.row(mi);
            }
        }
        if (pg) {
            s.pool_context.grad.noalias() += ds.transpose() * t;
            accumulate_linear(s.pool_w, s.pool_b, dproj, st.gene_repr);
        }
        dh.noalias() += dproj * s.pool_w.value;

        // FiLM: h = gamma * e + beta.
        Mat<T> dout(static_cast<Eigen::Index>(g.n_genes), 2 * d);
        dout.leftCols(d) = (dh.array() * s.gene_embed.value.array() * sigmoid_m(st.gamma_raw).array()).matrix();
        dout.rightCols(d) = dh;
        if (pg) {
            s.gene_embed.grad += (dh.array() * st.gamma.array()).matrix();
            accumulate_linear(s.film_w2, s.film_b2, dout, st.film_act);
        }
        const Mat<T> dpre1 = ((dout * s.film_w2.value).array() * gelu_grad_m(st.film_pre).array()).matrix();
        if (pg) accumulate_linear(s.film_w1, s.film_b1, dpre1, st.film_in);
        if (opt.input_grads) {
            const Mat<T> din = dpre1 * s.film_w1.value;  // G x 2
            in.mut.row(static_cast<Eigen::Index>(b)) = din.col(0).transpose();
            in.cnv.row(static_cast<Eigen::Index>(b)) = din.col(1).transpose();
        }
    }
    return in;
}

ParamCount count_params(const ModelConfig& config, std::size_t n_genes, std::size_t n_pathways) {
    ParamCount c;
    // Shapes only; initial values are irrelevant to the count.
    c.enumerated = init_model<float>(config, n_genes, n_pathways, 0).param_count();
    const std::size_t d = config.d, dh = config.d_h, L = config.layers, H = config.heads;
    c.closed_form = n_genes * d + 2 * (2 * dh + dh * 2 * d) + d * d + n_pathways * d + d +
                    L * (12 * d * d + 8 * d + H + 3) + d * d / 2 + 3 * d / 2 + d * d + d + 2 * d + 2;
    return c;
}

std::string param_group(const std::string& name) {
    const auto pos = name.rfind('.');
    return pos == std::string::npos ? name : name.substr(0, pos);
}

#define PATHGT_INSTANTIATE(T)                                                                                        \
    template ModelState<T> init_model<T>(const ModelConfig&, std::size_t, std::size_t, std::uint64_t);               \
    template ForwardTrace<T> forward<T>(ModelState<T>&, const Batch<T>&, const ModelGraph&, const ForwardOptions&);  \
    template ForwardTrace<T> forward_eval<T>(const ModelState<T>&, const Batch<T>&, const ModelGraph&);             \
    template InputGradients<T> backward<T>(ModelState<T>&, const ForwardTrace<T>&, const Mat<T>&, const ModelGraph&, \
                                           const BackwardOptions&);                                                  \
    template struct ForwardTrace<T>;

PATHGT_INSTANTIATE(float)
PATHGT_INSTANTIATE(double)

#undef PATHGT_INSTANTIATE

} // namespace pathgt
