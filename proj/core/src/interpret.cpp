#include "pathgt/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pathgt/error.hpp"
#include "pathgt/stats.hpp"
#include "pathgt/tensor_io.hpp"
#include "text_util.hpp"

namespace pathgt {

namespace {

constexpr std::size_t kChunk = 64;

std::size_t resolve_layer(int layer, std::size_t n_layers) {
    if (n_layers == 0) throw config_error("model has no transformer layers");
    const long idx = layer < 0 ? static_cast<long>(n_layers) + layer : layer;
    if (idx < 0 || idx >= static_cast<long>(n_layers)) {
        throw config_error("interpret.layer " + std::to_string(layer) + " out of range for " +
                           std::to_string(n_layers) + " layers");
    }
    return static_cast<std::size_t>(idx);
}

void check_both_classes(std::span<const int> labels, std::size_t min_per_class, const char* what) {
    std::size_t n1 = 0;
    for (int y : labels) n1 += y == 1;
    const std::size_t n0 = labels.size() - n1;
    if (n0 < min_per_class || n1 < min_per_class) {
        throw input_error(std::string(what) + ": needs at least " + std::to_string(min_per_class) +
                          " sample(s) of each class");
    }
}

// Descending by value, ties by index.
std::vector<std::size_t> order_desc(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
    return idx;
}

MatF rows_of(const MatD& m) { return m.cast<float>(); }

} // namespace

// --- integrated gradients ------------------------------------------------

std::vector<double> integrated_gradients(const ScoreFn& f, std::span<const double> x, std::span<const double> baseline,
                                         std::size_t steps) {
    if (steps < 1) throw config_error("integrated gradients: steps must be at least 1");
    if (x.size() != baseline.size()) throw input_error("integrated gradients: input and baseline differ in length");
    const std::size_t n = x.size();
    std::vector<double> sum(n, 0.0), point(n), grad(n);
    for (std::size_t k = 0; k < steps; ++k) {
        const double a = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
        for (std::size_t i = 0; i < n; ++i) point[i] = baseline[i] + a * (x[i] - baseline[i]);
        f(point, &grad);
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(grad[i])) throw runtime_error("integrated gradients: non-finite gradient");
            sum[i] += grad[i];
        }
    }
    for (std::size_t i = 0; i < n; ++i) sum[i] = (x[i] - baseline[i]) * sum[i] / static_cast<double>(steps);
    return sum;
}

std::vector<double> class1_logits(const ModelState<double>& state, const ModelGraph& graph, const Batch<double>& batch) {
    std::vector<double> out;
    for (std::size_t start = 0; start < batch.size(); start += kChunk) {
        const auto n = static_cast<Eigen::Index>(std::min(kChunk, batch.size() - start));
        const auto s0 = static_cast<Eigen::Index>(start);
        Batch<double> chunk{batch.mut.middleRows(s0, n), batch.cnv.middleRows(s0, n)};
        for (const auto& st : forward_eval(state, chunk, graph).samples) out.push_back(st.logits(0, 1));
    }
    return out;
}

InputGradients<double> model_integrated_gradients(ModelState<double>& state, const ModelGraph& graph,
                                                  const Batch<double>& sample, const Batch<double>& baselines,
                                                  std::size_t steps) {
    if (steps < 1) throw config_error("integrated gradients: steps must be at least 1");
    if (sample.size() != 1) throw input_error("model_integrated_gradients: expects one sample");
    const auto g = sample.mut.cols();
    Batch<double> zero{MatD::Zero(1, g), MatD::Zero(1, g)};
    const Batch<double>& base = baselines.size() == 0 ? zero : baselines;
    InputGradients<double> total{MatD::Zero(1, g), MatD::Zero(1, g)};
    const auto s = static_cast<Eigen::Index>(steps);
    MatD dlogits = MatD::Zero(s, 2);
    dlogits.col(1).setOnes();
    BackwardOptions bo;
    bo.param_grads = false;
    bo.input_grads = true;
    for (std::size_t b = 0; b < base.size(); ++b) {
        const auto bi = static_cast<Eigen::Index>(b);
        const MatD dm = sample.mut - base.mut.row(bi);
        const MatD dc = sample.cnv - base.cnv.row(bi);
        Batch<double> path{MatD(s, g), MatD(s, g)};
        for (Eigen::Index k = 0; k < s; ++k) {
            const double a = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
            path.mut.row(k) = base.mut.row(bi) + a * dm;
            path.cnv.row(k) = base.cnv.row(bi) + a * dc;
        }
        const auto tr = forward_eval(state, path, graph);
        const auto grads = backward(state, tr, dlogits, graph, bo);
        if (!grads.mut.allFinite() || !grads.cnv.allFinite()) {
            throw runtime_error("integrated gradients: non-finite gradient");
        }
        total.mut += (dm.array() * grads.mut.colwise().sum().array()).matrix() / static_cast<double>(steps);
        total.cnv += (dc.array() * grads.cnv.colwise().sum().array()).matrix() / static_cast<double>(steps);
    }
    total.mut /= static_cast<double>(base.size());
    total.cnv /= static_cast<double>(base.size());
    return total;
}

std::vector<double> class_delta(const MatD& values, std::span<const int> labels) {
    if (static_cast<std::size_t>(values.rows()) != labels.size()) throw input_error("class_delta: label count mismatch");
    check_both_classes(labels, 1, "class_delta");
    std::vector<double> s0(static_cast<std::size_t>(values.cols()), 0.0), s1(s0);
    double n0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        auto& s = labels[static_cast<std::size_t>(i)] == 1 ? s1 : s0;
        (labels[static_cast<std::size_t>(i)] == 1 ? n1 : n0) += 1;
        for (Eigen::Index j = 0; j < values.cols(); ++j) s[static_cast<std::size_t>(j)] += values(i, j);
    }
    std::vector<double> d(s0.size());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = s1[j] / n1 - s0[j] / n0;
    return d;
}

void finalize_attributions(AttributionSet& attr, const ModelGraph& graph) {
    attr.phi_gene = attr.phi_mut + attr.phi_cnv;
    const auto n = attr.phi_gene.rows();
    attr.phi_pathway = MatD::Zero(n, static_cast<Eigen::Index>(graph.n_pathways));
    for (std::size_t p = 0; p < graph.n_pathways; ++p) {
        const std::size_t cnt = graph.offsets[p + 1] - graph.offsets[p];
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t m = graph.offsets[p]; m < graph.offsets[p + 1]; ++m) {
                s += attr.phi_gene(i, static_cast<Eigen::Index>(graph.genes[m]));
            }
            attr.phi_pathway(i, static_cast<Eigen::Index>(p)) = s / static_cast<double>(cnt);
        }
    }
    attr.delta_gene = class_delta(attr.phi_gene, attr.labels);
    attr.delta_pathway = class_delta(attr.phi_pathway, attr.labels);
}

AttributionSet attribute_gradients(const ModelState<float>& state, const ModelGraph& graph, const Batch<float>& samples,
                                   std::span<const int> labels, const Batch<float>& baselines, std::size_t steps) {
    if (labels.size() != samples.size()) throw input_error("attribute_gradients: label count mismatch");
    check_both_classes(labels, 1, "attribute_gradients");
    ModelState<double> sd = cast_state<double>(state);
    const Batch<double> base{baselines.mut.cast<double>(), baselines.cnv.cast<double>()};
    AttributionSet attr;
    const auto n = static_cast<Eigen::Index>(samples.size());
    attr.phi_mut.resize(n, samples.mut.cols());
    attr.phi_cnv.resize(n, samples.mut.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Batch<double> x{samples.mut.row(i).cast<double>(), samples.cnv.row(i).cast<double>()};
        const auto ig = model_integrated_gradients(sd, graph, x, base, steps);
        attr.phi_mut.row(i) = ig.mut;
        attr.phi_cnv.row(i) = ig.cnv;
    }
    attr.labels.assign(labels.begin(), labels.end());
    finalize_attributions(attr, graph);
    attr.provenance = {{"method", base.size() == 0 ? "integrated_gradients" : "expected_gradients"},
                       {"baseline", base.size() == 0 ? "zeros" : "training_samples"},
                       {"baseline_count", base.size() == 0 ? 1 : base.size()},
                       {"steps", steps},
                       {"target", "class1_logit"},
                       {"rule", "midpoint"}};
    return attr;
}

void write_attribution_cache(const std::filesystem::path& path, const AttributionSet& attr) {
    auto tensor = [](const std::string& name, const MatD& m) {
        NamedTensor t;
        t.name = name;
        t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
        const MatF f = rows_of(m);
        t.data.assign(f.data(), f.data() + f.size());
        return t;
    };
    const std::vector<NamedTensor> tensors{tensor("phi_mut", attr.phi_mut), tensor("phi_cnv", attr.phi_cnv)};
    const nlohmann::json extra = {
        {"kind", "attributions"}, {"labels", attr.labels}, {"rows", attr.rows}, {"provenance", attr.provenance}};
    write_tensor_container(path, extra, tensors);
}

AttributionSet read_attribution_cache(const std::filesystem::path& path, const ModelGraph& graph) {
    const TensorContainer c = read_tensor_container(path);
    if (c.manifest.value("kind", "") != "attributions") throw input_error(path.string() + ": not an attribution cache");
    auto matrix = [&](const std::string& name) {
        const auto& t = c.get(name);
        MatF m(static_cast<Eigen::Index>(t.shape.at(0)), static_cast<Eigen::Index>(t.shape.at(1)));
        std::copy(t.data.begin(), t.data.end(), m.data());
        return MatD(m.cast<double>());
    };
    AttributionSet a;
    a.phi_mut = matrix("phi_mut");
    a.phi_cnv = matrix("phi_cnv");
    a.labels = c.manifest.at("labels").get<std::vector<int>>();
    a.rows = c.manifest.at("rows").get<std::vector<std::size_t>>();
    a.provenance = c.manifest.at("provenance");
    if (static_cast<std::size_t>(a.phi_mut.cols()) != graph.n_genes) {
        throw input_error(path.string() + ": gene count does not match the model graph");
    }
    finalize_attributions(a, graph);
    return a;
}

// --- rankings ------------------------------------------------------------

std::vector<std::size_t> ranks_of(std::span<const std::string> ids, std::span<const double> deltas) {
    if (ids.size() != deltas.size()) throw input_error("ranks_of: ids and deltas differ in length");
    std::vector<std::size_t> idx(ids.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
        if (deltas[a] != deltas[b]) return deltas[a] > deltas[b];
        return ids[a] < ids[b];
    });
    std::vector<std::size_t> rank(ids.size());
    for (std::size_t r = 0; r < idx.size(); ++r) rank[idx[r]] = r + 1;
    return rank;
}

std::vector<RankedItem> rank_differential(std::span<const std::string> ids,
                                          const std::vector<std::vector<double>>& per_run_deltas, double top_fraction) {
    if (per_run_deltas.empty()) throw input_error("rank_differential: no runs");
    const std::size_t n = ids.size();
    const auto top = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(n)));
    std::vector<RankedItem> items(n);
    for (std::size_t i = 0; i < n; ++i) {
        items[i].id = ids[i];
        items[i].fold_count = per_run_deltas.size();
    }
    for (const auto& d : per_run_deltas) {
        const auto r = ranks_of(ids, d);
        for (std::size_t i = 0; i < n; ++i) {
            items[i].delta += d[i];
            items[i].mean_rank += static_cast<double>(r[i]);
            items[i].recurrence += r[i] <= top;
        }
    }
    const auto runs = static_cast<double>(per_run_deltas.size());
    for (auto& it : items) {
        it.delta /= runs;
        it.mean_rank /= runs;
    }
    std::sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
        if (a.delta != b.delta) return a.delta > b.delta;
        return a.id < b.id;
    });
    return items;
}

// --- crosstalk -----------------------------------------------------------

void finalize_crosstalk(Crosstalk& c) {
    if (c.per_sample.size() != c.labels.size()) throw input_error("crosstalk: label count mismatch");
    check_both_classes(c.labels, 1, "crosstalk");
    const auto p = c.per_sample.front().rows();
    c.class0 = MatD::Zero(p, p);
    c.class1 = MatD::Zero(p, p);
    double n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < c.per_sample.size(); ++i) {
        if (c.labels[i] == 1) {
            c.class1 += c.per_sample[i];
            n1 += 1;
        } else {
            c.class0 += c.per_sample[i];
            n0 += 1;
        }
    }
    c.class0 /= n0;
    c.class1 /= n1;
}

Crosstalk crosstalk_matrices(const ModelState<float>& state, const ModelGraph& graph, const Batch<float>& samples,
                             std::span<const int> labels, int layer) {
    Crosstalk c;
    c.layer = resolve_layer(layer, state.config.layers);
    c.labels.assign(labels.begin(), labels.end());
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
        const auto n = static_cast<Eigen::Index>(std::min(kChunk, samples.size() - start));
        const auto s0 = static_cast<Eigen::Index>(start);
        Batch<float> chunk{samples.mut.middleRows(s0, n), samples.cnv.middleRows(s0, n)};
        const auto tr = forward_eval(state, chunk, graph);
        for (std::size_t b = 0; b < tr.batch_size(); ++b) c.per_sample.push_back(tr.mean_attention(b, c.layer).cast<double>());
    }
    finalize_crosstalk(c);
    return c;
}

std::vector<EdgeStat> rewiring_test(const Crosstalk& c, const RewiringOptions& options) {
    check_both_classes(c.labels, 2, "rewiring_test");
    const auto p = static_cast<std::size_t>(c.class0.rows());
    const std::size_t n = c.per_sample.size();
    std::vector<EdgeStat> out;
    out.reserve(p * (p - 1));
    std::vector<double> a, b;
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            if (i == j) continue;
            EdgeStat e;
            e.source = i;
            e.target = j;
            e.mean_met = c.class1(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            e.mean_pri = c.class0(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            e.delta = e.mean_met - e.mean_pri;
            if (options.test == EdgeTest::welch) {
                a.clear();
                b.clear();
                for (std::size_t s = 0; s < n; ++s) {
                    const double v = c.per_sample[s](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    (c.labels[s] == 1 ? a : b).push_back(v);
                }
                e.p = welch_test(a, b).p;
            }
            out.push_back(e);
        }
    }
    if (options.test == EdgeTest::permutation) {
        const std::size_t m = out.size();
        std::vector<double> values(n * m);
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t k = 0; k < m; ++k) {
                values[s * m + k] = c.per_sample[s](static_cast<Eigen::Index>(out[k].source),
                                                    static_cast<Eigen::Index>(out[k].target));
            }
        }
        const auto pv = permutation_pvalues(values, m, c.labels, options.permutations, options.seed);
        for (std::size_t k = 0; k < m; ++k) out[k].p = pv[k];
    }
    std::vector<double> pvals;
    for (const auto& e : out) pvals.push_back(e.p);
    const auto q = bh_adjust(pvals);
    for (std::size_t k = 0; k < out.size(); ++k) out[k].q = q[k];
    return out;
}

std::vector<EdgeRow> novel_edges(const MatD& learned, const MatD& prior_adjacency, std::span<const EdgeStat> stats,
                                 std::span<const double> delta_pathway, std::size_t top_pathways) {
    const auto p = static_cast<std::size_t>(learned.rows());
    if (delta_pathway.size() != p || prior_adjacency.rows() != learned.rows()) {
        throw input_error("novel_edges: dimension mismatch");
    }
    if (stats.size() != p * (p - 1)) throw input_error("novel_edges: edge statistics do not cover all directed pairs");
    auto order = order_desc(delta_pathway);
    order.resize(std::min(top_pathways, p));
    std::vector<EdgeRow> rows;
    if (order.size() < 2) return rows;
    std::sort(order.begin(), order.end());
    for (auto i : order) {
        for (auto j : order) {
            if (i == j) continue;
            EdgeRow r;
            r.source = i;
            r.target = j;
            r.learned = learned(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            r.base = prior_adjacency(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            r.is_new = r.base <= 0.0;
            r.stat = stats[i * (p - 1) + (j < i ? j : j - 1)];
            rows.push_back(r);
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const EdgeRow& a, const EdgeRow& b) { return a.learned > b.learned; });
    return rows;
}

std::string edge_table_csv(std::span<const EdgeRow> rows, std::span<const std::string> pathway_ids) {
    using detail::format_double;
    std::string out = "source,target,learned_weight,base_weight,new,mean_met,mean_pri,delta,p_value,q_value\n";
    for (const auto& r : rows) {
        out += pathway_ids[r.source] + "," + pathway_ids[r.target] + "," + format_double(r.learned) + "," +
               format_double(r.base) + "," + (r.is_new ? "1" : "0") + "," + format_double(r.stat.mean_met) + "," +
               format_double(r.stat.mean_pri) + "," + format_double(r.stat.delta) + "," + format_double(r.stat.p) +
               "," + format_double(r.stat.q) + "\n";
    }
    return out;
}

MatD coactivation_matrix(const AttributionSet& attr) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < attr.labels.size(); ++i)
        if (attr.labels[i] == 1) rows.push_back(static_cast<Eigen::Index>(i));
    if (rows.size() < 2) throw input_error("coactivation_matrix: needs at least two class-1 samples");
    const auto p = attr.phi_pathway.cols();
    MatD x(static_cast<Eigen::Index>(rows.size()), p);
    for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = attr.phi_pathway.row(rows[r]);
    x.rowwise() -= x.colwise().mean();
    const MatD cov = x.transpose() * x;
    MatD corr = MatD::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            const double den = std::sqrt(cov(i, i) * cov(j, j));
            corr(i, j) = den > 0.0 ? cov(i, j) / den : 0.0;
        }
    }
    return corr;
}

// --- hubs ----------------------------------------------------------------

HubHierarchy hub_hierarchy(std::span<const double> delta_pathway, const MatD& adjacency, std::size_t top_hubs,
                           std::size_t levels) {
    const auto p = static_cast<std::size_t>(adjacency.rows());
    if (delta_pathway.size() != p || adjacency.cols() != adjacency.rows()) throw input_error("hub_hierarchy: dimension mismatch");
    HubHierarchy h;
    h.s.resize(p);
    for (std::size_t i = 0; i < p; ++i) h.s[i] = std::max(delta_pathway[i], 0.0);
    const auto pi = static_cast<Eigen::Index>(p);
    h.E = MatD::Zero(pi, pi);
    h.H.assign(p, 0.0);
    for (Eigen::Index i = 0; i < pi; ++i) {
        for (Eigen::Index j = 0; j < pi; ++j) {
            if (i == j) continue;
            h.E(i, j) = adjacency(i, j) * h.s[static_cast<std::size_t>(i)] * h.s[static_cast<std::size_t>(j)];
            h.H[static_cast<std::size_t>(i)] += h.E(i, j);
        }
    }
    for (auto i : order_desc(h.H)) {
        if (h.hubs.size() >= top_hubs || !(h.H[i] > 0.0)) break;
        HubNode root{i, h.H[i], {}};
        std::vector<bool> visited(p, false);
        visited[i] = true;
        h.hubs.push_back(std::move(root));
        std::vector<HubNode*> frontier{&h.hubs.back()};
        for (std::size_t level = 0; level < levels && !frontier.empty(); ++level) {
            std::vector<HubNode*> next;
            for (HubNode* node : frontier) {
                std::vector<double> e(p);
                for (std::size_t j = 0; j < p; ++j) {
                    e[j] = h.E(static_cast<Eigen::Index>(node->pathway), static_cast<Eigen::Index>(j));
                }
                for (auto j : order_desc(e)) {
                    if (!(e[j] > 0.0)) break;
                    if (visited[j]) continue;
                    visited[j] = true;
                    node->children.push_back({j, e[j], {}});
                }
                for (auto& c : node->children) next.push_back(&c);
            }
            frontier = std::move(next);
        }
    }
    return h;
}

namespace {
nlohmann::json node_json(const HubNode& n, std::span<const std::string> ids) {
    nlohmann::json children = nlohmann::json::array();
    for (const auto& c : n.children) children.push_back(node_json(c, ids));
    return {{"pathway", ids[n.pathway]}, {"E", n.score}, {"children", children}};
}
} // namespace

nlohmann::json to_json(const HubHierarchy& h, std::span<const std::string> ids) {
    nlohmann::json hubs = nlohmann::json::array();
    for (const auto& root : h.hubs) {
        nlohmann::json children = nlohmann::json::array();
        for (const auto& c : root.children) children.push_back(node_json(c, ids));
        hubs.push_back({{"hub", ids[root.pathway]}, {"H", root.score}, {"children", children}});
    }
    nlohmann::json scores = nlohmann::json::array();
    for (std::size_t i = 0; i < h.H.size(); ++i) scores.push_back({{"pathway", ids[i]}, {"s", h.s[i]}, {"H", h.H[i]}});
    return {{"hubs", hubs}, {"scores", scores}};
}

// --- gene signatures -----------------------------------------------------

GeneSignature gene_signatures(const ModelState<float>& state, const ModelGraph& graph, const Batch<float>& samples,
                              std::span<const int> labels, const AttributionSet* attr) {
    if (labels.size() != samples.size()) throw input_error("gene_signatures: label count mismatch");
    check_both_classes(labels, 1, "gene_signatures");
    const std::size_t m = graph.membership_size();
    GeneSignature sig;
    std::vector<double> s0(m, 0.0), s1(m, 0.0);
    double n0 = 0, n1 = 0;
    std::size_t idx = 0;
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
        const auto n = static_cast<Eigen::Index>(std::min(kChunk, samples.size() - start));
        const auto st0 = static_cast<Eigen::Index>(start);
        Batch<float> chunk{samples.mut.middleRows(st0, n), samples.cnv.middleRows(st0, n)};
        const auto tr = forward_eval(state, chunk, graph);
        for (const auto& st : tr.samples) {
            const bool pos = labels[idx++] == 1;
            auto& s = pos ? s1 : s0;
            (pos ? n1 : n0) += 1;
            for (std::size_t k = 0; k < m; ++k) s[k] += static_cast<double>(st.alpha(0, static_cast<Eigen::Index>(k)));
        }
    }
    sig.alpha_class0.resize(m);
    sig.alpha_class1.resize(m);
    sig.alpha_delta.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
        sig.alpha_class0[k] = s0[k] / n0;
        sig.alpha_class1[k] = s1[k] / n1;
        sig.alpha_delta[k] = sig.alpha_class1[k] - sig.alpha_class0[k];
    }
    if (attr) {
        const auto g = static_cast<std::size_t>(attr->phi_gene.cols());
        sig.ig_class0.assign(g, 0.0);
        sig.ig_class1.assign(g, 0.0);
        double c0 = 0, c1 = 0;
        for (Eigen::Index i = 0; i < attr->phi_gene.rows(); ++i) {
            const bool pos = attr->labels[static_cast<std::size_t>(i)] == 1;
            auto& s = pos ? sig.ig_class1 : sig.ig_class0;
            (pos ? c1 : c0) += 1;
            for (std::size_t j = 0; j < g; ++j) s[j] += attr->phi_gene(i, static_cast<Eigen::Index>(j));
        }
        sig.ig_delta.resize(g);
        for (std::size_t j = 0; j < g; ++j) {
            sig.ig_class0[j] /= c0;
            sig.ig_class1[j] /= c1;
            sig.ig_delta[j] = sig.ig_class1[j] - sig.ig_class0[j];
        }
    }
    return sig;
}

// --- per-run driver ------------------------------------------------------

nlohmann::json to_json(const ExplainOptions& o) {
    return {{"steps", o.steps},
            {"baselines", o.baselines},
            {"alpha", o.alpha},
            {"top_pathways", o.top_pathways},
            {"top_hubs", o.top_hubs},
            {"levels", o.levels},
            {"layer", o.layer},
            {"test", o.rewiring.test == EdgeTest::permutation ? "permutation" : "welch"},
            {"permutations", o.rewiring.permutations},
            {"edge_matrix", o.edge_source == EdgeSource::coactivation ? "coactivation" : "attention"}};
}

ExplainOptions explain_options_from_json(const nlohmann::json& j, ExplainOptions o) {
    o.steps = j.value("steps", o.steps);
    o.baselines = j.value("baselines", o.baselines);
    o.alpha = j.value("alpha", o.alpha);
    o.top_pathways = j.value("top_pathways", o.top_pathways);
    o.top_hubs = j.value("top_hubs", o.top_hubs);
    o.levels = j.value("levels", o.levels);
    o.layer = j.value("layer", o.layer);
    o.rewiring.permutations = j.value("permutations", o.rewiring.permutations);
    if (j.contains("test")) {
        const auto t = j.at("test").get<std::string>();
        if (t == "welch") {
            o.rewiring.test = EdgeTest::welch;
        } else if (t == "permutation") {
            o.rewiring.test = EdgeTest::permutation;
        } else {
            throw config_error("interpret.test must be welch|permutation, got '" + t + "'");
        }
    }
    if (j.contains("edge_matrix")) {
        const auto m = j.at("edge_matrix").get<std::string>();
        if (m == "attention") {
            o.edge_source = EdgeSource::attention;
        } else if (m == "coactivation") {
            o.edge_source = EdgeSource::coactivation;
        } else {
            throw config_error("interpret.edge_matrix must be attention|coactivation, got '" + m + "'");
        }
    }
    if (o.steps < 1) throw config_error("interpret.steps must be at least 1");
    if (!(o.alpha > 0.0 && o.alpha < 1.0)) throw config_error("interpret.alpha must lie in (0, 1)");
    return o;
}

RunExplanation explain_run(const ModelState<float>& state, const ModelGraph& graph, const CohortMatrix& normalized,
                           const FoldSplit& split, const ExplainOptions& options, InputArm arm) {
    RunExplanation out;
    const auto& rows = split.test_idx;
    std::vector<int> labels;
    for (auto r : rows) labels.push_back(normalized.labels[r]);
    const Batch<float> samples = make_batch<float>(normalized, rows, arm);

    std::vector<std::size_t> base_rows;
    if (options.baselines > 0) {
        base_rows = split.train_idx;
        Rng rng(split.fold_seed());
        rng.shuffle(base_rows);
        base_rows.resize(std::min(options.baselines, base_rows.size()));
    }
    const Batch<float> baselines = make_batch<float>(normalized, base_rows, arm);

    out.attr = attribute_gradients(state, graph, samples, labels, baselines, options.steps);
    out.attr.rows = rows;
    out.attr.provenance["fold"] = split.fold_index;
    out.attr.provenance["seed"] = split.base_seed;
    out.crosstalk = crosstalk_matrices(state, graph, samples, labels, options.layer);
    out.signature = gene_signatures(state, graph, samples, labels, &out.attr);
    return out;
}

} // namespace pathgt
