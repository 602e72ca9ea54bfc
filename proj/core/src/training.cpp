#include "pathgt/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "pathgt/error.hpp"
#include "pathgt/stats.hpp"
#include "pathgt/tensor_io.hpp"
#include "text_util.hpp"

namespace pathgt {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr std::size_t kEvalChunk = 64;
// Offsets the dropout/sign-flip stream away from the initialization stream.
constexpr std::uint64_t kNoiseStream = 0x9E3779B97F4A7C15ULL;

const char* loss_name(LossKind k) { return k == LossKind::focal ? "focal" : "weighted_ce"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw runtime_error("cannot write " + path.string());
    f << text;
}

std::vector<int> labels_at(const CohortMatrix& c, std::span<const std::size_t> rows) {
    std::vector<int> y;
    y.reserve(rows.size());
    for (auto r : rows) y.push_back(c.labels[r]);
    return y;
}

MeanSd mean_sd_finite(const std::vector<double>& v) {
    std::vector<double> f;
    for (double x : v)
        if (std::isfinite(x)) f.push_back(x);
    if (f.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    return {mean(f), stddev(f)};
}

nlohmann::json mean_sd_json(const MeanSd& m) {
    return {{"mean", finite_or_null(m.mean)}, {"sd", finite_or_null(m.sd)}};
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_loss,val_auroc,lr,clipped_fraction\n";
    for (const auto& e : log) {
        out += std::to_string(e.epoch) + "," + detail::format_double(e.train_loss) + "," +
               detail::format_double(e.val_auroc) + "," + detail::format_double(e.lr) + "," +
               detail::format_double(e.clipped_fraction) + "\n";
    }
    return out;
}

} // namespace

// --- spec ----------------------------------------------------------------

void TrainSpec::validate() const {
    if (min_epochs > max_epochs) throw config_error("train: min_epochs must not exceed max_epochs");
    if (patience < 1) throw config_error("train: patience must be at least 1");
    if (!(clip_norm > 0.0)) throw config_error("train: clip_norm must be positive");
    if (batch_size < 1) throw config_error("train: batch_size must be at least 1");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw config_error("train: lr and weight_decay must be non-negative");
    if (!(focal_gamma >= 0.0)) throw config_error("train: focal_gamma must be non-negative");
}

nlohmann::json to_json(const TrainSpec& s) {
    return {{"lr", s.lr},
            {"weight_decay", s.weight_decay},
            {"batch_size", s.batch_size},
            {"max_epochs", s.max_epochs},
            {"min_epochs", s.min_epochs},
            {"patience", s.patience},
            {"clip_norm", s.clip_norm},
            {"loss", loss_name(s.loss_kind)},
            {"focal_gamma", s.focal_gamma}};
}

TrainSpec train_spec_from_json(const nlohmann::json& j, TrainSpec s) {
    s.lr = j.value("lr", s.lr);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.max_epochs = j.value("max_epochs", s.max_epochs);
    s.min_epochs = j.value("min_epochs", s.min_epochs);
    s.patience = j.value("patience", s.patience);
    s.clip_norm = j.value("clip_norm", s.clip_norm);
    s.focal_gamma = j.value("focal_gamma", s.focal_gamma);
    if (j.contains("loss")) {
        const auto k = j.at("loss").get<std::string>();
        if (k == "weighted_ce") {
            s.loss_kind = LossKind::weighted_ce;
        } else if (k == "focal") {
            s.loss_kind = LossKind::focal;
        } else {
            throw config_error("train.loss must be weighted_ce|focal, got '" + k + "'");
        }
    }
    s.validate();
    return s;
}

// --- loss and optimizer --------------------------------------------------

std::array<double, 2> class_weights(std::span<const int> labels) {
    std::array<double, 2> n{0.0, 0.0};
    for (int y : labels) {
        if (y != 0 && y != 1) throw input_error("class_weights: labels must be 0 or 1");
        n[static_cast<std::size_t>(y)] += 1.0;
    }
    if (n[0] == 0.0 || n[1] == 0.0) throw input_error("class_weights: both classes must be present");
    const double total = n[0] + n[1];
    return {total / (2.0 * n[0]), total / (2.0 * n[1])};
}

template <typename T>
double loss(const Mat<T>& logits, std::span<const int> labels, const std::array<double, 2>& weights,
            const TrainSpec& spec, Mat<T>* grad) {
    const auto b = logits.rows();
    if (logits.cols() != 2 || static_cast<std::size_t>(b) != labels.size() || b == 0) {
        throw input_error("loss: logits must be B x 2 with B labels");
    }
    if (!logits.allFinite()) throw runtime_error("loss: non-finite logits");
    if (grad) grad->resize(b, 2);
    const bool focal = spec.loss_kind == LossKind::focal;
    const double gamma = spec.focal_gamma;
    double total = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double z0 = static_cast<double>(logits(i, 0)), z1 = static_cast<double>(logits(i, 1));
        const double m = std::max(z0, z1);
        const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
        const double p[2] = {std::exp(z0 - lse), std::exp(z1 - lse)};
        const double log_pt = (y == 1 ? z1 : z0) - lse;
        const double pt = p[y];
        const double w = weights[static_cast<std::size_t>(y)];
        double li = -w * log_pt;
        // d(loss_i)/dz_c = coef * (p_c - [c == y])
        double coef = w;
        if (focal) {
            const double q = 1.0 - pt;
            const double mod = std::pow(q, gamma);
            li *= mod;
            const double dmod = (gamma > 0.0 && q > 0.0) ? gamma * std::pow(q, gamma - 1.0) : 0.0;
            coef = w * (mod - dmod * pt * log_pt);
        }
        total += li;
        if (grad) {
            for (int c = 0; c < 2; ++c) {
                (*grad)(i, c) = T(coef * (p[c] - (c == y ? 1.0 : 0.0)) / static_cast<double>(b));
            }
        }
    }
    return total / static_cast<double>(b);
}

template <typename T>
StepInfo adamw_step(ModelState<T>& s, const TrainSpec& spec) {
    double sq = 0.0;
    s.for_each_param([&](const Param<T>& p) { sq += p.grad.template cast<double>().squaredNorm(); });
    StepInfo info;
    info.grad_norm = std::sqrt(sq);
    if (!std::isfinite(info.grad_norm)) throw runtime_error("adamw_step: non-finite gradient, step aborted");
    const double scale = info.grad_norm > spec.clip_norm ? spec.clip_norm / info.grad_norm : 1.0;
    info.clipped = scale < 1.0;
    s.step += 1;
    const double t = static_cast<double>(s.step);
    const double bc1 = 1.0 - std::pow(kBeta1, t);
    const double bc2 = 1.0 - std::pow(kBeta2, t);
    const T b1 = T(kBeta1), b2 = T(kBeta2), sc = T(scale);
    const T step_size = T(spec.lr / bc1);
    const T inv_bc2 = T(1.0 / bc2);
    const T decay = T(1.0 - spec.lr * spec.weight_decay);
    s.for_each_param([&](Param<T>& p) {
        const auto g = (p.grad.array() * sc).eval();
        p.adam_m = (b1 * p.adam_m.array() + (T(1) - b1) * g).matrix();
        p.adam_v = (b2 * p.adam_v.array() + (T(1) - b2) * g.square()).matrix();
        if (p.decay) p.value *= decay;
        p.value.array() -= step_size * p.adam_m.array() / ((p.adam_v.array() * inv_bc2).sqrt() + T(kAdamEps));
    });
    return info;
}

// --- checkpoints ---------------------------------------------------------

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelState<T>& state, const nlohmann::json& extra) {
    std::vector<NamedTensor> tensors;
    auto add = [&](const std::string& name, const Mat<T>& m) {
        NamedTensor t;
        t.name = name;
        t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
        t.data.resize(static_cast<std::size_t>(m.size()));
        // Row-major storage, so data() is already in row order.
        for (Eigen::Index i = 0; i < m.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
        tensors.push_back(std::move(t));
    };
    state.for_each_param([&](const Param<T>& p) {
        add(p.name, p.value);
        add(p.name + "/adam_m", p.adam_m);
        add(p.name + "/adam_v", p.adam_v);
    });
    state.for_each_buffer([&](const std::string& name, const Mat<T>& m) { add(name, m); });
    nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
    manifest["kind"] = "checkpoint";
    manifest["model"] = to_json(state.config);
    manifest["n_genes"] = state.n_genes;
    manifest["n_pathways"] = state.n_pathways;
    manifest["step"] = state.step;
    write_tensor_container(path, manifest, tensors);
}

ModelState<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* manifest) {
    const TensorContainer c = read_tensor_container(path);
    if (c.manifest.value("kind", "") != "checkpoint") throw input_error(path.string() + ": not a model checkpoint");
    const ModelConfig cfg = model_config_from_json(c.manifest.at("model"));
    ModelState<float> s = init_model<float>(cfg, c.manifest.at("n_genes").get<std::size_t>(),
                                            c.manifest.at("n_pathways").get<std::size_t>(), 0);
    s.step = c.manifest.value("step", std::int64_t{0});
    auto fill = [&](const std::string& name, MatF& m) {
        const NamedTensor& t = c.get(name);
        if (t.shape.size() != 2 || t.shape[0] != static_cast<std::size_t>(m.rows()) ||
            t.shape[1] != static_cast<std::size_t>(m.cols())) {
            throw input_error(path.string() + ": tensor '" + name + "' has an unexpected shape");
        }
        std::copy(t.data.begin(), t.data.end(), m.data());
    };
    s.for_each_param([&](Param<float>& p) {
        fill(p.name, p.value);
        fill(p.name + "/adam_m", p.adam_m);
        fill(p.name + "/adam_v", p.adam_v);
    });
    s.for_each_buffer([&](const std::string& name, MatF& m) { fill(name, m); });
    if (manifest) *manifest = c.manifest;
    return s;
}

// --- data preparation ----------------------------------------------------

nlohmann::json to_json(const PreprocessSpec& s) {
    return {{"min_freq", s.min_freq},
            {"cnv_alter_threshold", s.cnv_threshold},
            {"min_genes", s.min_genes},
            {"graph_mode", to_string(s.graph_mode)}};
}

PreprocessSpec preprocess_spec_from_json(const nlohmann::json& j, PreprocessSpec s) {
    s.min_freq = j.value("min_freq", s.min_freq);
    s.cnv_threshold = j.value("cnv_alter_threshold", s.cnv_threshold);
    s.min_genes = j.value("min_genes", s.min_genes);
    if (j.contains("graph_mode")) s.graph_mode = graph_mode_from_string(j.at("graph_mode").get<std::string>());
    if (!(s.min_freq >= 0.0 && s.min_freq <= 1.0)) throw config_error("preprocess.min_freq must lie in [0, 1]");
    return s;
}

PreparedCohort prepare_cohort(const CohortMatrix& raw, std::span<const GeneSet> pathways, const PreprocessSpec& spec,
                              std::size_t k, const std::filesystem::path& cache_dir) {
    PreparedCohort out;
    out.cohort = filter_genes(raw, spec.min_freq, spec.cnv_threshold);
    const auto indexed = map_gene_sets(pathways, out.cohort.gene_ids);
    out.prior = build_prior(indexed, spec.min_genes, spec.graph_mode);
    out.encoding = cached_laplacian_encoding(out.prior, k, cache_dir);
    return out;
}

const char* to_string(InputArm arm) {
    switch (arm) {
    case InputArm::mut_only: return "mut_only";
    case InputArm::cnv_only: return "cnv_only";
    default: return "full";
    }
}

template <typename T>
Batch<T> make_batch(const CohortMatrix& normalized, std::span<const std::size_t> rows, InputArm arm) {
    const auto g = static_cast<Eigen::Index>(normalized.n_genes());
    Batch<T> b;
    b.mut = Mat<T>::Zero(static_cast<Eigen::Index>(rows.size()), g);
    b.cnv = Mat<T>::Zero(static_cast<Eigen::Index>(rows.size()), g);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        const auto bi = static_cast<Eigen::Index>(i);
        if (arm != InputArm::cnv_only) b.mut.row(bi) = normalized.mut.row(r).template cast<T>();
        if (arm != InputArm::mut_only) b.cnv.row(bi) = normalized.cnv.row(r).template cast<T>();
    }
    return b;
}

std::vector<double> predict_scores(const ModelState<float>& state, const ModelGraph& graph, const Batch<float>& batch) {
    std::vector<double> out;
    out.reserve(batch.size());
    for (std::size_t start = 0; start < batch.size(); start += kEvalChunk) {
        const auto n = static_cast<Eigen::Index>(std::min(kEvalChunk, batch.size() - start));
        const auto s0 = static_cast<Eigen::Index>(start);
        Batch<float> chunk{batch.mut.middleRows(s0, n), batch.cnv.middleRows(s0, n)};
        const auto tr = forward_eval(state, chunk, graph);
        for (const auto& st : tr.samples) {
            const double margin = static_cast<double>(st.logits(0, 1)) - static_cast<double>(st.logits(0, 0));
            out.push_back(1.0 / (1.0 + std::exp(-margin)));
        }
    }
    return out;
}

// --- fold training -------------------------------------------------------

FoldResult train_fold(const CohortMatrix& cohort, const FoldSplit& fold, const ModelGraph& graph,
                      const ModelConfig& config, const TrainSpec& spec, InputArm arm) {
    spec.validate();
    if (fold.train_idx.empty() || fold.val_idx.empty()) throw input_error("train_fold: empty train or validation rows");
    const auto val_labels = labels_at(cohort, fold.val_idx);
    if (std::count(val_labels.begin(), val_labels.end(), 1) == 0 ||
        std::count(val_labels.begin(), val_labels.end(), 0) == 0) {
        throw input_error("train_fold: validation rows must contain both classes");
    }
    FoldResult res;
    const std::uint64_t fold_seed = fold.fold_seed();
    res.norm = fit_norm_stats(cohort, fold.train_idx, fold.fold_index, fold.base_seed);
    const CohortMatrix normed = apply_norm(cohort, res.norm);
    const Batch<float> val = make_batch<float>(normed, fold.val_idx, arm);
    const auto weights = class_weights(labels_at(cohort, fold.train_idx));

    ModelState<float> state = init_model<float>(config, graph.n_genes, graph.n_pathways, fold_seed);
    Rng noise(fold_seed ^ kNoiseStream);
    const std::size_t n_train = fold.train_idx.size();
    double best = -std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(n_train), rows;
    std::vector<int> y;
    for (std::size_t epoch = 1; epoch <= spec.max_epochs; ++epoch) {
        for (std::size_t i = 0; i < n_train; ++i) order[i] = fold.train_idx[i];
        Rng shuffle_rng(fold_seed + epoch);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t steps = 0, clipped = 0;
        for (std::size_t start = 0; start < n_train; start += spec.batch_size) {
            const std::size_t end = std::min(n_train, start + spec.batch_size);
            rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
            y = labels_at(cohort, rows);
            const Batch<float> batch = make_batch<float>(normed, rows, arm);
            ForwardOptions fo;
            fo.training = true;
            fo.rng = &noise;
            const auto tr = forward(state, batch, graph, fo);
            MatF dlogits;
            loss_sum += loss(tr.logits(), y, weights, spec, &dlogits) * static_cast<double>(rows.size());
            state.zero_grad();
            backward(state, tr, dlogits, graph);
            clipped += adamw_step(state, spec).clipped;
            ++steps;
        }
        const auto scores = predict_scores(state, graph, val);
        const double val_auroc = auroc(scores, val_labels);
        if (!std::isfinite(val_auroc)) throw runtime_error("train_fold: validation AUROC is undefined");
        res.log.push_back({epoch, loss_sum / static_cast<double>(n_train), val_auroc, spec.lr,
                           static_cast<double>(clipped) / static_cast<double>(steps)});
        if (val_auroc > best) {
            best = val_auroc;
            res.best = state;
            res.best_epoch = epoch;
        }
        if (epoch >= spec.min_epochs && epoch - res.best_epoch >= spec.patience) break;
    }
    res.best_val_auroc = best;
    return res;
}

Evaluation evaluate(const ModelState<float>& state, const ModelGraph& graph, const CohortMatrix& normalized,
                    std::span<const std::size_t> rows, double tau, InputArm arm) {
    Evaluation ev;
    ev.labels = labels_at(normalized, rows);
    ev.scores = predict_scores(state, graph, make_batch<float>(normalized, rows, arm));
    ev.metrics = evaluate_scores(ev.scores, ev.labels, tau);
    return ev;
}

// --- cross-validation ----------------------------------------------------

std::string run_name(std::uint64_t seed, int fold) { return "seed" + std::to_string(seed) + "_fold" + std::to_string(fold); }

MeanSd CvReport::summary(const std::string& metric) const {
    for (std::size_t i = 0; i < metric_names.size(); ++i)
        if (metric_names[i] == metric) return metric_summary[i];
    throw input_error("unknown metric '" + metric + "'");
}

CvReport run_cv(const CohortMatrix& cohort, const ModelGraph& graph, const ModelConfig& config,
                const TrainSpec& spec, const CvOptions& options) {
    cohort.validate();
    spec.validate();
    config.validate();
    if (cohort.n_genes() != graph.n_genes) throw input_error("run_cv: cohort genes do not match the model graph");
    if (options.seeds.empty()) throw config_error("run_cv: no seeds");

    struct Task {
        std::uint64_t seed;
        FoldSplit split;
    };
    std::vector<Task> tasks;
    for (auto seed : options.seeds) {
        for (auto& f : make_folds(cohort.labels, options.n_folds, seed, options.val_fraction)) tasks.push_back({seed, f});
    }

    const bool persist = !options.out_dir.empty();
    if (persist) std::filesystem::create_directories(options.out_dir / "runs");
    std::mutex event_mutex;
    auto emit = [&](nlohmann::json ev) {
        if (!options.on_event) return;
        std::lock_guard lock(event_mutex);
        options.on_event(ev);
    };

    const auto grid = unit_grid(100);
    std::vector<RunRecord> runs(tasks.size());
    auto run_task = [&](std::size_t i) {
        const auto t0 = std::chrono::steady_clock::now();
        const Task& task = tasks[i];
        const std::string name = run_name(task.seed, task.split.fold_index);
        emit({{"event", "run_start"}, {"run", name}, {"arm", to_string(options.arm)}});
        FoldResult fr = train_fold(cohort, task.split, graph, config, spec, options.arm);
        ModelState<float> model = std::move(fr.best);
        if (persist) {
            const auto dir = options.out_dir / "runs" / name;
            std::filesystem::create_directories(dir);
            const nlohmann::json extra = {{"seed", task.seed},
                                          {"fold", task.split.fold_index},
                                          {"best_epoch", fr.best_epoch},
                                          {"best_val_auroc", fr.best_val_auroc},
                                          {"arm", to_string(options.arm)},
                                          {"gene_ids", cohort.gene_ids}};
            save_checkpoint(dir / "checkpoint.bin", model, extra);
            model = load_checkpoint(dir / "checkpoint.bin");
            write_text(dir / "norm_stats.json", to_json(fr.norm).dump(2) + "\n");
            write_text(dir / "train_log.csv", train_log_csv(fr.log));
        }
        const CohortMatrix normed = apply_norm(cohort, fr.norm);
        const Evaluation val = evaluate(model, graph, normed, task.split.val_idx, 0.5, options.arm);
        const double tau = calibrate_threshold(val.scores, val.labels);
        const Evaluation test = evaluate(model, graph, normed, task.split.test_idx, tau, options.arm);

        RunRecord& r = runs[i];
        r.seed = task.seed;
        r.fold = task.split.fold_index;
        r.split = task.split;
        r.metrics = test.metrics;
        r.threshold = tau;
        r.best_epoch = fr.best_epoch;
        r.best_val_auroc = fr.best_val_auroc;
        r.epochs_run = fr.log.size();
        r.test_scores = test.scores;
        r.test_labels = test.labels;
        r.roc = roc_on_grid(test.scores, test.labels, grid);
        r.pr = pr_on_grid(test.scores, test.labels, grid);
        if (persist) {
            nlohmann::json m = {{"seed", r.seed},
                                {"fold", r.fold},
                                {"metrics", to_json(r.metrics)},
                                {"threshold", r.threshold},
                                {"best_epoch", r.best_epoch},
                                {"best_val_auroc", r.best_val_auroc},
                                {"epochs_run", r.epochs_run}};
            write_text(options.out_dir / "runs" / name / "metrics.json", m.dump(2) + "\n");
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        emit({{"event", "run_done"},
              {"run", name},
              {"arm", to_string(options.arm)},
              {"epochs", r.epochs_run},
              {"test_auroc", finite_or_null(r.metrics.auroc)},
              {"test_f1", r.metrics.f1},
              {"seconds", r.seconds}});
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(options.jobs, tasks.size()));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            try {
                run_task(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = tasks.size();
                return;
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    CvReport rep;
    rep.arm = options.arm;
    const auto counts = count_params(config, graph.n_genes, graph.n_pathways);
    rep.param_count = counts.enumerated;
    rep.param_count_closed_form = counts.closed_form;
    rep.runs = std::move(runs);
    rep.metric_names = {"auroc", "auprc", "f1", "precision", "recall", "accuracy"};
    for (const auto& name : rep.metric_names) {
        std::vector<double> v;
        for (const auto& r : rep.runs) {
            const auto& m = r.metrics;
            v.push_back(name == "auroc" ? m.auroc
                        : name == "auprc" ? m.auprc
                        : name == "f1" ? m.f1
                        : name == "precision" ? m.precision
                        : name == "recall" ? m.recall
                                           : m.accuracy);
        }
        rep.metric_summary.push_back(mean_sd_finite(v));
    }
    rep.grid = grid;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        std::vector<double> roc, pr;
        for (const auto& r : rep.runs) {
            roc.push_back(r.roc[gi]);
            pr.push_back(r.pr[gi]);
        }
        rep.roc_band.push_back(mean_sd_finite(roc));
        rep.pr_band.push_back(mean_sd_finite(pr));
    }
    for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 2; ++b) {
            std::vector<double> v;
            for (const auto& r : rep.runs) v.push_back(static_cast<double>(r.metrics.confusion[a][b]));
            rep.confusion[a][b] = mean_sd_finite(v);
        }
    }
    if (persist) write_cv_report(options.out_dir, rep, cohort);
    return rep;
}

nlohmann::json cv_metrics_json(const CvReport& report) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : report.runs) {
        runs.push_back({{"seed", r.seed},
                        {"fold", r.fold},
                        {"metrics", to_json(r.metrics)},
                        {"threshold", r.threshold},
                        {"confusion", to_json(r.metrics)["confusion"]},
                        {"best_epoch", r.best_epoch},
                        {"best_val_auroc", r.best_val_auroc},
                        {"epochs_run", r.epochs_run}});
    }
    nlohmann::json agg = nlohmann::json::object();
    for (std::size_t i = 0; i < report.metric_names.size(); ++i) {
        agg[report.metric_names[i]] = mean_sd_json(report.metric_summary[i]);
    }
    return {{"arm", to_string(report.arm)},
            {"param_count", report.param_count},
            {"param_count_closed_form", report.param_count_closed_form},
            {"n_runs", report.runs.size()},
            {"runs", runs},
            {"aggregate", agg}};
}

void write_cv_report(const std::filesystem::path& dir, const CvReport& report, const CohortMatrix& cohort) {
    std::filesystem::create_directories(dir / "folds");
    std::filesystem::create_directories(dir / "curves");
    std::map<std::uint64_t, std::vector<FoldSplit>> by_seed;
    for (const auto& r : report.runs) by_seed[r.seed].push_back(r.split);
    for (const auto& [seed, folds] : by_seed) {
        write_text(dir / "folds" / ("seed" + std::to_string(seed) + ".json"), folds_to_json(seed, folds).dump(2) + "\n");
    }

    std::string pred = "patient_id,fold,seed,score,label,predicted\n";
    for (const auto& r : report.runs) {
        for (std::size_t i = 0; i < r.split.test_idx.size(); ++i) {
            pred += cohort.patient_ids[r.split.test_idx[i]] + "," + std::to_string(r.fold) + "," +
                    std::to_string(r.seed) + "," + detail::format_double(r.test_scores[i]) + "," +
                    std::to_string(r.test_labels[i]) + "," + (r.test_scores[i] >= r.threshold ? "1" : "0") + "\n";
        }
    }
    write_text(dir / "predictions.csv", pred);
    write_text(dir / "metrics.json", cv_metrics_json(report).dump(2) + "\n");

    auto band_csv = [&](const std::vector<MeanSd>& band) {
        std::string out = "grid,mean,sd\n";
        for (std::size_t i = 0; i < report.grid.size(); ++i) {
            out += detail::format_double(report.grid[i]) + "," + detail::format_double(band[i].mean) + "," +
                   detail::format_double(band[i].sd) + "\n";
        }
        return out;
    };
    write_text(dir / "curves" / "roc.csv", band_csv(report.roc_band));
    write_text(dir / "curves" / "pr.csv", band_csv(report.pr_band));

    nlohmann::json cm_mean = nlohmann::json::array(), cm_sd = nlohmann::json::array();
    for (std::size_t a = 0; a < 2; ++a) {
        cm_mean.push_back({report.confusion[a][0].mean, report.confusion[a][1].mean});
        cm_sd.push_back({report.confusion[a][0].sd, report.confusion[a][1].sd});
    }
    write_text(dir / "confusion.json",
               nlohmann::json{{"layout", "rows true class, columns predicted class"}, {"mean", cm_mean}, {"sd", cm_sd}}
                       .dump(2) +
                   "\n");
}

std::array<CvReport, 3> run_ablation(const CohortMatrix& cohort, const ModelGraph& graph, const ModelConfig& config,
                                     const TrainSpec& spec, const CvOptions& options) {
    std::array<CvReport, 3> out;
    const InputArm arms[3] = {InputArm::full, InputArm::mut_only, InputArm::cnv_only};
    for (std::size_t a = 0; a < 3; ++a) {
        CvOptions o = options;
        o.arm = arms[a];
        if (!options.out_dir.empty()) o.out_dir = options.out_dir / to_string(arms[a]);
        out[a] = run_cv(cohort, graph, config, spec, o);
    }
    return out;
}

template double loss<float>(const MatF&, std::span<const int>, const std::array<double, 2>&, const TrainSpec&, MatF*);
template double loss<double>(const MatD&, std::span<const int>, const std::array<double, 2>&, const TrainSpec&, MatD*);
template StepInfo adamw_step<float>(ModelState<float>&, const TrainSpec&);
template StepInfo adamw_step<double>(ModelState<double>&, const TrainSpec&);
template void save_checkpoint<float>(const std::filesystem::path&, const ModelState<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelState<double>&, const nlohmann::json&);
template Batch<float> make_batch<float>(const CohortMatrix&, std::span<const std::size_t>, InputArm);
template Batch<double> make_batch<double>(const CohortMatrix&, std::span<const std::size_t>, InputArm);

} // namespace pathgt
