#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "pathgt/error.hpp"
#include "pathgt/interpret.hpp"
#include "pathgt/metrics.hpp"
#include "pathgt/stats.hpp"
#include "pathgt/tensor_io.hpp"
#include "pathgt/training.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pathgt::cli {

namespace {

std::string fmt(double v) {
    if (v != v) return "nan";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw runtime_error("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<unsigned char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw runtime_error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw runtime_error("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw input_error(path.string() + ": " + e.what());
    }
}

/// Refuses a non-empty directory unless forced; a forced run starts clean.
void prepare_out_dir(const fs::path& out, bool force) {
    if (out.empty()) throw config_error("--out is required");
    if (fs::exists(out)) {
        if (!fs::is_directory(out)) throw config_error("--out " + out.string() + " exists and is not a directory");
        if (!fs::is_empty(out)) {
            if (!force) throw config_error("output directory " + out.string() + " is not empty; pass --force to overwrite");
            fs::remove_all(out);
        }
    }
    fs::create_directories(out);
}

/// JSON events on stderr; wall-clock stamps go only to <out>/timing.log.
class EventLog {
public:
    EventLog(const fs::path& out, bool quiet) : quiet_(quiet), timing_(out / "timing.log") {}

    void operator()(const json& ev) {
        std::lock_guard lock(mutex_);
        if (!quiet_) std::cerr << ev.dump() << std::endl;
        const auto now = std::chrono::system_clock::now();
        const auto secs = std::chrono::duration<double>(now.time_since_epoch()).count();
        json stamped = ev;
        stamped["unix_time"] = secs;
        timing_ << stamped.dump() << "\n";
        timing_.flush();
    }

private:
    bool quiet_;
    std::ofstream timing_;
    std::mutex mutex_;
};

fs::path cache_dir_for(const fs::path& out) {
    if (const char* env = std::getenv("PATHGT_CACHE_DIR"); env && *env) return env;
    return out / "cache";
}

/// Relative data paths are taken against the working directory and stored
/// absolute so the resolved config can be replayed from elsewhere.
void absolutize(RunConfig& cfg) {
    if (!cfg.data) return;
    for (fs::path* p : {&cfg.data->mut, &cfg.data->cnv, &cfg.data->labels, &cfg.data->pathways}) {
        *p = fs::weakly_canonical(fs::absolute(*p));
    }
}

RunConfig load_config(const CommonOptions& opt) {
    const json file = opt.config.empty() ? json() : read_json_file(opt.config);
    json merged = merge_config(file, parse_overrides(opt.overrides));
    if (!opt.seed_list.empty()) merged["cv"]["seeds"] = parse_seed_list(opt.seed_list);
    if (opt.jobs) merged["cv"]["jobs"] = *opt.jobs;
    RunConfig cfg = resolve_config(merged);
    absolutize(cfg);
    return cfg;
}

struct Pipeline {
    PreparedCohort prep;
    ModelGraph graph;
};

Pipeline build_pipeline(const RunConfig& cfg, const fs::path& cache_dir) {
    auto [raw, sets] = load_inputs(cfg);
    Pipeline p{prepare_cohort(raw, sets, cfg.preprocess, cfg.model.k, cache_dir), {}};
    p.graph = make_model_graph(p.prep.prior, p.prep.encoding, p.prep.cohort.n_genes(), cfg.model);
    return p;
}

void write_prior(const fs::path& out, const PathwayPrior& prior) {
    write_prior_csv(out / "prior.csv", prior);
    write_json(out / "prior.json", prior_sidecar(prior));
}

CvOptions cv_options(const RunConfig& cfg, const fs::path& out, EventLog& log) {
    CvOptions o;
    o.seeds = cfg.cv.seeds;
    o.n_folds = cfg.cv.n_folds;
    o.val_fraction = cfg.cv.val_fraction;
    o.jobs = cfg.cv.jobs;
    o.out_dir = out;
    o.on_event = [&log](const json& ev) { log(ev); };
    return o;
}

std::string pad(std::string s, std::size_t w) {
    s.append(s.size() < w ? w - s.size() : 1, ' ');
    return s;
}

std::string mean_sd_text(const MeanSd& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f +/- %.3f", m.mean, m.sd);
    return buf;
}

void print_table(const std::vector<std::pair<std::string, const CvReport*>>& rows) {
    if (rows.empty()) return;
    const auto& names = rows.front().second->metric_names;
    std::cout << pad("arm", 10) << pad("runs", 6) << pad("params", 9);
    for (const auto& n : names) std::cout << pad(n, 18);
    std::cout << "\n";
    for (const auto& [label, rep] : rows) {
        std::cout << pad(label, 10) << pad(std::to_string(rep->runs.size()), 6)
                  << pad(std::to_string(rep->param_count), 9);
        for (const auto& m : rep->metric_summary) std::cout << pad(mean_sd_text(m), 18);
        std::cout << "\n";
    }
}

InputArm arm_from_string(const std::string& s) {
    if (s == "full") return InputArm::full;
    if (s == "mut_only") return InputArm::mut_only;
    if (s == "cnv_only") return InputArm::cnv_only;
    throw input_error("unknown input arm '" + s + "'");
}

std::string matrix_csv(const MatD& m, const std::vector<std::string>& ids) {
    std::string out = "pathway";
    for (const auto& id : ids) out += "," + id;
    out += "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out += ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < m.cols(); ++j) out += "," + fmt(m(i, j));
        out += "\n";
    }
    return out;
}

std::string ranking_csv(const std::vector<RankedItem>& items) {
    std::string out = "id,delta,mean_rank,recurrence,fold_count\n";
    for (const auto& r : items) {
        out += r.id + "," + fmt(r.delta) + "," + fmt(r.mean_rank) + "," + std::to_string(r.recurrence) + "," +
               std::to_string(r.fold_count) + "\n";
    }
    return out;
}

std::vector<double> column_mean(const std::vector<std::vector<double>>& rows) {
    std::vector<double> m(rows.front().size(), 0.0);
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += r[i];
    }
    for (auto& v : m) v /= static_cast<double>(rows.size());
    return m;
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads; the first
/// exception is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i; (i = next++) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    const std::size_t t = std::max<std::size_t>(1, std::min(jobs, n));
    if (t == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < t; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
}

} // namespace

// --- synth ---------------------------------------------------------------

int cmd_synth(const CommonOptions& opt) {
    const RunConfig cfg = load_config(opt);
    if (!cfg.synth) throw config_error("synth: the config names data files instead of a synth spec");
    prepare_out_dir(opt.out, opt.force);
    EventLog log(opt.out, opt.quiet);
    log({{"event", "synth_start"}, {"seed", cfg.synth->seed}});

    const SynthCohort syn = synth_cohort(*cfg.synth);
    write_matrix_tsv(opt.out / "mut.tsv", syn.cohort, true);
    write_matrix_tsv(opt.out / "cnv.tsv", syn.cohort, false);
    write_labels_tsv(opt.out / "labels.tsv", syn.cohort);
    write_gmt(opt.out / "pathways.gmt", syn.pathways);
    json drivers = json::array();
    for (auto p : syn.driver_pathways) drivers.push_back(syn.pathways[p].id);
    write_json(opt.out / "synth_spec.json",
               {{"spec", to_json(*cfg.synth)}, {"driver_pathways", drivers}, {"driver_genes", syn.driver_genes}});

    std::size_t pos = 0;
    for (int y : syn.cohort.labels) pos += static_cast<std::size_t>(y == 1);
    log({{"event", "synth_done"}, {"patients", syn.cohort.n_patients()}, {"genes", syn.cohort.n_genes()}});
    std::cout << "patients " << syn.cohort.n_patients() << " (" << pos << " positive), genes "
              << syn.cohort.n_genes() << ", pathways " << syn.pathways.size() << "\n";
    return 0;
}

// --- cv / ablate ---------------------------------------------------------

int cmd_cv(const CommonOptions& opt) {
    const RunConfig cfg = load_config(opt);
    prepare_out_dir(opt.out, opt.force);
    EventLog log(opt.out, opt.quiet);
    write_json(opt.out / "config.json", cfg.to_json());

    const Pipeline p = build_pipeline(cfg, cache_dir_for(opt.out));
    write_prior(opt.out, p.prep.prior);
    log({{"event", "cv_start"},
         {"patients", p.prep.cohort.n_patients()},
         {"genes", p.prep.cohort.n_genes()},
         {"pathways", p.prep.prior.n_pathways()},
         {"runs", cfg.cv.seeds.size() * static_cast<std::size_t>(cfg.cv.n_folds)}});

    const CvReport rep = run_cv(p.prep.cohort, p.graph, cfg.model, cfg.train, cv_options(cfg, opt.out, log));
    log({{"event", "cv_done"}, {"auroc", finite_or_null(rep.summary("auroc").mean)}});
    print_table({{to_string(rep.arm), &rep}});
    return 0;
}

int cmd_ablate(const CommonOptions& opt) {
    const RunConfig cfg = load_config(opt);
    prepare_out_dir(opt.out, opt.force);
    EventLog log(opt.out, opt.quiet);
    write_json(opt.out / "config.json", cfg.to_json());

    const Pipeline p = build_pipeline(cfg, cache_dir_for(opt.out));
    write_prior(opt.out, p.prep.prior);
    log({{"event", "ablate_start"}, {"genes", p.prep.cohort.n_genes()}, {"pathways", p.prep.prior.n_pathways()}});

    const auto reps = run_ablation(p.prep.cohort, p.graph, cfg.model, cfg.train, cv_options(cfg, opt.out, log));
    std::vector<std::pair<std::string, const CvReport*>> rows;
    for (const auto& r : reps) rows.emplace_back(to_string(r.arm), &r);
    log({{"event", "ablate_done"}});
    print_table(rows);
    return 0;
}

// --- explain -------------------------------------------------------------

int cmd_explain(const CommonOptions& opt, const fs::path& run_dir) {
    if (!fs::exists(run_dir / "metrics.json")) {
        throw runtime_error("explain: " + run_dir.string() + " holds no cross-validation output (metrics.json)");
    }
    fs::path config_path = run_dir / "config.json";
    if (!fs::exists(config_path)) config_path = run_dir.parent_path() / "config.json";
    if (!fs::exists(config_path)) throw runtime_error("explain: no config.json in " + run_dir.string() + " or its parent");

    // Only interpretation settings and the worker count may change.
    const json file = opt.config.empty() ? json() : read_json_file(opt.config);
    const auto overrides = parse_overrides(opt.overrides);
    if (file.is_object()) {
        for (const auto& [k, v] : file.items()) {
            if (k != "interpret" && !(k == "cv" && v.is_object() && v.size() == 1 && v.contains("jobs"))) {
                throw config_error("explain: only interpret.* and cv.jobs may be set, not '" + k + "'");
            }
        }
    }
    for (const auto& [k, v] : overrides) {
        if (k.rfind("interpret.", 0) != 0 && k != "cv.jobs") {
            throw config_error("explain: only interpret.* and cv.jobs may be overridden, not '" + k + "'");
        }
    }
    const json base = read_json(config_path);
    json merged = merge_config(file, overrides, &base);
    if (opt.jobs) merged["cv"]["jobs"] = *opt.jobs;
    const RunConfig cfg = resolve_config(merged);

    const json run_metrics = read_json(run_dir / "metrics.json");
    const InputArm arm = arm_from_string(run_metrics.value("arm", std::string("full")));

    std::vector<std::uint64_t> seeds;
    for (const auto& r : run_metrics.at("runs")) {
        const auto s = r.at("seed").get<std::uint64_t>();
        if (std::find(seeds.begin(), seeds.end(), s) == seeds.end()) seeds.push_back(s);
    }
    if (!opt.seed_list.empty()) {
        const auto wanted = parse_seed_list(opt.seed_list);
        for (auto s : wanted) {
            if (std::find(seeds.begin(), seeds.end(), s) == seeds.end()) {
                throw config_error("explain: seed " + std::to_string(s) + " is not part of " + run_dir.string());
            }
        }
        seeds = wanted;
    }

    prepare_out_dir(opt.out, opt.force);
    EventLog log(opt.out, opt.quiet);
    const fs::path cache = cache_dir_for(opt.out);
    const Pipeline p = build_pipeline(cfg, cache);
    const auto& cohort = p.prep.cohort;
    const auto& pids = p.prep.prior.pathway_ids;
    const ExplainOptions& eo = cfg.interpret;

    struct Task {
        std::string name;
        FoldSplit split;
    };
    std::vector<Task> tasks;
    for (auto s : seeds) {
        for (const auto& f : folds_from_json(read_json(run_dir / "folds" / ("seed" + std::to_string(s) + ".json")))) {
            tasks.push_back({run_name(s, f.fold_index), f});
        }
    }
    for (const auto& t : tasks) {
        if (!fs::exists(run_dir / "runs" / t.name / "checkpoint.bin")) {
            throw runtime_error("explain: missing checkpoint for run " + t.name);
        }
    }
    log({{"event", "explain_start"}, {"runs", tasks.size()}, {"steps", eo.steps}, {"baselines", eo.baselines}});

    std::vector<RunExplanation> results(tasks.size());
    parallel_for(tasks.size(), cfg.cv.jobs, [&](std::size_t i) {
        const Task& t = tasks[i];
        const fs::path dir = run_dir / "runs" / t.name;
        json manifest;
        const ModelState<float> state = load_checkpoint(dir / "checkpoint.bin", &manifest);
        if (manifest.value("gene_ids", std::vector<std::string>{}) != cohort.gene_ids) {
            throw input_error("explain: run " + t.name + " was trained on a different gene vocabulary");
        }
        const NormStats norm = norm_stats_from_json(read_json(dir / "norm_stats.json"));
        const CohortMatrix normed = apply_norm(cohort, norm);

        // Attributions dominate the cost; they are memoized per checkpoint and settings.
        auto key_bytes = read_bytes(dir / "checkpoint.bin");
        const std::string tag = json{{"steps", eo.steps}, {"baselines", eo.baselines}, {"arm", to_string(arm)}}.dump();
        key_bytes.insert(key_bytes.end(), tag.begin(), tag.end());
        const fs::path cached = cache / ("attr_" + t.name + "_" + fnv1a_hex(key_bytes) + ".bin");

        // Downstream tables always use the reloaded float32 attributions, so a
        // cache hit and a fresh computation produce identical outputs.
        RunExplanation& ex = results[i];
        bool hit = false;
        if (fs::exists(cached)) {
            try {
                hit = read_attribution_cache(cached, p.graph).rows == t.split.test_idx;
            } catch (const Error&) {
                hit = false;
            }
        }
        if (!hit) {
            fs::create_directories(cache);
            write_attribution_cache(cached, explain_run(state, p.graph, normed, t.split, eo, arm).attr);
        }
        ex.attr = read_attribution_cache(cached, p.graph);
        const Batch<float> samples = make_batch<float>(normed, t.split.test_idx, arm);
        ex.crosstalk = crosstalk_matrices(state, p.graph, samples, ex.attr.labels, eo.layer);
        ex.signature = gene_signatures(state, p.graph, samples, ex.attr.labels, &ex.attr);
        log({{"event", "explain_run_done"}, {"run", t.name}, {"cached", hit}});
    });

    // Rankings over runs.
    std::vector<std::vector<double>> gene_deltas, pathway_deltas;
    for (const auto& r : results) {
        gene_deltas.push_back(r.attr.delta_gene);
        pathway_deltas.push_back(r.attr.delta_pathway);
    }
    write_text(opt.out / "rankings_gene.csv", ranking_csv(rank_differential(cohort.gene_ids, gene_deltas)));
    write_text(opt.out / "rankings_pathway.csv", ranking_csv(rank_differential(pids, pathway_deltas)));
    const std::vector<double> mean_delta_p = column_mean(pathway_deltas);

    // Each patient is a test sample once per seed; its matrices are averaged
    // across seeds so patients, not runs, are the units of the edge test.
    const auto P = static_cast<Eigen::Index>(pids.size());
    std::map<std::size_t, std::pair<MatD, int>> per_patient;
    for (const auto& r : results) {
        for (std::size_t s = 0; s < r.attr.rows.size(); ++s) {
            auto [it, fresh] = per_patient.try_emplace(r.attr.rows[s], MatD::Zero(P, P), 0);
            it->second.first += r.crosstalk.per_sample[s];
            it->second.second += 1;
        }
    }
    Crosstalk pooled;
    pooled.layer = results.front().crosstalk.layer;
    for (auto& [row, acc] : per_patient) {
        pooled.per_sample.push_back(acc.first / static_cast<double>(acc.second));
        pooled.labels.push_back(cohort.labels[row]);
    }
    finalize_crosstalk(pooled);
    const auto stats = rewiring_test(pooled, eo.rewiring);

    write_text(opt.out / "heatmaps" / "class0.csv", matrix_csv(pooled.class0, pids));
    write_text(opt.out / "heatmaps" / "class1.csv", matrix_csv(pooled.class1, pids));
    write_text(opt.out / "heatmaps" / "delta.csv", matrix_csv(pooled.class1 - pooled.class0, pids));

    std::string rewiring = "source,target,mean_met,mean_pri,delta,p,q,significant\n";
    std::size_t n_sig = 0;
    for (const auto& e : stats) {
        const bool sig = e.q < eo.alpha;
        n_sig += static_cast<std::size_t>(sig);
        rewiring += pids[e.source] + "," + pids[e.target] + "," + fmt(e.mean_met) + "," + fmt(e.mean_pri) + "," +
                    fmt(e.delta) + "," + fmt(e.p) + "," + fmt(e.q) + "," + (sig ? "1" : "0") + "\n";
    }
    write_text(opt.out / "rewiring.csv", rewiring);

    MatD learned = pooled.class1;
    if (eo.edge_source == EdgeSource::coactivation) {
        learned = MatD::Zero(P, P);
        for (const auto& r : results) learned += coactivation_matrix(r.attr) / static_cast<double>(results.size());
    }
    const auto edges = novel_edges(learned, p.prep.prior.adjacency, stats, mean_delta_p, eo.top_pathways);
    write_text(opt.out / "edges.csv", edge_table_csv(edges, pids));

    const auto hubs = hub_hierarchy(mean_delta_p, p.prep.prior.adjacency, eo.top_hubs, eo.levels);
    write_json(opt.out / "hubs.json", to_json(hubs, pids));

    // Gene signatures averaged over runs, one row per pathway membership.
    const std::size_t M = p.graph.membership_size();
    std::vector<double> a0(M, 0.0), a1(M, 0.0), ad(M, 0.0);
    std::vector<double> g0(cohort.n_genes(), 0.0), g1(cohort.n_genes(), 0.0), gd(cohort.n_genes(), 0.0);
    const double nr = static_cast<double>(results.size());
    for (const auto& r : results) {
        for (std::size_t m = 0; m < M; ++m) {
            a0[m] += r.signature.alpha_class0[m] / nr;
            a1[m] += r.signature.alpha_class1[m] / nr;
            ad[m] += r.signature.alpha_delta[m] / nr;
        }
        for (std::size_t g = 0; g < g0.size(); ++g) {
            g0[g] += r.signature.ig_class0[g] / nr;
            g1[g] += r.signature.ig_class1[g] / nr;
            gd[g] += r.signature.ig_delta[g] / nr;
        }
    }
    std::string sig = "pathway,gene,alpha_class0,alpha_class1,alpha_delta,ig_class0,ig_class1,ig_delta\n";
    for (std::size_t pw = 0; pw < pids.size(); ++pw) {
        for (std::size_t m = p.graph.offsets[pw]; m < p.graph.offsets[pw + 1]; ++m) {
            const std::size_t g = p.graph.genes[m];
            sig += pids[pw] + "," + cohort.gene_ids[g] + "," + fmt(a0[m]) + "," + fmt(a1[m]) + "," + fmt(ad[m]) + "," +
                   fmt(g0[g]) + "," + fmt(g1[g]) + "," + fmt(gd[g]) + "\n";
        }
    }
    write_text(opt.out / "signatures.csv", sig);

    for (const char* curve : {"roc.csv", "pr.csv"}) {
        const fs::path src = run_dir / "curves" / curve;
        if (fs::exists(src)) {
            fs::create_directories(opt.out / "curves");
            fs::copy_file(src, opt.out / "curves" / curve, fs::copy_options::overwrite_existing);
        }
    }

    json run_names = json::array();
    for (const auto& t : tasks) run_names.push_back(t.name);
    write_json(opt.out / "explain.json", {{"run_dir", fs::weakly_canonical(fs::absolute(run_dir)).string()},
                                          {"arm", to_string(arm)},
                                          {"options", to_json(eo)},
                                          {"runs", run_names},
                                          {"n_genes", cohort.n_genes()},
                                          {"n_pathways", pids.size()},
                                          {"n_patients_pooled", pooled.per_sample.size()},
                                          {"significant_edges", n_sig},
                                          {"crosstalk_layer", pooled.layer}});
    log({{"event", "explain_done"}, {"significant_edges", n_sig}});

    const auto top = rank_differential(pids, pathway_deltas);
    std::cout << "runs " << tasks.size() << ", significant edges " << n_sig << " of " << stats.size() << "\n";
    std::cout << pad("pathway", 16) << pad("delta", 14) << "mean_rank\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(top.size(), 10); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", top[i].delta);
        std::cout << pad(top[i].id, 16) << pad(buf, 14) << fmt(top[i].mean_rank) << "\n";
    }
    return 0;
}

// --- report --------------------------------------------------------------

int cmd_report(const CommonOptions& opt, const std::vector<fs::path>& dirs) {
    if (dirs.empty()) throw config_error("report: no run directories given");
    // An ablation directory contributes its three arms.
    std::vector<fs::path> cv_dirs;
    for (const auto& d : dirs) {
        if (fs::exists(d / "metrics.json")) {
            cv_dirs.push_back(d);
            continue;
        }
        bool any = false;
        for (const char* arm : {"full", "mut_only", "cnv_only"}) {
            if (fs::exists(d / arm / "metrics.json")) {
                cv_dirs.push_back(d / arm);
                any = true;
            }
        }
        if (!any) throw runtime_error("report: " + d.string() + " holds no metrics.json");
    }
    prepare_out_dir(opt.out, opt.force);
    EventLog log(opt.out, opt.quiet);

    const std::vector<std::string> names = {"auroc", "auprc", "f1", "precision", "recall", "accuracy"};
    std::string csv = "run_dir,arm,n_runs,param_count";
    for (const auto& n : names) csv += "," + n + "_mean," + n + "_sd";
    csv += "\n";
    json rows = json::array();
    std::cout << pad("run_dir", 32) << pad("arm", 10) << pad("runs", 6);
    for (const auto& n : names) std::cout << pad(n, 18);
    std::cout << "\n";
    for (const auto& d : cv_dirs) {
        const json m = read_json(d / "metrics.json");
        const auto& agg = m.at("aggregate");
        const std::string label = d.lexically_normal().string();
        json row = {{"run_dir", label},
                    {"arm", m.value("arm", "full")},
                    {"n_runs", m.value("n_runs", 0)},
                    {"param_count", m.value("param_count", 0)}};
        csv += label + "," + row["arm"].get<std::string>() + "," + std::to_string(row["n_runs"].get<std::size_t>()) +
               "," + std::to_string(row["param_count"].get<std::size_t>());
        std::cout << pad(label, 32) << pad(row["arm"].get<std::string>(), 10)
                  << pad(std::to_string(row["n_runs"].get<std::size_t>()), 6);
        for (const auto& n : names) {
            MeanSd v{std::nan(""), std::nan("")};
            if (agg.contains(n)) {
                const auto& e = agg.at(n);
                if (e.at("mean").is_number()) v.mean = e.at("mean").get<double>();
                if (e.at("sd").is_number()) v.sd = e.at("sd").get<double>();
                row[n] = e;
            }
            csv += "," + fmt(v.mean) + "," + fmt(v.sd);
            std::cout << pad(mean_sd_text(v), 18);
        }
        csv += "\n";
        std::cout << "\n";
        rows.push_back(row);
    }
    write_text(opt.out / "summary.csv", csv);
    write_json(opt.out / "summary.json", {{"runs", rows}});
    log({{"event", "report_done"}, {"dirs", cv_dirs.size()}});
    return 0;
}

} // namespace pathgt::cli
