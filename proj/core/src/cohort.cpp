#include "pathgt/cohort.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "pathgt/error.hpp"
#include "pathgt/rng.hpp"
#include "text_util.hpp"

namespace pathgt {

namespace fs = std::filesystem;

void CohortMatrix::validate() const {
    const auto n = static_cast<Eigen::Index>(patient_ids.size());
    const auto g = static_cast<Eigen::Index>(gene_ids.size());
    if (mut.rows() != n || cnv.rows() != n || labels.size() != patient_ids.size()) {
        throw input_error("cohort dimension mismatch on the patient axis: ids=" + std::to_string(n) +
                          " mut=" + std::to_string(mut.rows()) + " cnv=" + std::to_string(cnv.rows()) +
                          " labels=" + std::to_string(labels.size()));
    }
    if (mut.cols() != g || cnv.cols() != g) {
        throw input_error("cohort dimension mismatch on the gene axis: ids=" + std::to_string(g) +
                          " mut=" + std::to_string(mut.cols()) + " cnv=" + std::to_string(cnv.cols()));
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : gene_ids) {
        if (!seen.insert(id).second) throw input_error("duplicate gene id '" + id + "'");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < g; ++j) {
            const double m = mut(i, j);
            if (m != 0.0 && m != 1.0) {
                throw input_error("non-binary mutation entry at row " + std::to_string(i) + " (" +
                                  patient_ids[static_cast<std::size_t>(i)] + "), column " + std::to_string(j) +
                                  " (" + gene_ids[static_cast<std::size_t>(j)] + ")");
            }
        }
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw input_error("unknown label value " + std::to_string(labels[i]) + " for patient " + patient_ids[i]);
        }
    }
}

CohortMatrix CohortMatrix::select_rows(std::span<const std::size_t> rows) const {
    CohortMatrix out;
    out.gene_ids = gene_ids;
    out.mut.resize(static_cast<Eigen::Index>(rows.size()), mut.cols());
    out.cnv.resize(static_cast<Eigen::Index>(rows.size()), cnv.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto src = static_cast<Eigen::Index>(rows[r]);
        out.mut.row(static_cast<Eigen::Index>(r)) = mut.row(src);
        out.cnv.row(static_cast<Eigen::Index>(r)) = cnv.row(src);
        out.patient_ids.push_back(patient_ids[rows[r]]);
        out.labels.push_back(labels[rows[r]]);
    }
    return out;
}

// --- I/O -----------------------------------------------------------------

namespace {

struct Table {
    std::vector<std::string> header;
    std::vector<std::string> row_ids;
    MatD values;
};

Table read_matrix_tsv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open " + path.string());
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw input_error(path.string() + ": empty file");
    auto header = detail::split(detail::strip_cr(line), '\t');
    if (header.size() < 2) throw input_error(path.string() + ": header needs a patient column and at least one gene");
    t.header.assign(header.begin() + 1, header.end());

    std::vector<double> flat;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split(line, '\t');
        if (fields.size() != t.header.size() + 1) {
            throw input_error(path.string() + ": dimension mismatch on the gene axis at line " +
                              std::to_string(line_no) + " (" + std::to_string(fields.size() - 1) + " values, header has " +
                              std::to_string(t.header.size()) + " genes)");
        }
        t.row_ids.push_back(fields[0]);
        for (std::size_t j = 1; j < fields.size(); ++j) {
            double v = 0.0;
            if (!detail::parse_double(fields[j], v)) {
                throw input_error(path.string() + ": cannot parse '" + fields[j] + "' at line " +
                                  std::to_string(line_no) + ", column " + std::to_string(j));
            }
            flat.push_back(v);
        }
    }
    t.values = Eigen::Map<MatD>(flat.data(), static_cast<Eigen::Index>(t.row_ids.size()),
                                static_cast<Eigen::Index>(t.header.size()));
    return t;
}

void require_same(const std::vector<std::string>& a, const std::vector<std::string>& b, const std::string& axis,
                  const std::string& what) {
    if (a.size() != b.size()) {
        throw input_error("dimension mismatch on the " + axis + " axis: " + what + " (" + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()) + ")");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) {
            throw input_error(axis + " ordering differs at position " + std::to_string(i) + ": '" + a[i] + "' vs '" +
                              b[i] + "' (" + what + ")");
        }
    }
}

} // namespace

CohortMatrix load_cohort(const fs::path& mut_path, const fs::path& cnv_path, const fs::path& labels_path) {
    Table mut = read_matrix_tsv(mut_path);
    Table cnv = read_matrix_tsv(cnv_path);
    require_same(mut.header, cnv.header, "gene", "mutation vs CNV header");
    require_same(mut.row_ids, cnv.row_ids, "patient", "mutation vs CNV rows");

    std::ifstream in(labels_path);
    if (!in) throw input_error("cannot open " + labels_path.string());
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split(line, '\t');
        if (fields.size() != 2) throw input_error(labels_path.string() + ": expected two columns, got '" + line + "'");
        if (first && fields[1] == "label") {
            first = false;
            continue;
        }
        first = false;
        if (fields[1] != "0" && fields[1] != "1") {
            throw input_error(labels_path.string() + ": unknown label value '" + fields[1] + "' for patient " + fields[0]);
        }
        ids.push_back(fields[0]);
        labels.push_back(fields[1] == "1" ? 1 : 0);
    }
    require_same(mut.row_ids, ids, "patient", "matrix rows vs labels file");

    CohortMatrix c;
    c.patient_ids = std::move(mut.row_ids);
    c.gene_ids = std::move(mut.header);
    c.mut = std::move(mut.values);
    c.cnv = std::move(cnv.values);
    c.labels = std::move(labels);
    c.validate();
    return c;
}

void write_matrix_tsv(const fs::path& path, const CohortMatrix& cohort, bool mutation) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw runtime_error("cannot write " + path.string());
    out << "patient_id";
    for (const auto& g : cohort.gene_ids) out << '\t' << g;
    out << '\n';
    const MatD& m = mutation ? cohort.mut : cohort.cnv;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << cohort.patient_ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out << '\t';
            if (mutation) {
                out << (m(i, j) != 0.0 ? '1' : '0');
            } else {
                out << detail::format_double(m(i, j));
            }
        }
        out << '\n';
    }
}

void write_labels_tsv(const fs::path& path, const CohortMatrix& cohort) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw runtime_error("cannot write " + path.string());
    out << "patient_id\tlabel\n";
    for (std::size_t i = 0; i < cohort.n_patients(); ++i) {
        out << cohort.patient_ids[i] << '\t' << cohort.labels[i] << '\n';
    }
}

std::vector<GeneSet> load_gmt(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open " + path.string());
    std::vector<GeneSet> sets;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split(line, '\t');
        if (fields.size() < 2) {
            throw input_error(path.string() + ": line " + std::to_string(line_no) + " needs an id and a description");
        }
        GeneSet s;
        s.id = fields[0];
        s.description = fields[1];
        for (std::size_t j = 2; j < fields.size(); ++j) {
            if (!fields[j].empty()) s.genes.push_back(fields[j]);
        }
        sets.push_back(std::move(s));
    }
    return sets;
}

void write_gmt(const fs::path& path, std::span<const GeneSet> sets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw runtime_error("cannot write " + path.string());
    for (const auto& s : sets) {
        out << s.id << '\t' << s.description;
        for (const auto& g : s.genes) out << '\t' << g;
        out << '\n';
    }
}

// --- preprocessing -------------------------------------------------------

CohortMatrix filter_genes(const CohortMatrix& cohort, double min_freq, double cnv_threshold) {
    if (!(min_freq >= 0.0 && min_freq <= 1.0)) throw config_error("min_freq must lie in [0, 1]");
    const auto n = cohort.mut.rows();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index g = 0; g < cohort.mut.cols(); ++g) {
        Eigen::Index altered = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (cohort.mut(i, g) == 1.0 || std::abs(cohort.cnv(i, g)) > cnv_threshold) ++altered;
        }
        // Integer comparison avoids 1/100 < 0.01 rounding surprises.
        if (n == 0 || static_cast<double>(altered) >= min_freq * static_cast<double>(n) - 1e-9) keep.push_back(g);
    }
    if (keep.empty()) throw input_error("empty gene vocabulary after alteration-frequency filter");

    CohortMatrix out;
    out.patient_ids = cohort.patient_ids;
    out.labels = cohort.labels;
    out.mut.resize(n, static_cast<Eigen::Index>(keep.size()));
    out.cnv.resize(n, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
        out.gene_ids.push_back(cohort.gene_ids[static_cast<std::size_t>(keep[j])]);
        out.mut.col(static_cast<Eigen::Index>(j)) = cohort.mut.col(keep[j]);
        out.cnv.col(static_cast<Eigen::Index>(j)) = cohort.cnv.col(keep[j]);
    }
    return out;
}

NormStats fit_norm_stats(const CohortMatrix& cohort, std::span<const std::size_t> train_idx, int source_fold,
                         std::uint64_t source_seed) {
    if (train_idx.empty()) throw input_error("fit_norm_stats: empty training index list");
    NormStats s;
    s.gene_ids = cohort.gene_ids;
    s.source_fold = source_fold;
    s.source_seed = source_seed;
    const auto g = cohort.cnv.cols();
    s.mean.assign(static_cast<std::size_t>(g), 0.0);
    s.std.assign(static_cast<std::size_t>(g), 0.0);
    const double n = static_cast<double>(train_idx.size());
    for (Eigen::Index j = 0; j < g; ++j) {
        double sum = 0.0;
        for (auto i : train_idx) sum += cohort.cnv(static_cast<Eigen::Index>(i), j);
        const double mu = sum / n;
        double ss = 0.0;
        for (auto i : train_idx) {
            const double d = cohort.cnv(static_cast<Eigen::Index>(i), j) - mu;
            ss += d * d;
        }
        s.mean[static_cast<std::size_t>(j)] = mu;
        s.std[static_cast<std::size_t>(j)] = std::sqrt(ss / n);
    }
    return s;
}

CohortMatrix apply_norm(const CohortMatrix& cohort, const NormStats& stats) {
    if (stats.gene_ids != cohort.gene_ids) throw input_error("apply_norm: gene order of stats does not match cohort");
    CohortMatrix out = cohort;
    for (Eigen::Index j = 0; j < out.cnv.cols(); ++j) {
        const double mu = stats.mean[static_cast<std::size_t>(j)];
        const double denom = stats.std[static_cast<std::size_t>(j)] + stats.epsilon;
        out.cnv.col(j) = ((out.cnv.col(j).array() - mu) / denom).matrix();
    }
    return out;
}

std::vector<FoldSplit> make_folds(std::span<const int> labels, int n_folds, std::uint64_t base_seed,
                                  double val_fraction) {
    if (n_folds < 2) throw config_error("make_folds: n_folds must be at least 2");
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw input_error("make_folds: labels must be 0 or 1");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        if (by_class[static_cast<std::size_t>(c)].size() < static_cast<std::size_t>(n_folds)) {
            throw config_error("make_folds: class " + std::to_string(c) + " has " +
                               std::to_string(by_class[static_cast<std::size_t>(c)].size()) +
                               " members, fewer than " + std::to_string(n_folds) + " folds");
        }
    }

    // Test assignment: seeded shuffle per class, then round-robin.
    std::vector<int> fold_of(labels.size(), 0);
    Rng rng(base_seed);
    for (auto& members : by_class) {
        std::vector<std::size_t> order = members;
        rng.shuffle(order);
        for (std::size_t r = 0; r < order.size(); ++r) fold_of[order[r]] = static_cast<int>(r % static_cast<std::size_t>(n_folds));
    }

    std::vector<FoldSplit> folds;
    for (int f = 0; f < n_folds; ++f) {
        FoldSplit split;
        split.fold_index = f + 1;
        split.base_seed = base_seed;
        Rng val_rng(split.fold_seed());
        for (const auto& members : by_class) {
            std::vector<std::size_t> rest;
            for (auto i : members) {
                if (fold_of[i] == f) {
                    split.test_idx.push_back(i);
                } else {
                    rest.push_back(i);
                }
            }
            val_rng.shuffle(rest);
            auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(rest.size())));
            n_val = std::clamp<std::size_t>(n_val, 1, rest.size() - 1);
            split.val_idx.insert(split.val_idx.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
            split.train_idx.insert(split.train_idx.end(), rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
        }
        std::sort(split.train_idx.begin(), split.train_idx.end());
        std::sort(split.val_idx.begin(), split.val_idx.end());
        std::sort(split.test_idx.begin(), split.test_idx.end());
        folds.push_back(std::move(split));
    }
    return folds;
}

SynthCohort synth_cohort(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SynthCohort out;
    CohortMatrix& c = out.cohort;
    const std::size_t n = spec.n_patients;
    const std::size_t g = spec.n_genes;

    for (std::size_t j = 0; j < g; ++j) c.gene_ids.push_back(detail::padded("G", j + 1, g));
    for (std::size_t i = 0; i < n; ++i) c.patient_ids.push_back(detail::padded("S", i + 1, n));

    // Chained pathways: consecutive pathways share `overlap_genes` genes.
    const std::size_t stride = spec.genes_per_pathway - spec.overlap_genes;
    for (std::size_t p = 0; p < spec.n_pathways; ++p) {
        GeneSet s;
        s.id = detail::padded("PW", p + 1, spec.n_pathways);
        s.description = "synthetic";
        for (std::size_t k = 0; k < spec.genes_per_pathway; ++k) s.genes.push_back(c.gene_ids[p * stride + k]);
        out.pathways.push_back(std::move(s));
    }

    std::vector<std::size_t> order(spec.n_pathways);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    out.driver_pathways.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.driver_pathways));
    std::sort(out.driver_pathways.begin(), out.driver_pathways.end());

    std::vector<char> is_driver(g, 0);
    for (auto p : out.driver_pathways) {
        for (std::size_t k = 0; k < spec.genes_per_pathway; ++k) is_driver[p * stride + k] = 1;
    }
    for (std::size_t j = 0; j < g; ++j) {
        if (is_driver[j]) out.driver_genes.push_back(c.gene_ids[j]);
    }

    const auto n_pos = static_cast<std::size_t>(std::llround(spec.positive_fraction * static_cast<double>(n)));
    c.labels.assign(n, 0);
    std::fill(c.labels.begin(), c.labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
    rng.shuffle(c.labels);

    constexpr double background_rate = 0.02;
    // tanh(e/2) = 2*sigmoid(e) - 1, so the driver rate equals the background rate at e = 0.
    const double driver_rate = background_rate + 0.2 * std::tanh(spec.effect_size / 2.0);
    const bool mut_signal = spec.signal != SignalModality::cnv;
    const bool cnv_signal = spec.signal != SignalModality::mutation;

    c.mut.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(g));
    c.cnv.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(g));
    for (std::size_t i = 0; i < n; ++i) {
        const bool pos = c.labels[i] == 1;
        for (std::size_t j = 0; j < g; ++j) {
            const bool planted = pos && is_driver[j];
            const double rate = planted && mut_signal ? driver_rate : background_rate;
            const double shift = planted && cnv_signal ? spec.effect_size : 0.0;
            const auto ii = static_cast<Eigen::Index>(i);
            const auto jj = static_cast<Eigen::Index>(j);
            c.mut(ii, jj) = rng.bernoulli(rate) ? 1.0 : 0.0;
            c.cnv(ii, jj) = rng.normal() + shift;
        }
    }
    c.validate();
    return out;
}

void SynthSpec::validate() const {
    if (n_patients < 2) throw config_error("synth: n_patients must be at least 2");
    if (n_pathways < 1) throw config_error("synth: n_pathways must be positive");
    if (genes_per_pathway < 15) throw config_error("synth: genes_per_pathway must be at least 15");
    if (overlap_genes >= genes_per_pathway) throw config_error("synth: overlap_genes must be below genes_per_pathway");
    if (driver_pathways > n_pathways) throw config_error("synth: driver_pathways exceeds n_pathways");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) throw config_error("synth: positive_fraction must lie in (0, 1)");
    const std::size_t needed = n_pathways * genes_per_pathway - (n_pathways - 1) * overlap_genes;
    if (needed > n_genes) {
        throw config_error("synth: infeasible gene allocation, pathways need " + std::to_string(needed) +
                           " genes but n_genes is " + std::to_string(n_genes));
    }
}

// --- serialization -------------------------------------------------------

nlohmann::json to_json(const NormStats& s) {
    return {{"gene_ids", s.gene_ids},       {"mean", s.mean},
            {"std", s.std},                 {"epsilon", s.epsilon},
            {"source_fold", s.source_fold}, {"source_seed", s.source_seed},
            {"convention", s.convention}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
    NormStats s;
    j.at("gene_ids").get_to(s.gene_ids);
    j.at("mean").get_to(s.mean);
    j.at("std").get_to(s.std);
    s.epsilon = j.value("epsilon", 1e-8);
    s.source_fold = j.value("source_fold", -1);
    s.source_seed = j.value("source_seed", std::uint64_t{0});
    s.convention = j.value("convention", std::string("population"));
    if (s.mean.size() != s.gene_ids.size() || s.std.size() != s.gene_ids.size()) {
        throw input_error("norm stats: vector lengths disagree with gene_ids");
    }
    return s;
}

nlohmann::json folds_to_json(std::uint64_t base_seed, std::span<const FoldSplit> folds) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : folds) {
        arr.push_back({{"fold_index", f.fold_index}, {"train_idx", f.train_idx}, {"val_idx", f.val_idx}, {"test_idx", f.test_idx}});
    }
    return {{"base_seed", base_seed}, {"n_folds", folds.size()}, {"folds", arr}};
}

std::vector<FoldSplit> folds_from_json(const nlohmann::json& j) {
    std::vector<FoldSplit> folds;
    const auto base_seed = j.at("base_seed").get<std::uint64_t>();
    for (const auto& f : j.at("folds")) {
        FoldSplit s;
        s.base_seed = base_seed;
        f.at("fold_index").get_to(s.fold_index);
        f.at("train_idx").get_to(s.train_idx);
        f.at("val_idx").get_to(s.val_idx);
        f.at("test_idx").get_to(s.test_idx);
        folds.push_back(std::move(s));
    }
    if (folds.size() != j.at("n_folds").get<std::size_t>()) throw input_error("fold manifest: n_folds disagrees with folds");
    return folds;
}

namespace {
const char* modality_name(SignalModality m) {
    switch (m) {
    case SignalModality::cnv: return "cnv";
    case SignalModality::mutation: return "mutation";
    default: return "both";
    }
}
} // namespace

nlohmann::json to_json(const SynthSpec& s) {
    return {{"n_patients", s.n_patients},
            {"n_genes", s.n_genes},
            {"n_pathways", s.n_pathways},
            {"genes_per_pathway", s.genes_per_pathway},
            {"overlap_genes", s.overlap_genes},
            {"effect_size", s.effect_size},
            {"positive_fraction", s.positive_fraction},
            {"driver_pathways", s.driver_pathways},
            {"signal", modality_name(s.signal)},
            {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec s) {
    s.n_patients = j.value("n_patients", s.n_patients);
    s.n_genes = j.value("n_genes", s.n_genes);
    s.n_pathways = j.value("n_pathways", s.n_pathways);
    s.genes_per_pathway = j.value("genes_per_pathway", s.genes_per_pathway);
    s.overlap_genes = j.value("overlap_genes", s.overlap_genes);
    s.effect_size = j.value("effect_size", s.effect_size);
    s.positive_fraction = j.value("positive_fraction", s.positive_fraction);
    s.driver_pathways = j.value("driver_pathways", s.driver_pathways);
    s.seed = j.value("seed", s.seed);
    if (j.contains("signal")) {
        const auto m = j.at("signal").get<std::string>();
        if (m == "both") {
            s.signal = SignalModality::both;
        } else if (m == "cnv") {
            s.signal = SignalModality::cnv;
        } else if (m == "mutation") {
            s.signal = SignalModality::mutation;
        } else {
            throw config_error("synth.signal must be one of both|cnv|mutation, got '" + m + "'");
        }
    }
    return s;
}

} // namespace pathgt
