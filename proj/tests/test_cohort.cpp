#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "pathgt/cohort.hpp"
#include "pathgt/error.hpp"
#include "support.hpp"

using namespace pathgt;
using namespace pathgt::testing;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream(p) << s;
}

CohortMatrix small_cohort() {
    CohortMatrix c;
    c.patient_ids = {"P1", "P2", "P3"};
    c.gene_ids = {"A", "B", "C", "D"};
    c.mut.resize(3, 4);
    c.mut << 0, 1, 0, 0,  //
        1, 0, 0, 1,       //
        0, 0, 1, 0;
    c.cnv.resize(3, 4);
    c.cnv << 0.25, -1.5, 0, 2,  //
        1e-3, 0.5, -0.75, 3.125,  //
        -2, 0, 1, 0.1;
    c.labels = {0, 1, 1};
    return c;
}

// Two-sample Kolmogorov-Smirnov with the asymptotic Kolmogorov tail.
double ks_pvalue(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
    }
    const double ne = double(a.size()) * b.size() / double(a.size() + b.size());
    const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    return std::clamp(p, 0.0, 1.0);
}

} // namespace

TEST_CASE("cohort TSV round trip") {
    const auto dir = scratch_dir("cohort_io");
    const auto c = small_cohort();
    write_matrix_tsv(dir / "mut.tsv", c, true);
    write_matrix_tsv(dir / "cnv.tsv", c, false);
    write_labels_tsv(dir / "labels.tsv", c);
    const auto back = load_cohort(dir / "mut.tsv", dir / "cnv.tsv", dir / "labels.tsv");
    CHECK(back.n_patients() == 3);
    CHECK(back.n_genes() == 4);
    CHECK(back.patient_ids == c.patient_ids);
    CHECK(back.gene_ids == c.gene_ids);
    CHECK(back.mut == c.mut);
    CHECK(back.cnv == c.cnv);
    CHECK(back.labels == c.labels);
}

TEST_CASE("cohort loading rejects malformed inputs") {
    const auto dir = scratch_dir("cohort_bad");
    const auto c = small_cohort();
    write_matrix_tsv(dir / "mut.tsv", c, true);
    write_matrix_tsv(dir / "cnv.tsv", c, false);
    write_labels_tsv(dir / "labels.tsv", c);

    write_text(dir / "mut2.tsv", "patient_id\tA\tB\tC\tD\nP1\t0\t1\t0\t0\nP2\t1\t0\t2\t1\nP3\t0\t0\t1\t0\n");
    CHECK_THROWS_WITH(load_cohort(dir / "mut2.tsv", dir / "cnv.tsv", dir / "labels.tsv"),
                      doctest::Contains("non-binary mutation"));

    write_text(dir / "labels2.tsv", "P1\t0\nP2\t1\n");
    CHECK_THROWS_WITH(load_cohort(dir / "mut.tsv", dir / "cnv.tsv", dir / "labels2.tsv"),
                      doctest::Contains("patient"));

    write_text(dir / "labels3.tsv", "P1\t0\nP2\t1\nP3\t2\n");
    CHECK_THROWS(load_cohort(dir / "mut.tsv", dir / "cnv.tsv", dir / "labels3.tsv"));

    write_text(dir / "cnv2.tsv", "patient_id\tA\tB\tD\tC\nP1\t0\t1\t0\t0\nP2\t1\t0\t0\t1\nP3\t0\t0\t1\t0\n");
    CHECK_THROWS_WITH(load_cohort(dir / "mut.tsv", dir / "cnv2.tsv", dir / "labels.tsv"), doctest::Contains("gene"));

    try {
        load_cohort(dir / "missing.tsv", dir / "cnv.tsv", dir / "labels.tsv");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::invalid_input);
    }
}

TEST_CASE("filter_genes frequency boundary and identity") {
    CohortMatrix c;
    for (int i = 0; i < 100; ++i) c.patient_ids.push_back("P" + std::to_string(i));
    c.gene_ids = {"never", "once_mut", "once_cnv", "cnv_at_threshold"};
    c.mut = MatD::Zero(100, 4);
    c.cnv = MatD::Zero(100, 4);
    c.labels.assign(100, 0);
    c.labels[0] = 1;
    c.mut(7, 1) = 1;
    c.cnv(9, 2) = -0.6;
    c.cnv(3, 3) = 0.5;  // not strictly above the threshold

    const auto f = filter_genes(c, 0.01);
    CHECK(f.gene_ids == std::vector<std::string>{"once_mut", "once_cnv"});
    CHECK(f.mut.col(0) == c.mut.col(1));
    CHECK(f.cnv.col(1) == c.cnv.col(2));

    const auto same = filter_genes(c, 0.0);
    CHECK(same.gene_ids == c.gene_ids);
    CHECK(same.cnv == c.cnv);

    CHECK(filter_genes(f, 0.01).gene_ids == f.gene_ids);
    CHECK_THROWS_WITH(filter_genes(c, 0.5), doctest::Contains("empty gene vocabulary"));
    CHECK_THROWS(filter_genes(c, 1.5));
}

TEST_CASE("filter_genes is idempotent on synthetic data") {
    SynthSpec s;
    s.n_patients = 200;
    s.effect_size = 1.0;
    const auto syn = synth_cohort(s);
    for (double f : {0.05, 0.2, 0.4}) {
        const auto once = filter_genes(syn.cohort, f);
        const auto twice = filter_genes(once, f);
        CHECK(once.gene_ids == twice.gene_ids);
        CHECK(once.cnv == twice.cnv);
    }
}

TEST_CASE("norm stats use training rows and the population convention") {
    CohortMatrix c;
    c.patient_ids = {"a", "b", "c", "d"};
    c.gene_ids = {"X", "K"};
    c.mut = MatD::Zero(4, 2);
    c.cnv.resize(4, 2);
    c.cnv << 1, 5,  //
        2, 5,       //
        3, 5,       //
        100, -7;
    c.labels = {0, 1, 0, 1};
    const std::vector<std::size_t> train{0, 1, 2};
    const auto st = fit_norm_stats(c, train, 3, 42);
    CHECK(st.mean[0] == doctest::Approx(2.0));
    CHECK(st.std[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
    CHECK(st.mean[1] == 5.0);
    CHECK(st.std[1] == 0.0);
    CHECK(st.source_fold == 3);
    CHECK(st.convention == "population");

    const auto n = apply_norm(c, st);
    CHECK(n.cnv(1, 0) == 0.0);
    CHECK(n.cnv(0, 1) == 0.0);
    CHECK(n.cnv(3, 0) == doctest::Approx((100.0 - 2.0) / (std::sqrt(2.0 / 3.0) + 1e-8)));
    CHECK(n.mut == c.mut);

    const std::vector<std::size_t> single{3};
    const auto one = fit_norm_stats(c, single);
    CHECK(one.mean[0] == 100.0);
    CHECK(one.std[0] == 0.0);

    const auto back = norm_stats_from_json(to_json(st));
    CHECK(back.mean == st.mean);
    CHECK(back.std == st.std);
    CHECK(back.source_fold == 3);

    CHECK_THROWS(fit_norm_stats(c, std::vector<std::size_t>{}));
}

TEST_CASE("normalized training columns have zero mean and shrunken unit scale") {
    SynthSpec s;
    s.n_patients = 150;
    const auto syn = synth_cohort(s);
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < 150; i += 2) train.push_back(i);
    const auto st = fit_norm_stats(syn.cohort, train);
    const auto n = apply_norm(syn.cohort, st);
    for (std::size_t g = 0; g < syn.cohort.n_genes(); ++g) {
        double m = 0.0, v = 0.0;
        for (auto i : train) m += n.cnv(Eigen::Index(i), Eigen::Index(g));
        m /= double(train.size());
        for (auto i : train) v += std::pow(n.cnv(Eigen::Index(i), Eigen::Index(g)) - m, 2);
        v /= double(train.size());
        CHECK(std::abs(m) < 1e-6);
        const double sg = st.std[g];
        if (sg > 1e-6) CHECK(std::abs(std::sqrt(v) - sg / (sg + 1e-8)) < 1e-4);
    }
}

TEST_CASE("folds are stratified exact partitions") {
    std::vector<int> labels(100, 0);
    for (int i = 0; i < 20; ++i) labels[std::size_t(i * 5)] = 1;
    const auto folds = make_folds(labels, 5, 42);
    REQUIRE(folds.size() == 5);
    std::vector<int> test_count(100, 0);
    for (const auto& f : folds) {
        int pos = 0;
        for (auto i : f.test_idx) pos += labels[i];
        CHECK(pos == 4);
        CHECK(f.test_idx.size() - std::size_t(pos) == 16);
        std::set<std::size_t> all;
        for (const auto* part : {&f.train_idx, &f.val_idx, &f.test_idx}) {
            for (auto i : *part) CHECK(all.insert(i).second);
        }
        CHECK(all.size() == 100);
        CHECK(*all.rbegin() == 99);
        for (auto i : f.test_idx) ++test_count[i];
        // validation is about 10% of the non-test rows, stratified
        int vpos = 0;
        for (auto i : f.val_idx) vpos += labels[i];
        CHECK(vpos == 2);
        CHECK(f.val_idx.size() == 8);
        CHECK(f.fold_seed() == 42u + std::uint64_t(f.fold_index));
    }
    for (int c : test_count) CHECK(c == 1);
}

TEST_CASE("stratification bound holds for uneven class sizes") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Rng rng(seed);
        std::vector<int> labels(137);
        for (auto& l : labels) l = rng.bernoulli(0.3) ? 1 : 0;
        const double n1 = std::count(labels.begin(), labels.end(), 1);
        const double n0 = double(labels.size()) - n1;
        for (const auto& f : make_folds(labels, 5, seed)) {
            for (const auto* part : {&f.train_idx, &f.val_idx, &f.test_idx}) {
                double c1 = 0;
                for (auto i : *part) c1 += labels[i];
                const double c0 = double(part->size()) - c1;
                const double frac = double(part->size()) / double(labels.size());
                CHECK(std::abs(c1 - frac * n1) <= 1.0 + 1e-9);
                CHECK(std::abs(c0 - frac * n0) <= 1.0 + 1e-9);
            }
        }
    }
}

TEST_CASE("folds are deterministic, seed dependent and serializable") {
    std::vector<int> labels(60, 0);
    for (int i = 0; i < 25; ++i) labels[std::size_t(i)] = 1;
    const auto a = make_folds(labels, 5, 42);
    const auto b = make_folds(labels, 5, 42);
    const auto c = make_folds(labels, 5, 123);
    CHECK(folds_to_json(42, a).dump() == folds_to_json(42, b).dump());
    CHECK(folds_to_json(42, a)["folds"].dump() != folds_to_json(123, c)["folds"].dump());
    const auto back = folds_from_json(folds_to_json(42, a));
    REQUIRE(back.size() == a.size());
    for (std::size_t f = 0; f < a.size(); ++f) {
        CHECK(back[f].train_idx == a[f].train_idx);
        CHECK(back[f].val_idx == a[f].val_idx);
        CHECK(back[f].test_idx == a[f].test_idx);
        CHECK(back[f].fold_seed() == a[f].fold_seed());
    }
    std::vector<int> few(10, 0);
    few[0] = few[1] = few[2] = 1;
    CHECK_THROWS(make_folds(few, 5, 1));
    CHECK_THROWS(make_folds(labels, 1, 1));
}

TEST_CASE("synthetic cohorts are deterministic and plant the effect") {
    SynthSpec s;
    s.n_patients = 1200;
    s.effect_size = 3.0;
    const auto a = synth_cohort(s);
    const auto b = synth_cohort(s);
    CHECK(a.cohort.mut == b.cohort.mut);
    CHECK(a.cohort.cnv == b.cohort.cnv);
    CHECK(a.cohort.labels == b.cohort.labels);
    CHECK(a.driver_pathways.size() == 2);

    // Consecutive pathways share exactly `overlap_genes` genes.
    for (std::size_t p = 0; p + 1 < a.pathways.size(); ++p) {
        std::set<std::string> x(a.pathways[p].genes.begin(), a.pathways[p].genes.end());
        std::size_t shared = 0;
        for (const auto& g : a.pathways[p + 1].genes) shared += x.count(g);
        CHECK(shared == s.overlap_genes);
    }

    std::set<std::string> driver(a.driver_genes.begin(), a.driver_genes.end());
    double sum1 = 0, sum0 = 0, n1 = 0, n0 = 0;
    for (std::size_t g = 0; g < a.cohort.n_genes(); ++g) {
        if (!driver.count(a.cohort.gene_ids[g])) continue;
        for (std::size_t i = 0; i < a.cohort.n_patients(); ++i) {
            const double v = a.cohort.cnv(Eigen::Index(i), Eigen::Index(g));
            if (a.cohort.labels[i]) {
                sum1 += v;
                ++n1;
            } else {
                sum0 += v;
                ++n0;
            }
        }
    }
    CHECK(sum1 / n1 - sum0 / n0 == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("null synthetic cohort has exchangeable classes") {
    SynthSpec s;
    s.n_patients = 2000;
    s.effect_size = 0.0;
    const auto a = synth_cohort(s);
    std::set<std::string> driver(a.driver_genes.begin(), a.driver_genes.end());
    std::vector<double> pos, neg;
    for (std::size_t g = 0; g < a.cohort.n_genes(); ++g) {
        if (!driver.count(a.cohort.gene_ids[g])) continue;
        for (std::size_t i = 0; i < a.cohort.n_patients(); ++i) {
            (a.cohort.labels[i] ? pos : neg).push_back(a.cohort.cnv(Eigen::Index(i), Eigen::Index(g)));
        }
    }
    CHECK(ks_pvalue(pos, neg) > 0.01);
}

TEST_CASE("synthetic spec validation and json") {
    SynthSpec s;
    s.n_genes = 100;
    CHECK_THROWS_WITH(synth_cohort(s), doctest::Contains("infeasible"));
    s = SynthSpec{};
    s.genes_per_pathway = 10;
    CHECK_THROWS(s.validate());
    s = SynthSpec{};
    s.driver_pathways = 30;
    CHECK_THROWS(s.validate());
    s = SynthSpec{};
    s.signal = SignalModality::cnv;
    s.effect_size = 1.5;
    const auto back = synth_spec_from_json(to_json(s));
    CHECK(back.signal == SignalModality::cnv);
    CHECK(back.effect_size == 1.5);
}

TEST_CASE("GMT round trip") {
    const auto dir = scratch_dir("gmt");
    std::vector<GeneSet> sets{{"PW1", "first", {"A", "B", "C"}}, {"PW2", "second", {"C", "D"}}};
    write_gmt(dir / "p.gmt", sets);
    const auto back = load_gmt(dir / "p.gmt");
    REQUIRE(back.size() == 2);
    CHECK(back[1].id == "PW2");
    CHECK(back[1].description == "second");
    CHECK(back[0].genes == sets[0].genes);
}
