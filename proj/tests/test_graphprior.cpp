#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pathgt/graphprior.hpp"
#include "support.hpp"

using namespace pathgt;
using namespace pathgt::testing;

namespace {

std::vector<IndexedGeneSet> random_sets(std::size_t p, std::size_t genes, std::size_t per_set, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<IndexedGeneSet> sets;
    for (std::size_t i = 0; i < p; ++i) {
        std::vector<std::size_t> all(genes);
        for (std::size_t g = 0; g < genes; ++g) all[g] = g;
        rng.shuffle(all);
        all.resize(per_set);
        std::sort(all.begin(), all.end());
        sets.push_back({"S" + std::to_string(i), all});
    }
    return sets;
}

double raw_jaccard(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> inter, uni;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
    return double(inter.size()) / double(uni.size());
}

} // namespace

TEST_CASE("jaccard adjacency of two overlapping sets") {
    // {a,b,c} vs {b,c,d}: 2 shared of 4 total
    std::vector<IndexedGeneSet> sets{{"P1", {0, 1, 2}}, {"P2", {1, 2, 3}}, {"P3", {7, 8}}};
    const auto prior = build_prior(sets, 1, GraphMode::jaccard);
    CHECK(prior.max_raw_jaccard == doctest::Approx(0.5));
    CHECK(prior.adjacency(0, 1) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(prior.adjacency(1, 0) == prior.adjacency(0, 1));
    CHECK(prior.adjacency(0, 2) == 0.0);
    CHECK(prior.adjacency.diagonal().isZero());
}

TEST_CASE("adjacency matches a set-algebra oracle") {
    const auto sets = random_sets(9, 30, 8, 11);
    const auto prior = build_prior(sets, 1, GraphMode::jaccard);
    double mx = 0.0;
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j)
            if (i != j) mx = std::max(mx, raw_jaccard(sets[i].genes, sets[j].genes));
    for (std::size_t i = 0; i < 9; ++i) {
        for (std::size_t j = 0; j < 9; ++j) {
            const double expect = i == j ? 0.0 : raw_jaccard(sets[i].genes, sets[j].genes) / (mx + 1e-8);
            CHECK(prior.adjacency(Eigen::Index(i), Eigen::Index(j)) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    CHECK(prior.adjacency.maxCoeff() <= 1.0);
}

TEST_CASE("full mode is the complete graph") {
    std::vector<IndexedGeneSet> sets{{"P1", {0}}, {"P2", {1}}, {"P3", {2}}};
    const auto prior = build_prior(sets, 1, GraphMode::full);
    CHECK(prior.adjacency == MatD::Ones(3, 3) - MatD::Identity(3, 3));
}

TEST_CASE("size floor and minimum pathway count") {
    std::vector<IndexedGeneSet> sets{{"P1", {0, 1, 2}}, {"P2", {1, 2, 3}}, {"small", {4}}};
    const auto prior = build_prior(sets, 2, GraphMode::jaccard);
    CHECK(prior.pathway_ids == std::vector<std::string>{"P1", "P2"});
    CHECK_THROWS(build_prior(sets, 4, GraphMode::jaccard));
}

TEST_CASE("gene symbols map onto the vocabulary") {
    std::vector<std::string> vocab{"A", "B", "C", "D"};
    std::vector<GeneSet> gs{{"PW", "x", {"D", "Z", "A"}}};
    const auto mapped = map_gene_sets(gs, vocab);
    REQUIRE(mapped.size() == 1);
    CHECK(mapped[0].genes == std::vector<std::size_t>{0, 3});
}

TEST_CASE("prior is equivariant to pathway order") {
    auto sets = random_sets(7, 25, 7, 3);
    const auto a = build_prior(sets, 1, GraphMode::jaccard);
    std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
    std::vector<IndexedGeneSet> shuffled;
    for (auto i : perm) shuffled.push_back(sets[i]);
    const auto b = build_prior(shuffled, 1, GraphMode::jaccard);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 7; ++j)
            CHECK(b.adjacency(Eigen::Index(i), Eigen::Index(j)) ==
                  doctest::Approx(a.adjacency(Eigen::Index(perm[i]), Eigen::Index(perm[j]))).epsilon(1e-14));
}

TEST_CASE("two-node laplacian spectrum") {
    PathwayPrior prior;
    prior.pathway_ids = {"a", "b"};
    prior.membership = {{0}, {1}};
    prior.adjacency = MatD{{0, 1}, {1, 0}};
    const MatD lap = normalized_laplacian(prior);
    CHECK(lap == MatD{{1, -1}, {-1, 1}});
    const auto eig = jacobi_eigen(lap);
    CHECK(eig.values[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(eig.values[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("jacobi agrees with a dense eigensolver") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto prior = build_prior(random_sets(8, 20, 6, seed), 1, GraphMode::jaccard);
        const MatD lap = normalized_laplacian(prior);
        const auto eig = jacobi_eigen(lap);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle{Eigen::MatrixXd(lap)};
        for (std::size_t i = 0; i < 8; ++i) {
            CHECK(eig.values[i] == doctest::Approx(oracle.eigenvalues()(Eigen::Index(i))).epsilon(1e-9));
            CHECK(eig.values[i] >= -1e-8);
            CHECK(eig.values[i] <= 2.0 + 1e-8);
        }
        const MatD v = eig.vectors;
        CHECK((v.transpose() * v - MatD::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((lap * v - v * Eigen::VectorXd::Map(eig.values.data(), 8).asDiagonal()).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("connected prior has the degree-weighted null vector") {
    std::vector<IndexedGeneSet> sets;
    for (std::size_t i = 0; i < 6; ++i) sets.push_back({"C" + std::to_string(i), {i, i + 1, i + 2}});
    const auto prior = build_prior(sets, 1, GraphMode::jaccard);
    const auto enc = laplacian_encoding(prior, 3);
    CHECK(std::abs(enc.eigvals[0]) < 1e-9);
    Eigen::VectorXd expect(6);
    for (Eigen::Index i = 0; i < 6; ++i) expect(i) = std::sqrt(enc.degree[std::size_t(i)]);
    expect.normalize();
    CHECK((enc.eigvecs.col(0) - expect).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("complete graph spectrum") {
    std::vector<IndexedGeneSet> sets;
    for (std::size_t i = 0; i < 6; ++i) sets.push_back({"F" + std::to_string(i), {i}});
    const auto prior = build_prior(sets, 1, GraphMode::full);
    const auto eig = jacobi_eigen(normalized_laplacian(prior));
    CHECK(std::abs(eig.values[0]) < 1e-6);
    for (std::size_t i = 1; i < 6; ++i) CHECK(eig.values[i] == doctest::Approx(6.0 / 5.0).epsilon(1e-6));
}

TEST_CASE("sign convention and k bound") {
    const auto prior = build_prior(random_sets(10, 30, 8, 5), 1, GraphMode::jaccard);
    const auto enc = laplacian_encoding(prior, 4);
    CHECK(enc.k() == 4);
    for (Eigen::Index c = 0; c < 4; ++c) {
        for (Eigen::Index r = 0; r < 10; ++r) {
            if (std::abs(enc.eigvecs(r, c)) > 1e-9) {
                CHECK(enc.eigvecs(r, c) > 0.0);
                break;
            }
        }
    }
    CHECK_THROWS(laplacian_encoding(prior, 10));
}

TEST_CASE("jacobi reports non-convergence") {
    Rng rng(1);
    MatD m(12, 12);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    m = (m + m.transpose()).eval();
    CHECK_THROWS_WITH(jacobi_eigen(m, 1e-10, 1), doctest::Contains("sweeps"));
}

TEST_CASE("positional features") {
    const auto prior = build_prior(random_sets(8, 25, 7, 2), 1, GraphMode::jaccard);
    const auto enc = laplacian_encoding(prior, 3);
    Rng wr(4);
    MatD w(5, 4), b(1, 5);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = wr.normal();
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = wr.normal();

    CHECK(positional_features(enc, w, b, false, nullptr) == positional_features(enc, w, b, false, nullptr));
    Rng r0(9);
    CHECK(positional_features(enc, MatD::Zero(5, 4), MatD::Zero(1, 5), true, &r0).isZero());

    // Training output equals hand-flipped eigenvectors projected by W.
    Rng r1(17), r2(17);
    std::vector<double> flips;
    const MatD out = positional_features(enc, w, b, true, &r1, &flips);
    const auto drawn = draw_sign_flips(3, r2);
    CHECK(flips == drawn);
    MatD in(8, 4);
    for (Eigen::Index p = 0; p < 8; ++p) {
        for (Eigen::Index j = 0; j < 3; ++j) in(p, j) = enc.eigvecs(p, j) * drawn[std::size_t(j)];
        in(p, 3) = enc.degree[std::size_t(p)] / (8.0 + 1e-8);
    }
    MatD expect = in * w.transpose();
    expect.rowwise() += b.row(0);
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);

    // Flips only change signs.
    const MatD flipped = positional_inputs(enc, drawn);
    const MatD plain = positional_inputs(enc);
    CHECK(flipped.cwiseAbs() == plain.cwiseAbs());
}

TEST_CASE("prior export and spectral cache round trip") {
    const auto dir = scratch_dir("graphprior");
    const auto prior = build_prior(random_sets(6, 20, 6, 8), 1, GraphMode::jaccard);
    write_prior_csv(dir / "prior.csv", prior);
    std::ifstream in(dir / "prior.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header.find("S0") != std::string::npos);
    const auto side = prior_sidecar(prior);
    CHECK(side["mode"] == "jaccard");
    CHECK(side.contains("max_raw_jaccard"));

    const auto enc = laplacian_encoding(prior, 3);
    write_spectral_cache(dir / "spectral", enc);
    const auto back = read_spectral_cache(dir / "spectral");
    CHECK(back.eigvecs == enc.eigvecs);
    CHECK(back.eigvals == enc.eigvals);
    CHECK(back.degree == enc.degree);

    {
        std::fstream f(dir / "spectral.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const char junk = 0x5a;
        f.write(&junk, 1);
    }
    CHECK_THROWS(read_spectral_cache(dir / "spectral"));
    CHECK(graph_mode_from_string("full") == GraphMode::full);
    CHECK_THROWS(graph_mode_from_string("dense"));
}

TEST_CASE("spectral cache lookups reuse and repair entries") {
    const auto dir = scratch_dir("spectral_cache");
    const auto prior = build_prior(random_sets(7, 25, 7, 12), 1, GraphMode::jaccard);
    const auto a = cached_laplacian_encoding(prior, 3, dir);
    std::size_t files = 0;
    std::filesystem::path bin;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        ++files;
        if (e.path().extension() == ".bin") bin = e.path();
    }
    CHECK(files == 2);
    const auto b = cached_laplacian_encoding(prior, 3, dir);
    CHECK(b.eigvecs == a.eigvecs);
    std::filesystem::resize_file(bin, 16);
    const auto c = cached_laplacian_encoding(prior, 3, dir);
    CHECK(c.eigvecs == a.eigvecs);
    CHECK(std::filesystem::file_size(bin) > 16);
    CHECK(cached_laplacian_encoding(prior, 2, dir).k() == 2);
    CHECK(cached_laplacian_encoding(prior, 3, {}).eigvecs == a.eigvecs);
}
