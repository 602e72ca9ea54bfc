#include "pathgt/graphprior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "pathgt/error.hpp"
#include "pathgt/tensor_io.hpp"
#include "text_util.hpp"

namespace pathgt {

namespace {
constexpr double kAdjEps = 1e-8;
constexpr double kDegreeFloor = 1e-8;
constexpr double kDegreeEps = 1e-8;
constexpr double kSignTol = 1e-9;
} // namespace

std::vector<IndexedGeneSet> map_gene_sets(std::span<const GeneSet> sets, std::span<const std::string> vocabulary) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < vocabulary.size(); ++i) index.emplace(vocabulary[i], i);
    std::vector<IndexedGeneSet> out;
    out.reserve(sets.size());
    for (const auto& s : sets) {
        IndexedGeneSet m;
        m.id = s.id;
        for (const auto& g : s.genes) {
            if (auto it = index.find(g); it != index.end()) m.genes.push_back(it->second);
        }
        std::sort(m.genes.begin(), m.genes.end());
        m.genes.erase(std::unique(m.genes.begin(), m.genes.end()), m.genes.end());
        out.push_back(std::move(m));
    }
    return out;
}

PathwayPrior build_prior(std::span<const IndexedGeneSet> sets, std::size_t min_genes, GraphMode mode) {
    PathwayPrior prior;
    prior.mode = mode;
    prior.min_genes = min_genes;
    for (const auto& s : sets) {
        std::vector<std::size_t> genes = s.genes;
        std::sort(genes.begin(), genes.end());
        genes.erase(std::unique(genes.begin(), genes.end()), genes.end());
        if (genes.empty() || genes.size() < min_genes) continue;
        prior.pathway_ids.push_back(s.id);
        prior.membership.push_back(std::move(genes));
    }
    const std::size_t p = prior.n_pathways();
    if (p < 2) {
        throw input_error("pathway prior needs at least 2 pathways with >= " + std::to_string(min_genes) +
                          " mapped genes, found " + std::to_string(p));
    }
    const auto n = static_cast<Eigen::Index>(p);
    prior.adjacency = MatD::Zero(n, n);
    if (mode == GraphMode::full) {
        prior.adjacency.setOnes();
        prior.adjacency.diagonal().setZero();
        prior.max_raw_jaccard = 1.0;
        return prior;
    }

    MatD raw = MatD::Zero(n, n);
    std::vector<std::size_t> scratch;
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = a + 1; b < p; ++b) {
            const auto& ga = prior.membership[a];
            const auto& gb = prior.membership[b];
            scratch.clear();
            std::set_intersection(ga.begin(), ga.end(), gb.begin(), gb.end(), std::back_inserter(scratch));
            const double inter = static_cast<double>(scratch.size());
            const double uni = static_cast<double>(ga.size() + gb.size()) - inter;
            const double j = inter / uni;
            raw(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = j;
            raw(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = j;
        }
    }
    prior.max_raw_jaccard = raw.maxCoeff();
    MatD sym = 0.5 * (raw + raw.transpose());
    prior.adjacency = sym / (sym.maxCoeff() + kAdjEps);
    return prior;
}

MatD normalized_laplacian(const PathwayPrior& prior, std::vector<double>* degree) {
    const auto n = prior.adjacency.rows();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = std::max(prior.adjacency.row(i).sum(), kDegreeFloor);
    MatD lap = MatD::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            lap(i, j) -= prior.adjacency(i, j) / std::sqrt(d[static_cast<std::size_t>(i)] * d[static_cast<std::size_t>(j)]);
        }
    }
    if (degree) *degree = std::move(d);
    return lap;
}

EigenDecomposition jacobi_eigen(const MatD& symmetric, double tol, int max_sweeps) {
    const auto n = symmetric.rows();
    if (symmetric.cols() != n) throw input_error("jacobi_eigen: matrix is not square");
    MatD a = symmetric;
    MatD v = MatD::Identity(n, n);

    auto max_offdiag = [&] {
        double m = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) m = std::max(m, std::abs(a(i, j)));
        return m;
    };

    int sweep = 0;
    for (; max_offdiag() >= tol; ++sweep) {
        if (sweep >= max_sweeps) {
            throw runtime_error("jacobi_eigen: no convergence after " + std::to_string(sweep) +
                                " sweeps (max off-diagonal " + std::to_string(max_offdiag()) + ")");
        }
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });

    EigenDecomposition out;
    out.sweeps = sweep;
    out.vectors.resize(n, n);
    for (Eigen::Index c = 0; c < n; ++c) {
        const Eigen::Index src = order[static_cast<std::size_t>(c)];
        out.values.push_back(a(src, src));
        out.vectors.col(c) = v.col(src);
        for (Eigen::Index r = 0; r < n; ++r) {
            if (std::abs(out.vectors(r, c)) > kSignTol) {
                if (out.vectors(r, c) < 0) out.vectors.col(c) *= -1.0;
                break;
            }
        }
    }
    return out;
}

SpectralEncoding laplacian_encoding(const PathwayPrior& prior, std::size_t k) {
    const std::size_t p = prior.n_pathways();
    if (k >= p) throw config_error("laplacian_encoding: k=" + std::to_string(k) + " must be below P=" + std::to_string(p));
    SpectralEncoding enc;
    const MatD lap = normalized_laplacian(prior, &enc.degree);
    EigenDecomposition eig = jacobi_eigen(lap);
    enc.eigvecs = eig.vectors.leftCols(static_cast<Eigen::Index>(k));
    enc.eigvals.assign(eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(k));
    return enc;
}

MatD positional_inputs(const SpectralEncoding& enc, std::span<const double> flips) {
    const auto p = static_cast<Eigen::Index>(enc.n_nodes());
    const auto k = static_cast<Eigen::Index>(enc.k());
    MatD in(p, k + 1);
    in.leftCols(k) = enc.eigvecs;
    if (!flips.empty()) {
        if (flips.size() != enc.k()) throw input_error("positional_inputs: flips length differs from k");
        for (Eigen::Index j = 0; j < k; ++j) in.col(j) *= flips[static_cast<std::size_t>(j)];
    }
    for (Eigen::Index i = 0; i < p; ++i) {
        in(i, k) = enc.degree[static_cast<std::size_t>(i)] / (static_cast<double>(p) + kDegreeEps);
    }
    return in;
}

std::vector<double> draw_sign_flips(std::size_t k, Rng& rng) {
    std::vector<double> flips(k);
    for (auto& f : flips) f = rng.coin() ? 1.0 : -1.0;
    return flips;
}

MatD positional_features(const SpectralEncoding& enc, const MatD& weight, const MatD& bias, bool training, Rng* rng,
                         std::vector<double>* flips_out) {
    std::vector<double> flips;
    if (training) {
        if (!rng) throw runtime_error("positional_features: training mode needs an rng");
        flips = draw_sign_flips(enc.k(), *rng);
    }
    const MatD in = positional_inputs(enc, flips);
    MatD out = in * weight.transpose();
    out.rowwise() += bias.row(0);
    if (flips_out) *flips_out = std::move(flips);
    return out;
}

// --- export --------------------------------------------------------------

const char* to_string(GraphMode mode) { return mode == GraphMode::full ? "full" : "jaccard"; }

GraphMode graph_mode_from_string(const std::string& s) {
    if (s == "jaccard") return GraphMode::jaccard;
    if (s == "full") return GraphMode::full;
    throw config_error("graph mode must be jaccard|full, got '" + s + "'");
}

void write_prior_csv(const std::filesystem::path& csv_path, const PathwayPrior& prior) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw runtime_error("cannot write " + csv_path.string());
    out << "pathway_id";
    for (const auto& id : prior.pathway_ids) out << ',' << id;
    out << '\n';
    for (Eigen::Index i = 0; i < prior.adjacency.rows(); ++i) {
        out << prior.pathway_ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < prior.adjacency.cols(); ++j) out << ',' << detail::format_double(prior.adjacency(i, j));
        out << '\n';
    }
}

nlohmann::json prior_sidecar(const PathwayPrior& prior) {
    return {{"mode", to_string(prior.mode)}, {"min_genes", prior.min_genes}, {"max_raw_jaccard", prior.max_raw_jaccard}};
}

void write_spectral_cache(const std::filesystem::path& stem, const SpectralEncoding& enc) {
    std::vector<unsigned char> bytes;
    for (double v : enc.eigvals) detail::put_f64_le(bytes, v);
    for (Eigen::Index i = 0; i < enc.eigvecs.rows(); ++i)
        for (Eigen::Index j = 0; j < enc.eigvecs.cols(); ++j) detail::put_f64_le(bytes, enc.eigvecs(i, j));
    for (double v : enc.degree) detail::put_f64_le(bytes, v);

    auto bin = stem;
    bin += ".bin";
    auto js = stem;
    js += ".json";
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw runtime_error("cannot write " + bin.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    std::ofstream meta(js, std::ios::binary);
    meta << nlohmann::json{{"P", enc.n_nodes()}, {"k", enc.k()}, {"checksum", fnv1a_hex(bytes)}}.dump(2) << '\n';
}

SpectralEncoding read_spectral_cache(const std::filesystem::path& stem) {
    auto bin = stem;
    bin += ".bin";
    auto js = stem;
    js += ".json";
    std::ifstream meta_in(js);
    if (!meta_in) throw input_error("cannot open " + js.string());
    const auto meta = nlohmann::json::parse(meta_in);
    const auto p = meta.at("P").get<std::size_t>();
    const auto k = meta.at("k").get<std::size_t>();
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw input_error("cannot open " + bin.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != 8 * (k + p * k + p)) throw input_error(bin.string() + ": size does not match manifest");
    if (fnv1a_hex(bytes) != meta.at("checksum").get<std::string>()) throw input_error(bin.string() + ": checksum mismatch");
    SpectralEncoding enc;
    const unsigned char* cur = bytes.data();
    for (std::size_t i = 0; i < k; ++i, cur += 8) enc.eigvals.push_back(detail::get_f64_le(cur));
    enc.eigvecs.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < k; ++j, cur += 8)
            enc.eigvecs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = detail::get_f64_le(cur);
    for (std::size_t i = 0; i < p; ++i, cur += 8) enc.degree.push_back(detail::get_f64_le(cur));
    return enc;
}

SpectralEncoding cached_laplacian_encoding(const PathwayPrior& prior, std::size_t k,
                                          const std::filesystem::path& cache_dir) {
    if (cache_dir.empty()) return laplacian_encoding(prior, k);
    std::vector<unsigned char> key;
    detail::put_f64_le(key, static_cast<double>(k));
    for (Eigen::Index i = 0; i < prior.adjacency.size(); ++i) detail::put_f64_le(key, prior.adjacency.data()[i]);
    const auto stem = cache_dir / ("spectral_" + fnv1a_hex(key));
    auto manifest = stem;
    manifest += ".json";
    if (std::filesystem::exists(manifest)) {
        try {
            auto enc = read_spectral_cache(stem);
            if (enc.n_nodes() == prior.n_pathways() && enc.k() == k) return enc;
        } catch (const Error&) {
            // Corrupt entries are recomputed and overwritten.
        }
    }
    auto enc = laplacian_encoding(prior, k);
    std::filesystem::create_directories(cache_dir);
    write_spectral_cache(stem, enc);
    return enc;
}

} // namespace pathgt
