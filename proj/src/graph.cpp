#include "dtmp/graph.hpp"

#include "dtmp/kvfile.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dtmp {

namespace {

// One-sided Jacobi SVD of a square row-major matrix: a = u * diag(sigma) * v^T
// with singular values sorted descending. Plenty for the small node counts
// this library targets.
void jacobi_svd(const std::vector<double>& a, int64_t n, std::vector<double>& u,
                std::vector<double>& sigma, std::vector<double>& v) {
    std::vector<double> b = a; // rotated copy, b = a * v
    v.assign(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;

    const double tol = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (int64_t p = 0; p < n - 1; ++p) {
            for (int64_t q = p + 1; q < n; ++q) {
                double alpha = 0, beta = 0, gamma = 0;
                for (int64_t i = 0; i < n; ++i) {
                    const double bp = b[static_cast<size_t>(i * n + p)];
                    const double bq = b[static_cast<size_t>(i * n + q)];
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if (std::fabs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int64_t i = 0; i < n; ++i) {
                    const double bp = b[static_cast<size_t>(i * n + p)];
                    const double bq = b[static_cast<size_t>(i * n + q)];
                    b[static_cast<size_t>(i * n + p)] = c * bp - s * bq;
                    b[static_cast<size_t>(i * n + q)] = s * bp + c * bq;
                    const double vp = v[static_cast<size_t>(i * n + p)];
                    const double vq = v[static_cast<size_t>(i * n + q)];
                    v[static_cast<size_t>(i * n + p)] = c * vp - s * vq;
                    v[static_cast<size_t>(i * n + q)] = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    sigma.assign(static_cast<size_t>(n), 0.0);
    u.assign(static_cast<size_t>(n * n), 0.0);
    for (int64_t j = 0; j < n; ++j) {
        double norm = 0;
        for (int64_t i = 0; i < n; ++i) {
            const double bij = b[static_cast<size_t>(i * n + j)];
            norm += bij * bij;
        }
        norm = std::sqrt(norm);
        sigma[static_cast<size_t>(j)] = norm;
        if (norm > 0)
            for (int64_t i = 0; i < n; ++i)
                u[static_cast<size_t>(i * n + j)] = b[static_cast<size_t>(i * n + j)] / norm;
        else
            u[static_cast<size_t>(j * n + j)] = 1.0; // null column, any unit vector works
    }

    // sort triplets by singular value, largest first
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
        return sigma[static_cast<size_t>(x)] > sigma[static_cast<size_t>(y)];
    });
    std::vector<double> su(u.size()), sv(v.size()), ss(sigma.size());
    for (int64_t j = 0; j < n; ++j) {
        const int64_t src = order[static_cast<size_t>(j)];
        ss[static_cast<size_t>(j)] = sigma[static_cast<size_t>(src)];
        for (int64_t i = 0; i < n; ++i) {
            su[static_cast<size_t>(i * n + j)] = u[static_cast<size_t>(i * n + src)];
            sv[static_cast<size_t>(i * n + j)] = v[static_cast<size_t>(i * n + src)];
        }
    }
    u = std::move(su);
    v = std::move(sv);
    sigma = std::move(ss);
}

void check_embedding_args(int64_t n_nodes, int64_t emb_dim) {
    if (n_nodes < 2)
        throw std::invalid_argument("init_embeddings: need at least 2 nodes, got " +
                                    std::to_string(n_nodes));
    if (emb_dim < 1)
        throw std::invalid_argument("init_embeddings: embedding size must be >= 1, got " +
                                    std::to_string(emb_dim));
}

} // namespace

EmbeddingPair init_embeddings(int64_t n_nodes, int64_t emb_dim, uint64_t seed) {
    check_embedding_args(n_nodes, emb_dim);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    auto draw = [&]() {
        std::vector<double> vals(static_cast<size_t>(n_nodes * emb_dim));
        for (double& v : vals) v = dist(rng);
        return Tensor::param({n_nodes, emb_dim}, std::move(vals));
    };
    Tensor e1 = draw();
    Tensor e2 = draw();
    return {e1, e2};
}

EmbeddingPair init_embeddings(int64_t n_nodes, int64_t emb_dim, uint64_t /*seed*/,
                              const Tensor& predefined_adjacency) {
    check_embedding_args(n_nodes, emb_dim);
    if (predefined_adjacency.rank() != 2 || predefined_adjacency.dim(0) != n_nodes ||
        predefined_adjacency.dim(1) != n_nodes)
        throw std::invalid_argument("init_embeddings: adjacency must be " +
                                    std::to_string(n_nodes) + "x" + std::to_string(n_nodes) +
                                    ", got " + shape_to_string(predefined_adjacency.shape()));
    if (emb_dim > n_nodes)
        throw std::invalid_argument(
            "init_embeddings: embedding size " + std::to_string(emb_dim) +
            " exceeds the rank available from a " + std::to_string(n_nodes) + "-node adjacency");

    std::vector<double> u, s, v;
    jacobi_svd(predefined_adjacency.values(), n_nodes, u, s, v);

    std::vector<double> e1(static_cast<size_t>(n_nodes * emb_dim));
    std::vector<double> e2(static_cast<size_t>(n_nodes * emb_dim));
    for (int64_t i = 0; i < n_nodes; ++i)
        for (int64_t j = 0; j < emb_dim; ++j) {
            const double root = std::sqrt(s[static_cast<size_t>(j)]);
            e1[static_cast<size_t>(i * emb_dim + j)] =
                u[static_cast<size_t>(i * n_nodes + j)] * root;
            e2[static_cast<size_t>(i * emb_dim + j)] =
                v[static_cast<size_t>(i * n_nodes + j)] * root;
        }
    return {Tensor::param({n_nodes, emb_dim}, std::move(e1)),
            Tensor::param({n_nodes, emb_dim}, std::move(e2))};
}

Tensor generate_graph(const EmbeddingPair& pair) {
    return row_softmax(relu(matmul(pair.e1, swap_axes(pair.e2, 0, 1))));
}

CouplingMap init_coupling(int64_t emb_dim, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    auto near_identity = [&]() {
        std::vector<double> w(static_cast<size_t>(emb_dim * emb_dim));
        for (int64_t i = 0; i < emb_dim; ++i)
            for (int64_t j = 0; j < emb_dim; ++j)
                w[static_cast<size_t>(i * emb_dim + j)] = (i == j ? 1.0 : 0.0) + noise(rng);
        return Tensor::param({emb_dim, emb_dim}, std::move(w));
    };
    CouplingMap map;
    map.w1 = near_identity();
    map.b1 = Tensor::param({emb_dim}, std::vector<double>(static_cast<size_t>(emb_dim), 0.0));
    map.w2 = near_identity();
    map.b2 = Tensor::param({emb_dim}, std::vector<double>(static_cast<size_t>(emb_dim), 0.0));
    return map;
}

EmbeddingPair couple(const EmbeddingPair& pair, const CouplingMap& map) {
    return {add(matmul(pair.e1, map.w1), map.b1), add(matmul(pair.e2, map.w2), map.b2)};
}

std::vector<ShiftedAdjacency> decompose_spatial(const PredefinedGraphs& pre,
                                                int64_t n_shifts) {
    const Tensor& spatial = pre.spatial;
    const Tensor& alignment = pre.alignment;
    if (spatial.shape() != alignment.shape() || spatial.rank() != 2 ||
        spatial.dim(0) != spatial.dim(1))
        throw std::invalid_argument("decompose_spatial: spatial " +
                                    shape_to_string(spatial.shape()) + " and alignment " +
                                    shape_to_string(alignment.shape()) +
                                    " must be matching square matrices");
    if (n_shifts < 1)
        throw std::invalid_argument("decompose_spatial: need at least one shift");

    const int64_t n = spatial.dim(0);
    std::vector<std::vector<double>> parts(
        static_cast<size_t>(n_shifts),
        std::vector<double>(static_cast<size_t>(n * n), 0.0));
    for (int64_t i = 0; i < n * n; ++i) {
        const double raw = alignment.values()[static_cast<size_t>(i)];
        const auto d = static_cast<int64_t>(std::llround(raw));
        if (raw != static_cast<double>(d) || d < 0)
            throw std::invalid_argument("decompose_spatial: alignment entry " +
                                        std::to_string(raw) +
                                        " is not a non-negative integer");
        if (d >= n_shifts)
            throw std::out_of_range("decompose_spatial: alignment value " + std::to_string(d) +
                                    " outside shift range [0, " + std::to_string(n_shifts) +
                                    ")");
        parts[static_cast<size_t>(d)][static_cast<size_t>(i)] =
            spatial.values()[static_cast<size_t>(i)];
    }

    std::vector<ShiftedAdjacency> result;
    result.reserve(static_cast<size_t>(n_shifts));
    for (int64_t d = 0; d < n_shifts; ++d)
        result.push_back({d, Tensor::from_values({n, n}, std::move(parts[static_cast<size_t>(d)]))});
    return result;
}

int64_t default_shift_count(int64_t kernel, int64_t dilation) {
    return (kernel - 1) * dilation + 1;
}

BankResult build_bank(const EmbeddingPair& pair, const std::vector<CouplingMap>& mappings,
                      int64_t kernel, int64_t dilation) {
    if (kernel < 1 || dilation < 1)
        throw std::invalid_argument("build_bank: kernel and dilation must be >= 1");
    const bool coupled = !mappings.empty();
    if (coupled && static_cast<int64_t>(mappings.size()) != kernel - 1)
        throw std::invalid_argument("build_bank: got " + std::to_string(mappings.size()) +
                                    " coupling maps for kernel " + std::to_string(kernel) +
                                    " (want " + std::to_string(kernel - 1) + " or none)");
    BankResult result;
    EmbeddingPair current = pair;
    for (int64_t step = 0; step < kernel; ++step) {
        if (step > 0 && coupled) current = couple(current, mappings[static_cast<size_t>(step - 1)]);
        result.bank.graphs.push_back({step * dilation, generate_graph(current)});
    }
    result.final_pair = current;
    return result;
}

Tensor normalize_rows(const Tensor& matrix) {
    if (matrix.rank() != 2)
        throw std::invalid_argument("normalize_rows: want a matrix, got " +
                                    shape_to_string(matrix.shape()));
    const int64_t rows = matrix.dim(0), cols = matrix.dim(1);
    std::vector<double> out = matrix.values();
    for (int64_t i = 0; i < rows; ++i) {
        double total = 0;
        for (int64_t j = 0; j < cols; ++j) total += out[static_cast<size_t>(i * cols + j)];
        if (total != 0.0)
            for (int64_t j = 0; j < cols; ++j) out[static_cast<size_t>(i * cols + j)] /= total;
    }
    return Tensor::from_values(matrix.shape(), std::move(out));
}

Tensor load_edge_list(const std::string& path, int64_t n_nodes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open edge list '" + path + "'");
    std::vector<double> matrix(static_cast<size_t>(n_nodes * n_nodes), 0.0);
    std::vector<bool> seen(static_cast<size_t>(n_nodes * n_nodes), false);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto ctx = path + ":" + std::to_string(line_no);
        std::string t = line;
        if (auto hash = t.find('#'); hash != std::string::npos) t.resize(hash);
        while (!t.empty() && (t.back() == ' ' || t.back() == '\t' || t.back() == '\r'))
            t.pop_back();
        if (t.empty()) continue;
        std::istringstream fields(t);
        std::string src_s, dst_s, val_s;
        if (!std::getline(fields, src_s, ',') || !std::getline(fields, dst_s, ',') ||
            !std::getline(fields, val_s))
            throw std::runtime_error(ctx + ": want 'src,dst,value', got '" + t + "'");
        int64_t src, dst;
        double value;
        try {
            src = std::stoll(src_s);
            dst = std::stoll(dst_s);
            value = std::stod(val_s);
        } catch (const std::exception&) {
            throw std::runtime_error(ctx + ": cannot parse '" + t + "'");
        }
        if (src < 0 || src >= n_nodes || dst < 0 || dst >= n_nodes)
            throw std::runtime_error(ctx + ": node id outside [0, " +
                                     std::to_string(n_nodes) + ")");
        if (!std::isfinite(value) || value < 0)
            throw std::runtime_error(ctx + ": edge value must be finite and non-negative");
        const auto slot = static_cast<size_t>(dst * n_nodes + src);
        if (seen[slot])
            throw std::runtime_error(ctx + ": duplicate edge " + src_s + "->" + dst_s);
        seen[slot] = true;
        matrix[slot] = value;
    }
    return Tensor::from_values({n_nodes, n_nodes}, std::move(matrix));
}

void write_edge_list(const Tensor& matrix, const std::string& path) {
    if (matrix.rank() != 2 || matrix.dim(0) != matrix.dim(1))
        throw std::invalid_argument("write_edge_list: want a square matrix, got " +
                                    shape_to_string(matrix.shape()));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write edge list '" + path + "'");
    const int64_t n = matrix.dim(0);
    out << "# src,dst,value\n";
    for (int64_t dst = 0; dst < n; ++dst)
        for (int64_t src = 0; src < n; ++src) {
            const double v = matrix.at({dst, src});
            if (v != 0.0) out << src << ',' << dst << ',' << kv::format_double(v) << '\n';
        }
    if (!out) throw std::runtime_error("failed writing edge list '" + path + "'");
}

PredefinedGraphs load_predefined(const std::string& spatial_path,
                                 const std::string& alignment_path, int64_t n_nodes) {
    PredefinedGraphs graphs{load_edge_list(spatial_path, n_nodes),
                            load_edge_list(alignment_path, n_nodes)};
    validate_predefined(graphs);
    return graphs;
}

void validate_predefined(const PredefinedGraphs& graphs) {
    const Tensor& s = graphs.spatial;
    const Tensor& t = graphs.alignment;
    if (s.rank() != 2 || s.dim(0) != s.dim(1) || t.shape() != s.shape())
        throw std::invalid_argument("predefined graphs: spatial " +
                                    shape_to_string(s.shape()) + " and alignment " +
                                    shape_to_string(t.shape()) +
                                    " must be matching square matrices");
    const int64_t n = s.dim(0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            const double sv = s.at({i, j});
            const double tv = t.at({i, j});
            if (sv < 0 || !std::isfinite(sv))
                throw std::invalid_argument("predefined graphs: spatial weight for edge " +
                                            std::to_string(j) + "->" + std::to_string(i) +
                                            " must be finite and non-negative");
            if (tv != std::floor(tv) || tv < 0 || !std::isfinite(tv))
                throw std::invalid_argument("predefined graphs: alignment for edge " +
                                            std::to_string(j) + "->" + std::to_string(i) +
                                            " must be a non-negative integer, got " +
                                            kv::format_double(tv));
            if (tv > 0 && sv == 0)
                throw std::invalid_argument(
                    "predefined graphs: alignment on edge " + std::to_string(j) + "->" +
                    std::to_string(i) + " has no matching spatial edge");
            if (tv > 0 && t.at({j, i}) > 0)
                throw std::invalid_argument(
                    "predefined graphs: alignment between nodes " + std::to_string(i) +
                    " and " + std::to_string(j) +
                    " is positive in both directions; lead direction must be unique");
        }
}

} // namespace dtmp
