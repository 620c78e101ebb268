#pragma once

// Spatial/alignment graph machinery: adaptive graph generation from node
// embeddings, embedding coupling between generation sites, shift-indexed
// decomposition of predefined graphs, and the per-DACN graph bank.
//
// Matrix orientation: row i aggregates from column j, so A[i][j] is the edge
// j -> i. Alignment entry A_t[i][j] is how many steps node j leads node i.

#include <cstdint>
#include <string>
#include <vector>

#include "dtmp/tensor.hpp"

namespace dtmp {

struct EmbeddingPair {
    Tensor e1; // N x e
    Tensor e2; // N x e
    int64_t nodes() const { return e1.dim(0); }
    int64_t dim() const { return e1.dim(1); }
};

// Affine maps carrying an embedding pair from one generation site to the
// next; separate weights per table.
struct CouplingMap {
    Tensor w1, b1; // e x e, e
    Tensor w2, b2;
};

struct ShiftedAdjacency {
    int64_t shift = 0;
    Tensor matrix; // N x N
};

// Adjacencies one DACN convolves with, at shifts 0, k, 2k, ...
struct GraphBank {
    std::vector<ShiftedAdjacency> graphs;
};

struct PredefinedGraphs {
    Tensor spatial;   // N x N, non-negative weights
    Tensor alignment; // N x N, non-negative integer lags
};

/// Both tables i.i.d. uniform in [-0.5, 0.5], learnable.
EmbeddingPair init_embeddings(int64_t n_nodes, int64_t emb_dim, uint64_t seed);
/// Warm start from a known adjacency: rank-e truncated SVD, E1 = U sqrt(S),
/// E2 = V sqrt(S). Throws when emb_dim exceeds the matrix order.
EmbeddingPair init_embeddings(int64_t n_nodes, int64_t emb_dim, uint64_t seed,
                              const Tensor& predefined_adjacency);

/// row_softmax(relu(E1 E2^T)); right-stochastic, differentiable.
Tensor generate_graph(const EmbeddingPair& pair);

/// Identity weights plus small uniform noise, zero bias.
CouplingMap init_coupling(int64_t emb_dim, uint64_t seed);
EmbeddingPair couple(const EmbeddingPair& pair, const CouplingMap& map);

/// Splits the spatial matrix by alignment value: sub-graph d keeps exactly
/// the entries whose alignment is d. Result is unnormalized; the pieces sum
/// back to the input. Alignment values must be < n_shifts.
std::vector<ShiftedAdjacency> decompose_spatial(const PredefinedGraphs& pre,
                                                int64_t n_shifts);

/// Smallest shift count covering a bank built with this kernel and dilation.
int64_t default_shift_count(int64_t kernel, int64_t dilation);

struct BankResult {
    GraphBank bank;
    EmbeddingPair final_pair; // hand-off to the next module's generation site
};

/// K graphs at shifts 0, k, ..., (K-1)k. With K-1 mappings the pair is coupled
/// before each graph after the first; with no mappings the same pair feeds
/// every shift (the uncoupled ablation). Any other mapping count is an error.
BankResult build_bank(const EmbeddingPair& pair,
                      const std::vector<CouplingMap>& mappings, int64_t kernel,
                      int64_t dilation);

/// Divides each row by its sum; all-zero rows stay zero. Plain data utility,
/// never recorded on a tape.
Tensor normalize_rows(const Tensor& matrix);

/// Edge-list text file, one `src,dst,value` line per edge, 0-based dense ids.
Tensor load_edge_list(const std::string& path, int64_t n_nodes);
void write_edge_list(const Tensor& matrix, const std::string& path);

/// Loads and validates a spatial/alignment file pair.
PredefinedGraphs load_predefined(const std::string& spatial_path,
                                 const std::string& alignment_path, int64_t n_nodes);
/// Alignment support must lie inside the spatial support, positive alignment
/// must be antisymmetric, lags must be non-negative integers.
void validate_predefined(const PredefinedGraphs& graphs);

} // namespace dtmp
