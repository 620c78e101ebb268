#pragma once

// The forecasting network: alignment graph convolution (AGCN), the DACN chain
// over a shift-indexed graph bank, gated temporal convolution, residual/skip
// spatio-temporal modules, and the output head. Activations flow as
// (batch, time, node, feature).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dtmp/graph.hpp"
#include "dtmp/kvfile.hpp"
#include "dtmp/tensor.hpp"

namespace dtmp {

struct ModelConfig {
    int64_t n_nodes = 0;
    int64_t in_features = 1;  // C
    int64_t hidden = 32;      // F
    int64_t skip_width = 64;
    int64_t n_modules = 6;    // L
    std::vector<int64_t> dilations = {1, 2, 4, 1, 2, 4};
    int64_t dacn_kernel = 2;  // K: graphs per bank, shifts 0, k, ..., (K-1)k
    int64_t tcn_kernel = 2;
    int64_t emb_dim = 10;
    double dropout_rate = 0.3;
    int64_t input_len = 12; // T
    int64_t horizon = 12;   // T'
    int64_t out_features = 1;

    void validate() const; // throws std::invalid_argument with the violated rule
};

void write_config(const ModelConfig& config, kv::Document& doc);
ModelConfig read_config(const kv::Document& doc);

// Structural ablations. Each removes exactly one mechanism:
//  no_coupling  - one shared embedding pair everywhere, no coupling maps
//  no_alignment - single shift-0 graph per module (bank kernel forced to 1)
//  no_gated_tcn - module output is the DACN path alone
enum class Variant { full, no_coupling, no_alignment, no_gated_tcn };
Variant parse_variant(const std::string& name);
std::string variant_name(Variant variant);

struct AgcnParams {
    Tensor w; // F_in x F_out
    Tensor b; // node-indexed bias, N x F_out
};

struct DacnParams {
    std::vector<AgcnParams> agcns;      // ascending shift order
    std::vector<CouplingMap> couplings; // between successive AGCNs; may be empty
    Tensor fuse_w;                      // (K*F) x F concat fusion
    Tensor fuse_b;                      // F
};

struct TcnParams {
    std::vector<Tensor> theta1, theta2; // one F x F map per tap
    Tensor b1, b2;                      // F
};

struct ModuleParams {
    DacnParams dacn;
    TcnParams tcn; // unused when has_tcn is false
    bool has_tcn = true;
    Tensor res_w, res_b;   // F x F residual projection
    Tensor skip_w, skip_b; // F x skip_width
};

struct HeadParams {
    Tensor fc1_w, fc1_b; // skip x skip
    Tensor fc2_w, fc2_b; // skip x (T' * C_out)
};

struct DtmpModel {
    ModelConfig config;
    Variant variant = Variant::full;
    Tensor input_w, input_b; // C -> F lift
    EmbeddingPair embeddings;
    std::vector<ModuleParams> modules;
    std::vector<CouplingMap> handoffs; // between modules; empty when uncoupled
    HeadParams head;

    /// Every learnable tensor with its stable dotted name, in init order.
    ParamSet parameters() const;
};

DtmpModel init_model(const ModelConfig& config, Variant variant, uint64_t seed);
int64_t count_parameters(const DtmpModel& model);
void zero_grad(ParamSet& params);

struct NetworkOutput {
    Tensor prediction; // batch x T' x N x C_out
    Tensor skip_sum;   // batch x T x N x skip_width
    std::vector<Tensor> module_hidden;
};

/// Pre-activation, pre-bias message of one shifted graph convolution:
/// adj * temporal_shift(h, d) * w.
Tensor agcn_message(const Tensor& h, const ShiftedAdjacency& adj, const Tensor& w);

/// relu(adj * temporal_shift(h, d) * w + b), b broadcast per node.
Tensor agcn_forward(const Tensor& h, const ShiftedAdjacency& adj, const Tensor& w,
                    const Tensor& b);

/// Brute-force oracle: aggregates every neighbor at its own per-edge shift,
/// taken straight from the alignment matrix. Plain loops over raw values,
/// forward only; exists to certify the decomposed fast path.
Tensor agcn_reference(const Tensor& h, const Tensor& spatial, const Tensor& alignment,
                      const Tensor& w, const Tensor& b);
/// The oracle's pre-activation, pre-bias message.
Tensor agcn_reference_message(const Tensor& h, const Tensor& spatial,
                              const Tensor& alignment, const Tensor& w);

/// AGCNs chained in ascending shift order, outputs concatenated on the
/// feature axis, fused back to width F, dropout applied.
Tensor dacn_forward(const Tensor& h, const GraphBank& bank, const DacnParams& params,
                    double dropout_rate, bool training, std::mt19937_64& rng);

/// tanh(conv(h; theta1, b1)) ⊙ sigmoid(conv(h; theta2, b2)) with dilated
/// causal taps along time; length preserved by left zero padding.
Tensor gated_tcn_forward(const Tensor& h, const TcnParams& params, int64_t dilation);

struct ModuleResult {
    Tensor h_next;
    Tensor skip; // this module's contribution at skip width
    EmbeddingPair pair_next;
};

/// Temp = DACN(h) [+ GatedTCN(h)]; h_next = h + Linear(Temp); skip =
/// Linear_skip(Temp); the embedding pair is regenerated into a bank here and
/// handed onward (through `handoff` when present).
ModuleResult st_module_forward(const Tensor& h, const ModuleParams& params,
                               const EmbeddingPair& pair, const CouplingMap* handoff,
                               int64_t dilation, double dropout_rate, bool training,
                               std::mt19937_64& rng);

NetworkOutput network_forward(const DtmpModel& model, const Tensor& x, bool training,
                              std::mt19937_64& rng);

/// Mean absolute difference over every entry.
Tensor mae_loss(const Tensor& pred, const Tensor& target);

} // namespace dtmp
