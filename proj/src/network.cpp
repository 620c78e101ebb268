#include "dtmp/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dtmp {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    auto fail = [](const std::string& rule) {
        throw std::invalid_argument("model config: " + rule);
    };
    if (n_nodes < 2) fail("n_nodes must be >= 2, got " + std::to_string(n_nodes));
    if (in_features < 1) fail("in_features must be >= 1");
    if (hidden < 1) fail("hidden width must be >= 1");
    if (skip_width < 1) fail("skip width must be >= 1");
    if (out_features < 1) fail("out_features must be >= 1");
    if (emb_dim < 1) fail("emb_dim must be >= 1");
    if (n_modules < 1) fail("n_modules must be >= 1");
    if (static_cast<int64_t>(dilations.size()) != n_modules)
        fail("dilation schedule has " + std::to_string(dilations.size()) +
             " entries for " + std::to_string(n_modules) + " modules");
    for (int64_t d : dilations)
        if (d < 1) fail("dilations must be >= 1");
    if (dacn_kernel < 1) fail("dacn_kernel must be >= 1");
    if (tcn_kernel < 1) fail("tcn_kernel must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate must be in [0, 1)");
    if (input_len < 1) fail("input_len must be >= 1");
    if (horizon < 1) fail("horizon must be >= 1");
    const int64_t max_dil = *std::max_element(dilations.begin(), dilations.end());
    const int64_t reach =
        std::max(default_shift_count(dacn_kernel, max_dil), default_shift_count(tcn_kernel, max_dil));
    if (input_len < reach)
        fail("input_len " + std::to_string(input_len) + " shorter than the largest " +
             "convolution reach " + std::to_string(reach));
}

void write_config(const ModelConfig& c, kv::Document& doc) {
    doc.set_int("n_nodes", c.n_nodes);
    doc.set_int("in_features", c.in_features);
    doc.set_int("hidden", c.hidden);
    doc.set_int("skip_width", c.skip_width);
    doc.set_int("n_modules", c.n_modules);
    doc.set("dilations", kv::format_int_list(c.dilations));
    doc.set_int("dacn_kernel", c.dacn_kernel);
    doc.set_int("tcn_kernel", c.tcn_kernel);
    doc.set_int("emb_dim", c.emb_dim);
    doc.set_double("dropout_rate", c.dropout_rate);
    doc.set_int("input_len", c.input_len);
    doc.set_int("horizon", c.horizon);
    doc.set_int("out_features", c.out_features);
}

// Only the node count is mandatory; everything else falls back to the
// standard six-module configuration.
ModelConfig read_config(const kv::Document& doc) {
    ModelConfig c;
    c.n_nodes = doc.get_int("n_nodes");
    if (doc.has("in_features")) c.in_features = doc.get_int("in_features");
    if (doc.has("hidden")) c.hidden = doc.get_int("hidden");
    if (doc.has("skip_width")) c.skip_width = doc.get_int("skip_width");
    if (doc.has("n_modules")) c.n_modules = doc.get_int("n_modules");
    if (doc.has("dilations")) {
        c.dilations = kv::parse_int_list(doc.get("dilations"), "dilations");
    }
    if (doc.has("dacn_kernel")) c.dacn_kernel = doc.get_int("dacn_kernel");
    if (doc.has("tcn_kernel")) c.tcn_kernel = doc.get_int("tcn_kernel");
    if (doc.has("emb_dim")) c.emb_dim = doc.get_int("emb_dim");
    if (doc.has("dropout_rate")) c.dropout_rate = doc.get_double("dropout_rate");
    if (doc.has("input_len")) c.input_len = doc.get_int("input_len");
    if (doc.has("horizon")) c.horizon = doc.get_int("horizon");
    if (doc.has("out_features")) c.out_features = doc.get_int("out_features");
    c.validate();
    return c;
}

Variant parse_variant(const std::string& name) {
    if (name == "full") return Variant::full;
    if (name == "no_coupling") return Variant::no_coupling;
    if (name == "no_alignment") return Variant::no_alignment;
    if (name == "no_gated_tcn") return Variant::no_gated_tcn;
    throw std::invalid_argument("unknown variant '" + name +
                                "' (want full, no_coupling, no_alignment or no_gated_tcn)");
}

std::string variant_name(Variant variant) {
    switch (variant) {
    case Variant::full: return "full";
    case Variant::no_coupling: return "no_coupling";
    case Variant::no_alignment: return "no_alignment";
    case Variant::no_gated_tcn: return "no_gated_tcn";
    }
    throw std::logic_error("unreachable variant");
}

// ---------------------------------------------------------------------------
// Init
// ---------------------------------------------------------------------------

namespace {

Tensor linear_weight(int64_t fan_in, int64_t fan_out, std::mt19937_64& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> w(static_cast<size_t>(fan_in * fan_out));
    for (double& v : w) v = dist(rng);
    return Tensor::param({fan_in, fan_out}, std::move(w));
}

Tensor bias_param(Shape shape, int64_t fan_in, std::mt19937_64& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> b(static_cast<size_t>(shape_numel(shape)));
    for (double& v : b) v = dist(rng);
    return Tensor::param(std::move(shape), std::move(b));
}

} // namespace

DtmpModel init_model(const ModelConfig& config, Variant variant, uint64_t seed) {
    config.validate();
    DtmpModel model;
    model.config = config;
    model.variant = variant;

    const int64_t n = config.n_nodes;
    const int64_t f = config.hidden;
    const int64_t kernel = variant == Variant::no_alignment ? 1 : config.dacn_kernel;
    const bool coupled = variant != Variant::no_coupling;

    std::mt19937_64 rng(seed);
    model.input_w = linear_weight(config.in_features, f, rng);
    model.input_b = bias_param({f}, config.in_features, rng);
    model.embeddings = init_embeddings(n, config.emb_dim, rng());

    for (int64_t m = 0; m < config.n_modules; ++m) {
        ModuleParams mod;
        mod.has_tcn = variant != Variant::no_gated_tcn;
        for (int64_t i = 0; i < kernel; ++i) {
            if (i > 0 && coupled)
                mod.dacn.couplings.push_back(init_coupling(config.emb_dim, rng()));
            mod.dacn.agcns.push_back({linear_weight(f, f, rng), bias_param({n, f}, f, rng)});
        }
        mod.dacn.fuse_w = linear_weight(kernel * f, f, rng);
        mod.dacn.fuse_b = bias_param({f}, kernel * f, rng);
        if (mod.has_tcn) {
            for (int64_t j = 0; j < config.tcn_kernel; ++j)
                mod.tcn.theta1.push_back(linear_weight(f, f, rng));
            mod.tcn.b1 = bias_param({f}, f, rng);
            for (int64_t j = 0; j < config.tcn_kernel; ++j)
                mod.tcn.theta2.push_back(linear_weight(f, f, rng));
            mod.tcn.b2 = bias_param({f}, f, rng);
        }
        mod.res_w = linear_weight(f, f, rng);
        mod.res_b = bias_param({f}, f, rng);
        mod.skip_w = linear_weight(f, config.skip_width, rng);
        mod.skip_b = bias_param({config.skip_width}, f, rng);
        model.modules.push_back(std::move(mod));
        if (coupled && m + 1 < config.n_modules)
            model.handoffs.push_back(init_coupling(config.emb_dim, rng()));
    }

    const int64_t head_out = config.horizon * config.out_features;
    model.head.fc1_w = linear_weight(config.skip_width, config.skip_width, rng);
    model.head.fc1_b = bias_param({config.skip_width}, config.skip_width, rng);
    model.head.fc2_w = linear_weight(config.skip_width, head_out, rng);
    model.head.fc2_b = bias_param({head_out}, config.skip_width, rng);
    return model;
}

ParamSet DtmpModel::parameters() const {
    ParamSet out;
    auto push = [&out](std::string name, const Tensor& t) {
        out.push_back({std::move(name), t});
    };
    auto push_coupling = [&push](const std::string& prefix, const CouplingMap& map) {
        push(prefix + ".w1", map.w1);
        push(prefix + ".b1", map.b1);
        push(prefix + ".w2", map.w2);
        push(prefix + ".b2", map.b2);
    };

    push("input.w", input_w);
    push("input.b", input_b);
    push("embed.e1", embeddings.e1);
    push("embed.e2", embeddings.e2);
    for (size_t m = 0; m < modules.size(); ++m) {
        const ModuleParams& mod = modules[m];
        const std::string p = "module" + std::to_string(m) + ".";
        for (size_t i = 0; i < mod.dacn.agcns.size(); ++i) {
            if (i > 0 && !mod.dacn.couplings.empty())
                push_coupling(p + "couple" + std::to_string(i), mod.dacn.couplings[i - 1]);
            push(p + "agcn" + std::to_string(i) + ".w", mod.dacn.agcns[i].w);
            push(p + "agcn" + std::to_string(i) + ".b", mod.dacn.agcns[i].b);
        }
        push(p + "fuse.w", mod.dacn.fuse_w);
        push(p + "fuse.b", mod.dacn.fuse_b);
        if (mod.has_tcn) {
            for (size_t j = 0; j < mod.tcn.theta1.size(); ++j)
                push(p + "tcn.theta1.k" + std::to_string(j), mod.tcn.theta1[j]);
            push(p + "tcn.b1", mod.tcn.b1);
            for (size_t j = 0; j < mod.tcn.theta2.size(); ++j)
                push(p + "tcn.theta2.k" + std::to_string(j), mod.tcn.theta2[j]);
            push(p + "tcn.b2", mod.tcn.b2);
        }
        push(p + "residual.w", mod.res_w);
        push(p + "residual.b", mod.res_b);
        push(p + "skip.w", mod.skip_w);
        push(p + "skip.b", mod.skip_b);
        if (m < handoffs.size()) push_coupling(p + "handoff", handoffs[m]);
    }
    push("head.fc1.w", head.fc1_w);
    push("head.fc1.b", head.fc1_b);
    push("head.fc2.w", head.fc2_w);
    push("head.fc2.b", head.fc2_b);
    return out;
}

int64_t count_parameters(const DtmpModel& model) {
    int64_t total = 0;
    for (const auto& p : model.parameters()) total += p.tensor.numel();
    return total;
}

void zero_grad(ParamSet& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

// ---------------------------------------------------------------------------
// AGCN and the reference oracle
// ---------------------------------------------------------------------------

namespace {

void check_activation_shape(const Tensor& h, int64_t n_nodes, const char* op) {
    if (h.rank() != 4)
        throw std::invalid_argument(std::string(op) + ": want (batch, time, node, feature), got " +
                                    shape_to_string(h.shape()));
    if (h.dim(2) != n_nodes)
        throw std::invalid_argument(std::string(op) + ": activation has " +
                                    std::to_string(h.dim(2)) + " nodes, adjacency has " +
                                    std::to_string(n_nodes));
}

} // namespace

Tensor agcn_message(const Tensor& h, const ShiftedAdjacency& adj, const Tensor& w) {
    check_activation_shape(h, adj.matrix.dim(0), "agcn");
    Tensor shifted = temporal_shift(h, adj.shift, 1);
    return matmul(matmul(adj.matrix, shifted), w);
}

Tensor agcn_forward(const Tensor& h, const ShiftedAdjacency& adj, const Tensor& w,
                    const Tensor& b) {
    return relu(add(agcn_message(h, adj, w), b));
}

Tensor agcn_reference_message(const Tensor& h, const Tensor& spatial,
                              const Tensor& alignment, const Tensor& w) {
    const int64_t batch = h.dim(0), t_len = h.dim(1), n = h.dim(2), f_in = h.dim(3);
    const int64_t f_out = w.dim(1);
    check_activation_shape(h, spatial.dim(0), "agcn_reference");
    Tensor out = Tensor::zeros({batch, t_len, n, f_out});
    const auto& hv = h.values();
    const auto& sv = spatial.values();
    const auto& av = alignment.values();
    const auto& wv = w.values();
    auto& ov = out.mutable_values();
    std::vector<double> agg(static_cast<size_t>(f_in));
    for (int64_t bi = 0; bi < batch; ++bi)
        for (int64_t t = 0; t < t_len; ++t)
            for (int64_t i = 0; i < n; ++i) {
                std::fill(agg.begin(), agg.end(), 0.0);
                for (int64_t j = 0; j < n; ++j) {
                    const double weight = sv[static_cast<size_t>(i * n + j)];
                    if (weight == 0.0) continue;
                    const auto lag =
                        static_cast<int64_t>(av[static_cast<size_t>(i * n + j)]);
                    const int64_t src_t = t - lag;
                    if (src_t < 0) continue; // shifted past the window start
                    const size_t base =
                        static_cast<size_t>(((bi * t_len + src_t) * n + j) * f_in);
                    for (int64_t f = 0; f < f_in; ++f)
                        agg[static_cast<size_t>(f)] += weight * hv[base + static_cast<size_t>(f)];
                }
                const size_t out_base =
                    static_cast<size_t>(((bi * t_len + t) * n + i) * f_out);
                for (int64_t fo = 0; fo < f_out; ++fo) {
                    double acc = 0;
                    for (int64_t fi = 0; fi < f_in; ++fi)
                        acc += agg[static_cast<size_t>(fi)] *
                               wv[static_cast<size_t>(fi * f_out + fo)];
                    ov[out_base + static_cast<size_t>(fo)] = acc;
                }
            }
    return out;
}

Tensor agcn_reference(const Tensor& h, const Tensor& spatial, const Tensor& alignment,
                      const Tensor& w, const Tensor& b) {
    Tensor msg = agcn_reference_message(h, spatial, alignment, w);
    const int64_t n = spatial.dim(0), f_out = w.dim(1);
    auto& mv = msg.mutable_values();
    const auto& bv = b.values();
    const int64_t slabs = msg.numel() / (n * f_out);
    for (int64_t s = 0; s < slabs; ++s)
        for (int64_t i = 0; i < n; ++i)
            for (int64_t fo = 0; fo < f_out; ++fo) {
                double& cell = mv[static_cast<size_t>((s * n + i) * f_out + fo)];
                cell += bv[static_cast<size_t>(i * f_out + fo)];
                if (cell < 0) cell = 0;
            }
    return msg;
}

// ---------------------------------------------------------------------------
// DACN, gated TCN, modules
// ---------------------------------------------------------------------------

Tensor dacn_forward(const Tensor& h, const GraphBank& bank, const DacnParams& params,
                    double dropout_rate, bool training, std::mt19937_64& rng) {
    if (bank.graphs.size() != params.agcns.size())
        throw std::invalid_argument("dacn: bank has " + std::to_string(bank.graphs.size()) +
                                    " graphs for " + std::to_string(params.agcns.size()) +
                                    " convolutions");
    Tensor current = h;
    std::vector<Tensor> collected;
    for (size_t i = 0; i < bank.graphs.size(); ++i) {
        current = agcn_forward(current, bank.graphs[i], params.agcns[i].w, params.agcns[i].b);
        collected.push_back(current);
    }
    Tensor fused = collected.size() == 1 ? collected[0] : concat(collected, 3);
    Tensor projected = add(matmul(fused, params.fuse_w), params.fuse_b);
    return dropout(projected, dropout_rate, training, rng);
}

Tensor gated_tcn_forward(const Tensor& h, const TcnParams& params, int64_t dilation) {
    if (params.theta1.empty() || params.theta1.size() != params.theta2.size())
        throw std::invalid_argument("gated tcn: branch kernels disagree");
    const auto kernel = static_cast<int64_t>(params.theta1.size());
    if ((kernel - 1) * dilation >= h.dim(1))
        throw std::invalid_argument("gated tcn: kernel " + std::to_string(kernel) +
                                    " at dilation " + std::to_string(dilation) +
                                    " reaches past a length-" + std::to_string(h.dim(1)) +
                                    " window");
    auto branch = [&](const std::vector<Tensor>& thetas, const Tensor& bias) {
        Tensor acc;
        for (int64_t j = 0; j < kernel; ++j) {
            Tensor tap = matmul(temporal_shift(h, j * dilation, 1), thetas[static_cast<size_t>(j)]);
            acc = j == 0 ? tap : add(acc, tap);
        }
        return add(acc, bias);
    };
    return hadamard(dtmp::tanh(branch(params.theta1, params.b1)),
                    sigmoid(branch(params.theta2, params.b2)));
}

ModuleResult st_module_forward(const Tensor& h, const ModuleParams& params,
                               const EmbeddingPair& pair, const CouplingMap* handoff,
                               int64_t dilation, double dropout_rate, bool training,
                               std::mt19937_64& rng) {
    BankResult built = build_bank(pair, params.dacn.couplings,
                                  static_cast<int64_t>(params.dacn.agcns.size()), dilation);
    Tensor temp = dacn_forward(h, built.bank, params.dacn, dropout_rate, training, rng);
    if (params.has_tcn) temp = add(temp, gated_tcn_forward(h, params.tcn, dilation));

    ModuleResult result;
    result.h_next = add(h, add(matmul(temp, params.res_w), params.res_b));
    result.skip = add(matmul(temp, params.skip_w), params.skip_b);
    result.pair_next = handoff ? couple(built.final_pair, *handoff) : built.final_pair;
    return result;
}

// ---------------------------------------------------------------------------
// Full network
// ---------------------------------------------------------------------------

NetworkOutput network_forward(const DtmpModel& model, const Tensor& x, bool training,
                              std::mt19937_64& rng) {
    const ModelConfig& c = model.config;
    if (x.rank() != 4 || x.dim(1) != c.input_len || x.dim(2) != c.n_nodes ||
        x.dim(3) != c.in_features)
        throw std::invalid_argument(
            "network input " + shape_to_string(x.shape()) + " does not match (batch, " +
            std::to_string(c.input_len) + ", " + std::to_string(c.n_nodes) + ", " +
            std::to_string(c.in_features) + ")");

    NetworkOutput out;
    Tensor h = add(matmul(x, model.input_w), model.input_b);
    EmbeddingPair pair = model.embeddings;
    Tensor skip_sum;
    for (size_t m = 0; m < model.modules.size(); ++m) {
        const CouplingMap* handoff =
            m < model.handoffs.size() ? &model.handoffs[m] : nullptr;
        ModuleResult step =
            st_module_forward(h, model.modules[m], pair, handoff,
                              c.dilations[m], c.dropout_rate, training, rng);
        h = step.h_next;
        pair = step.pair_next;
        skip_sum = m == 0 ? step.skip : add(skip_sum, step.skip);
        out.module_hidden.push_back(h);
    }
    out.skip_sum = skip_sum;

    Tensor last = select(skip_sum, 1, c.input_len - 1); // batch x N x skip
    Tensor a1 = relu(last);
    Tensor a2 = relu(add(matmul(a1, model.head.fc1_w), model.head.fc1_b));
    Tensor flat = add(matmul(a2, model.head.fc2_w), model.head.fc2_b);
    Tensor stacked =
        reshape(flat, {x.dim(0), c.n_nodes, c.horizon, c.out_features});
    out.prediction = swap_axes(stacked, 1, 2);
    return out;
}

Tensor mae_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("mae_loss: prediction " + shape_to_string(pred.shape()) +
                                    " vs target " + shape_to_string(target.shape()));
    return mean(dtmp::abs(sub(pred, target)));
}

} // namespace dtmp
