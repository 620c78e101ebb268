#include "dtmp/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace dtmp {

namespace {

void check_dataset_match(const ModelConfig& config, const WindowedDataset& dataset) {
    if (config.n_nodes != dataset.nodes() || config.in_features != dataset.features() ||
        config.out_features != dataset.features() || config.input_len != dataset.input_len ||
        config.horizon != dataset.horizon) {
        throw std::invalid_argument(
            "model expects (nodes, features, input, horizon) = (" +
            std::to_string(config.n_nodes) + ", " + std::to_string(config.in_features) + ", " +
            std::to_string(config.input_len) + ", " + std::to_string(config.horizon) +
            "), dataset provides (" + std::to_string(dataset.nodes()) + ", " +
            std::to_string(dataset.features()) + ", " + std::to_string(dataset.input_len) +
            ", " + std::to_string(dataset.horizon) + ")");
    }
}

void check_split_usable(const WindowedDataset& dataset, Split split) {
    if (dataset.sample_count(split) == 0) {
        throw std::runtime_error(split_name(split) + " split has " +
                                 std::to_string(dataset.range(split).length()) +
                                 " steps, shorter than one window of " +
                                 std::to_string(dataset.input_len + dataset.horizon));
    }
}

// full-split inference in fixed-size chunks, predictions in original units
std::pair<Tensor, Tensor> predict_split(const DtmpModel& model, const WindowedDataset& dataset,
                                        Split split) {
    int64_t count = dataset.sample_count(split);
    int64_t nodes = dataset.nodes();
    int64_t horizon = dataset.horizon;
    int64_t features = model.config.out_features;
    Tensor pred = Tensor::zeros({count, horizon, nodes, features});
    Tensor target = Tensor::zeros({count, horizon, nodes, features});

    std::mt19937_64 idle_rng(0);
    const int64_t chunk = 64;
    for (int64_t begin = 0; begin < count; begin += chunk) {
        int64_t size = std::min(chunk, count - begin);
        std::vector<int64_t> indices(static_cast<size_t>(size));
        std::iota(indices.begin(), indices.end(), begin);
        auto [x, y] = dataset.gather(split, indices);
        Tensor out = network_forward(model, x, false, idle_rng).prediction;
        std::copy(out.values().begin(), out.values().end(),
                  pred.mutable_values().begin() + begin * horizon * nodes * features);
        std::copy(y.values().begin(), y.values().end(),
                  target.mutable_values().begin() + begin * horizon * nodes * features);
    }
    if (dataset.normalized) {
        pred = denormalize(pred, dataset.stats);
        target = denormalize(target, dataset.stats);
    }
    return {pred, target};
}

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (max_epochs < 1) throw std::invalid_argument("max epochs must be at least 1");
    if (patience < 1) throw std::invalid_argument("patience must be at least 1");
    if (!(grad_clip >= 0.0)) throw std::invalid_argument("gradient clip must be non-negative");
}

void write_train_config(const TrainConfig& config, kv::Document& doc) {
    write_config(config.model, doc);
    doc.set_double("learning_rate", config.learning_rate);
    doc.set_int("batch_size", config.batch_size);
    doc.set_int("max_epochs", config.max_epochs);
    doc.set_int("patience", config.patience);
    doc.set_double("grad_clip", config.grad_clip);
    doc.set_int("seed", static_cast<int64_t>(config.seed));
}

TrainConfig read_train_config(const kv::Document& doc) {
    TrainConfig config;
    config.model = read_config(doc);
    if (doc.has("learning_rate")) config.learning_rate = doc.get_double("learning_rate");
    if (doc.has("batch_size")) config.batch_size = doc.get_int("batch_size");
    if (doc.has("max_epochs")) config.max_epochs = doc.get_int("max_epochs");
    if (doc.has("patience")) config.patience = doc.get_int("patience");
    if (doc.has("grad_clip")) config.grad_clip = doc.get_double("grad_clip");
    if (doc.has("seed")) {
        int64_t seed = doc.get_int("seed");
        if (seed < 0) throw std::invalid_argument("seed must be non-negative");
        config.seed = static_cast<uint64_t>(seed);
    }
    return config;
}

TrainResult train(const TrainConfig& config, const WindowedDataset& dataset, Variant variant) {
    config.validate();
    check_dataset_match(config.model, dataset);
    if (!dataset.normalized) {
        throw std::invalid_argument("dataset must be normalized before training");
    }
    check_split_usable(dataset, Split::train);
    check_split_usable(dataset, Split::validation);

    DtmpModel model = init_model(config.model, variant, config.seed);
    ParamSet params = model.parameters();
    AdamState adam;
    adam.learning_rate = config.learning_rate;
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);

    int64_t n_train = dataset.sample_count(Split::train);
    std::vector<int64_t> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    int64_t best_epoch = 0;
    Checkpoint best;
    int64_t stale = 0;

    for (int64_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        int64_t batches = 0;
        for (int64_t begin = 0; begin < n_train; begin += config.batch_size) {
            int64_t size = std::min(config.batch_size, n_train - begin);
            std::vector<int64_t> indices(order.begin() + begin, order.begin() + begin + size);
            auto [x, y] = dataset.gather(Split::train, indices);

            zero_grad(params);
            Tape tape;
            double loss_value;
            {
                TapeScope scope(tape);
                Tensor loss = mae_loss(network_forward(model, x, true, rng).prediction, y);
                loss_value = loss.item();
                if (!std::isfinite(loss_value)) {
                    throw std::runtime_error("non-finite training loss at epoch " +
                                             std::to_string(epoch) + ", batch " +
                                             std::to_string(batches + 1));
                }
                tape.backward(loss);
            }
            clip_global_norm(params, config.grad_clip);
            adam_step(params, adam);
            loss_sum += loss_value;
            ++batches;
        }

        auto [val_pred, val_target] = predict_split(model, dataset, Split::validation);
        MetricsReport val = compute_metrics(val_pred, val_target);

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(batches);
        record.val_mae = val.mae;
        record.val_rmse = val.rmse;
        record.val_mape = val.mape;
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.history.push_back(record);

        if (val.mae < best_val) {
            best_val = val.mae;
            best_epoch = epoch;
            best = snapshot(model, dataset.stats);
            stale = 0;
        } else {
            ++stale;
            if (stale >= config.patience) break;
        }
    }

    best.best_epoch = best_epoch;
    best.best_val_mae = best_val;
    result.checkpoint = std::move(best);
    return result;
}

MetricsReport evaluate(const Checkpoint& ckpt, const WindowedDataset& dataset, Split split) {
    check_dataset_match(ckpt.config, dataset);
    if (!dataset.normalized) {
        throw std::invalid_argument("dataset must be normalized with the checkpoint statistics");
    }
    if (dataset.stats.mean != ckpt.stats.mean || dataset.stats.stdev != ckpt.stats.stdev) {
        throw std::runtime_error(
            "dataset was normalized with statistics that differ from the checkpoint's");
    }
    check_split_usable(dataset, split);

    DtmpModel model = model_from_checkpoint(ckpt);
    auto [pred, target] = predict_split(model, dataset, split);
    return compute_metrics(pred, target);
}

MetricsReport evaluate_ha(const WindowedDataset& dataset, Split split) {
    check_split_usable(dataset, split);
    int64_t count = dataset.sample_count(split);
    std::vector<int64_t> indices(static_cast<size_t>(count));
    std::iota(indices.begin(), indices.end(), 0);
    auto [x, y] = dataset.gather(split, indices);
    if (dataset.normalized) {
        x = denormalize(x, dataset.stats);
        y = denormalize(y, dataset.stats);
    }
    return compute_metrics(ha_baseline(x, dataset.horizon), y);
}

AblationResult run_ablation(Variant variant, const TrainConfig& config,
                            const WindowedDataset& dataset) {
    AblationResult result;
    result.outcome = train(config, dataset, variant);
    result.test_report = evaluate(result.outcome.checkpoint, dataset, Split::test);
    return result;
}

ProfileExport export_profiles(const Checkpoint& ckpt, int64_t node_id, int64_t top_k) {
    if (node_id < 0 || node_id >= ckpt.config.n_nodes) {
        throw std::out_of_range("node " + std::to_string(node_id) + " out of range for " +
                                std::to_string(ckpt.config.n_nodes) + " nodes");
    }
    if (top_k < 1) throw std::invalid_argument("top_k must be at least 1");

    DtmpModel model = model_from_checkpoint(ckpt);
    ProfileExport profiles;
    profiles.node_id = node_id;
    profiles.top_k = top_k;

    std::vector<Relation> relations;
    EmbeddingPair pair = model.embeddings;
    for (size_t m = 0; m < model.modules.size(); ++m) {
        const ModuleParams& module = model.modules[m];
        profiles.module_pairs.push_back(pair);
        BankResult built =
            build_bank(pair, module.dacn.couplings,
                       static_cast<int64_t>(module.dacn.agcns.size()),
                       model.config.dilations[m]);
        for (const ShiftedAdjacency& graph : built.bank.graphs) {
            for (int64_t j = 0; j < model.config.n_nodes; ++j) {
                if (j == node_id) continue;
                relations.push_back(Relation{static_cast<int64_t>(m), graph.shift, j,
                                             graph.matrix.at({node_id, j})});
            }
        }
        profiles.module_graphs.push_back(built.bank);
        pair = m < model.handoffs.size() ? couple(built.final_pair, model.handoffs[m])
                                         : built.final_pair;
    }

    std::stable_sort(relations.begin(), relations.end(),
                     [](const Relation& a, const Relation& b) { return a.weight > b.weight; });
    if (static_cast<int64_t>(relations.size()) > top_k) {
        relations.resize(static_cast<size_t>(top_k));
    }
    profiles.top_relations = std::move(relations);
    return profiles;
}

void write_profiles(const ProfileExport& profiles, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    for (size_t m = 0; m < profiles.module_pairs.size(); ++m) {
        const EmbeddingPair& pair = profiles.module_pairs[m];
        std::ofstream out(fs::path(out_dir) / ("embeddings_m" + std::to_string(m) + ".csv"));
        if (!out) throw std::runtime_error("cannot write embeddings for module " +
                                           std::to_string(m));
        out << "table,node";
        for (int64_t d = 0; d < pair.dim(); ++d) out << ",d" << d;
        out << '\n';
        for (const char* table : {"e1", "e2"}) {
            const Tensor& matrix = std::string(table) == "e1" ? pair.e1 : pair.e2;
            for (int64_t j = 0; j < pair.nodes(); ++j) {
                out << table << ',' << j;
                for (int64_t d = 0; d < pair.dim(); ++d) {
                    out << ',' << kv::format_double(matrix.at({j, d}));
                }
                out << '\n';
            }
        }
    }

    for (size_t m = 0; m < profiles.module_graphs.size(); ++m) {
        for (const ShiftedAdjacency& graph : profiles.module_graphs[m].graphs) {
            fs::path path = fs::path(out_dir) / ("graph_m" + std::to_string(m) + "_s" +
                                                 std::to_string(graph.shift) + ".csv");
            write_edge_list(graph.matrix, path.string());
        }
    }

    std::ofstream top(fs::path(out_dir) / "top_relations.csv");
    if (!top) throw std::runtime_error("cannot write top relations in " + out_dir);
    top << "rank,module,shift,node,weight\n";
    for (size_t i = 0; i < profiles.top_relations.size(); ++i) {
        const Relation& r = profiles.top_relations[i];
        top << (i + 1) << ',' << r.module << ',' << r.shift << ',' << r.node << ','
            << kv::format_double(r.weight) << '\n';
    }
}

void write_history(const std::vector<EpochRecord>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write history to " + path);
    out << "epoch,train_loss,val_mae,val_rmse,val_mape,wall_seconds\n";
    for (const EpochRecord& r : history) {
        out << r.epoch << ',' << kv::format_double(r.train_loss) << ','
            << kv::format_double(r.val_mae) << ',' << kv::format_double(r.val_rmse) << ',';
        if (std::isnan(r.val_mape)) {
            out << "undefined";
        } else {
            out << kv::format_double(r.val_mape);
        }
        out << ',' << kv::format_double(r.wall_seconds) << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace dtmp
