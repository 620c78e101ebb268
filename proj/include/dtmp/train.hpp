#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dtmp/checkpoint.hpp"
#include "dtmp/data.hpp"
#include "dtmp/graph.hpp"
#include "dtmp/kvfile.hpp"
#include "dtmp/metrics.hpp"
#include "dtmp/network.hpp"

namespace dtmp {

struct TrainConfig {
    ModelConfig model;
    double learning_rate = 0.003;
    int64_t batch_size = 64;
    int64_t max_epochs = 100;
    int64_t patience = 15;
    double grad_clip = 5.0;
    uint64_t seed = 0;

    void validate() const;
};

void write_train_config(const TrainConfig& config, kv::Document& doc);
TrainConfig read_train_config(const kv::Document& doc);

struct EpochRecord {
    int64_t epoch = 0;  // 1-based
    double train_loss = 0.0;  // normalized units
    double val_mae = 0.0;     // original units, as are the rest
    double val_rmse = 0.0;
    double val_mape = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;  // parameters of the best validation epoch
    std::vector<EpochRecord> history;
};

// Seeded mini-batch training with gradient clipping and Adam; keeps the
// parameters from the epoch with the lowest validation MAE and stops early
// after `patience` epochs without improvement.
TrainResult train(const TrainConfig& config, const WindowedDataset& dataset,
                  Variant variant = Variant::full);

// Deterministic inference over one split, metrics in original units. The
// dataset must be normalized with the checkpoint's statistics.
MetricsReport evaluate(const Checkpoint& ckpt, const WindowedDataset& dataset, Split split);

// Historical-average reference on the same windows.
MetricsReport evaluate_ha(const WindowedDataset& dataset, Split split);

struct AblationResult {
    TrainResult outcome;
    MetricsReport test_report;
};

AblationResult run_ablation(Variant variant, const TrainConfig& config,
                            const WindowedDataset& dataset);

struct Relation {
    int64_t module = 0;
    int64_t shift = 0;
    int64_t node = 0;
    double weight = 0.0;
};

// Everything is regenerated from the checkpoint: the embedding pair entering
// each module and the full graph schedule it induces.
struct ProfileExport {
    int64_t node_id = 0;
    int64_t top_k = 0;
    std::vector<EmbeddingPair> module_pairs;
    std::vector<GraphBank> module_graphs;
    std::vector<Relation> top_relations;  // strongest incoming weights, self excluded
};

ProfileExport export_profiles(const Checkpoint& ckpt, int64_t node_id, int64_t top_k);
void write_profiles(const ProfileExport& profiles, const std::string& out_dir);

void write_history(const std::vector<EpochRecord>& history, const std::string& path);

}  // namespace dtmp
