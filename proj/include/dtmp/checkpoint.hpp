#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dtmp/data.hpp"
#include "dtmp/network.hpp"

namespace dtmp {

// Frozen model state: a text manifest describing config, variant,
// normalization statistics, and the parameter table, plus a raw
// little-endian double blob holding the values bit-exactly.
struct Checkpoint {
    ModelConfig config;
    Variant variant = Variant::full;
    NormStats stats;
    int64_t best_epoch = -1;
    double best_val_mae = 0.0;
    std::vector<std::pair<std::string, Tensor>> params;
};

Checkpoint snapshot(const DtmpModel& model, const NormStats& stats);

// blob_path is stored relative to the manifest's directory so run
// directories can be moved as a unit.
void save_checkpoint(const Checkpoint& ckpt, const std::string& manifest_path,
                     const std::string& blob_path);
Checkpoint load_checkpoint(const std::string& manifest_path);

// Rebuilds a live model, overwriting every parameter by name. Throws if the
// checkpoint and the freshly constructed model disagree about the set.
DtmpModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace dtmp
