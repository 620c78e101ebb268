#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dtmp/tensor.hpp"

namespace dtmp {

// Dense observed series, shape (time, node, feature). Gaps are filled at load
// time, so values are always finite.
struct TrafficSeries {
    std::string name;
    std::string period;
    int64_t steps_per_day = 0;
    Tensor values;

    int64_t steps() const { return values.dim(0); }
    int64_t nodes() const { return values.dim(1); }
    int64_t features() const { return values.dim(2); }
};

TrafficSeries load_dataset(const std::string& data_path, const std::string& meta_path);
void write_dataset(const TrafficSeries& series, const std::string& data_path,
                   const std::string& meta_path);

enum class Split { train, validation, test };
Split parse_split(const std::string& text);
std::string split_name(Split split);

// Per-channel z-score statistics, computed from the train split only.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stdev;
};

struct SplitRange {
    int64_t begin = 0;
    int64_t end = 0;
    int64_t length() const { return end - begin; }
};

struct Sample {
    Tensor x;
    Tensor y;
};

// Chronological splits over one raw array; samples are materialized on
// demand so normalization touches a single copy of the data.
struct WindowedDataset {
    Tensor raw;
    int64_t input_len = 0;
    int64_t horizon = 0;
    std::array<SplitRange, 3> ranges;
    NormStats stats;
    bool normalized = false;

    int64_t nodes() const { return raw.dim(1); }
    int64_t features() const { return raw.dim(2); }
    const SplitRange& range(Split split) const;
    int64_t sample_count(Split split) const;
    Sample sample(Split split, int64_t index) const;
    // Stacks the given sample indices into (B,T,N,C) / (B,T',N,C) pairs.
    std::pair<Tensor, Tensor> gather(Split split, const std::vector<int64_t>& indices) const;
};

WindowedDataset split_and_window(const TrafficSeries& series, int64_t input_len,
                                 int64_t horizon,
                                 const std::array<double, 3>& ratios = {0.6, 0.2, 0.2});

// Computes train-split statistics and z-scores the whole dataset in place.
NormStats normalize(WindowedDataset& dataset);
// Applies previously computed statistics (checkpoint reuse path).
void apply_normalization(WindowedDataset& dataset, const NormStats& stats);
Tensor denormalize(const Tensor& values, const NormStats& stats);

struct PlantedEdge {
    int64_t src = 0;
    int64_t dst = 0;
    int64_t lag = 0;
    double weight = 0.0;
};

// Planted-lag generator spec: nodes [0, num_sources) emit a seasonal signal
// with a seeded stochastic component, every edge drives a non-source node
// with a delayed copy of its source's emission. noise_level scales the
// per-node observation noise only, so at zero noise a destination is an
// exact shifted copy while the emissions themselves stay non-degenerate.
struct SyntheticSpec {
    std::string name = "synth";
    int64_t num_nodes = 12;
    int64_t num_steps = 3000;
    int64_t num_sources = 2;
    int64_t period = 288;
    double noise_level = 1.0;
    std::vector<PlantedEdge> edges;

    void validate() const;
};

SyntheticSpec default_synthetic_spec();
SyntheticSpec read_synthetic_spec(const std::string& path);
void write_synthetic_spec(const SyntheticSpec& spec, const std::string& path);

struct SynthResult {
    TrafficSeries series;
    std::vector<PlantedEdge> planted;
};

SynthResult synth_generate(const SyntheticSpec& spec, uint64_t seed);

void write_planted_edges(const std::vector<PlantedEdge>& edges, const std::string& path);
std::vector<PlantedEdge> load_planted_edges(const std::string& path);

}  // namespace dtmp
