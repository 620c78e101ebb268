#include "dtmp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dtmp/kvfile.hpp"

namespace dtmp {

namespace {

std::string trim(const std::string& text) {
    size_t begin = text.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    size_t end = text.find_last_not_of(" \t\r");
    return text.substr(begin, end - begin + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string current;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(trim(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    fields.push_back(trim(current));
    return fields;
}

bool is_missing_cell(const std::string& cell) {
    if (cell.empty()) return true;
    std::string lower = cell;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return lower == "nan" || lower == "na";
}

// Fills NaN gaps in one node column: interior gaps linearly, edges flat.
void interpolate_column(std::vector<double>& column, const std::string& label) {
    int64_t n = static_cast<int64_t>(column.size());
    int64_t first_known = -1;
    int64_t last_known = -1;
    for (int64_t t = 0; t < n; ++t) {
        if (!std::isnan(column[t])) {
            if (first_known < 0) first_known = t;
            last_known = t;
        }
    }
    if (first_known < 0) {
        throw std::runtime_error(label + " has no observed values to interpolate from");
    }
    for (int64_t t = 0; t < first_known; ++t) column[t] = column[first_known];
    for (int64_t t = last_known + 1; t < n; ++t) column[t] = column[last_known];
    int64_t t = first_known;
    while (t <= last_known) {
        if (!std::isnan(column[t])) {
            ++t;
            continue;
        }
        int64_t prev = t - 1;
        int64_t next = t;
        while (std::isnan(column[next])) ++next;
        double lo = column[prev];
        double hi = column[next];
        for (int64_t k = t; k < next; ++k) {
            double frac = static_cast<double>(k - prev) / static_cast<double>(next - prev);
            column[k] = lo + frac * (hi - lo);
        }
        t = next + 1;
    }
}

}  // namespace

TrafficSeries load_dataset(const std::string& data_path, const std::string& meta_path) {
    kv::Document meta = kv::parse_file(meta_path);
    int64_t num_nodes = meta.get_int("num_nodes");
    int64_t num_steps = meta.get_int("num_steps");
    int64_t steps_per_day = meta.get_int("steps_per_day");
    if (num_nodes < 1 || num_steps < 1) {
        throw std::runtime_error(meta_path + ": num_nodes and num_steps must be positive");
    }

    std::ifstream in(data_path);
    if (!in) throw std::runtime_error("cannot open data file " + data_path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(data_path + ": empty file");
    std::vector<std::string> header = split_fields(line);
    if (static_cast<int64_t>(header.size()) != num_nodes) {
        throw std::runtime_error(data_path + ": header has " + std::to_string(header.size()) +
                                 " columns but metadata declares " + std::to_string(num_nodes) +
                                 " nodes");
    }
    for (int64_t j = 0; j < num_nodes; ++j) {
        std::string expected = "node_" + std::to_string(j);
        if (header[j] != expected) {
            throw std::runtime_error(data_path + ": header column " + std::to_string(j) +
                                     " is '" + header[j] + "', expected '" + expected + "'");
        }
    }

    // column-major staging so interpolation walks one node at a time
    std::vector<std::vector<double>> columns(
        num_nodes, std::vector<double>(num_steps, std::numeric_limits<double>::quiet_NaN()));
    int64_t row = 0;
    int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        if (row >= num_steps) {
            throw std::runtime_error(data_path + ": more data rows than the declared " +
                                     std::to_string(num_steps) + " steps");
        }
        std::vector<std::string> fields = split_fields(line);
        if (static_cast<int64_t>(fields.size()) != num_nodes) {
            throw std::runtime_error(data_path + ":" + std::to_string(line_no) +
                                     ": ragged row with " + std::to_string(fields.size()) +
                                     " fields, expected " + std::to_string(num_nodes));
        }
        for (int64_t j = 0; j < num_nodes; ++j) {
            if (is_missing_cell(fields[j])) continue;
            double value = kv::parse_double(fields[j], data_path + ":" + std::to_string(line_no) +
                                                           " column node_" + std::to_string(j));
            if (!std::isfinite(value)) {
                throw std::runtime_error(data_path + ":" + std::to_string(line_no) +
                                         ": non-finite value in column node_" + std::to_string(j));
            }
            columns[j][row] = value;
        }
        ++row;
    }
    if (row != num_steps) {
        throw std::runtime_error(data_path + ": found " + std::to_string(row) +
                                 " data rows but metadata declares " + std::to_string(num_steps));
    }

    for (int64_t j = 0; j < num_nodes; ++j) {
        interpolate_column(columns[j], data_path + ": column node_" + std::to_string(j));
    }

    std::vector<double> values(static_cast<size_t>(num_steps * num_nodes));
    for (int64_t t = 0; t < num_steps; ++t) {
        for (int64_t j = 0; j < num_nodes; ++j) {
            values[static_cast<size_t>(t * num_nodes + j)] = columns[j][t];
        }
    }

    TrafficSeries series;
    series.name = meta.get_or("name", "unnamed");
    series.period = meta.get_or("period", "");
    series.steps_per_day = steps_per_day;
    series.values = Tensor::from_values({num_steps, num_nodes, 1}, values);
    return series;
}

void write_dataset(const TrafficSeries& series, const std::string& data_path,
                   const std::string& meta_path) {
    if (!series.values.defined() || series.values.rank() != 3) {
        throw std::invalid_argument("write_dataset needs a (time, node, feature) series");
    }
    if (series.features() != 1) {
        throw std::invalid_argument("wide-table format holds a single feature channel, got " +
                                    std::to_string(series.features()));
    }
    int64_t steps = series.steps();
    int64_t nodes = series.nodes();

    std::ofstream out(data_path);
    if (!out) throw std::runtime_error("cannot write data file " + data_path);
    for (int64_t j = 0; j < nodes; ++j) {
        if (j) out << ',';
        out << "node_" << j;
    }
    out << '\n';
    const std::vector<double>& values = series.values.values();
    for (int64_t t = 0; t < steps; ++t) {
        for (int64_t j = 0; j < nodes; ++j) {
            if (j) out << ',';
            out << kv::format_double(values[static_cast<size_t>(t * nodes + j)]);
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + data_path);

    kv::Document meta;
    meta.set("name", series.name);
    meta.set_int("num_nodes", nodes);
    meta.set_int("num_steps", steps);
    meta.set_int("steps_per_day", series.steps_per_day);
    meta.set("period", series.period);
    kv::write_file(meta, meta_path);
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::train;
    if (text == "validation") return Split::validation;
    if (text == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + text +
                                "' (expected train, validation, or test)");
}

std::string split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    throw std::invalid_argument("bad split enum value");
}

const SplitRange& WindowedDataset::range(Split split) const {
    return ranges[static_cast<size_t>(split)];
}

int64_t WindowedDataset::sample_count(Split split) const {
    int64_t span = input_len + horizon;
    int64_t count = range(split).length() - span + 1;
    return count > 0 ? count : 0;
}

Sample WindowedDataset::sample(Split split, int64_t index) const {
    if (index < 0 || index >= sample_count(split)) {
        throw std::out_of_range("sample index " + std::to_string(index) + " out of range for " +
                                split_name(split) + " split with " +
                                std::to_string(sample_count(split)) + " samples");
    }
    int64_t row_width = nodes() * features();
    int64_t start = range(split).begin + index;
    const std::vector<double>& src = raw.values();

    Tensor x = Tensor::zeros({input_len, nodes(), features()});
    std::memcpy(x.mutable_values().data(), src.data() + start * row_width,
                sizeof(double) * static_cast<size_t>(input_len * row_width));
    Tensor y = Tensor::zeros({horizon, nodes(), features()});
    std::memcpy(y.mutable_values().data(), src.data() + (start + input_len) * row_width,
                sizeof(double) * static_cast<size_t>(horizon * row_width));
    return {x, y};
}

std::pair<Tensor, Tensor> WindowedDataset::gather(Split split,
                                                  const std::vector<int64_t>& indices) const {
    int64_t batch = static_cast<int64_t>(indices.size());
    if (batch == 0) throw std::invalid_argument("gather needs at least one sample index");
    int64_t row_width = nodes() * features();
    int64_t x_block = input_len * row_width;
    int64_t y_block = horizon * row_width;
    Tensor x = Tensor::zeros({batch, input_len, nodes(), features()});
    Tensor y = Tensor::zeros({batch, horizon, nodes(), features()});
    const std::vector<double>& src = raw.values();
    for (int64_t b = 0; b < batch; ++b) {
        int64_t index = indices[static_cast<size_t>(b)];
        if (index < 0 || index >= sample_count(split)) {
            throw std::out_of_range("sample index " + std::to_string(index) +
                                    " out of range for " + split_name(split) + " split");
        }
        int64_t start = range(split).begin + index;
        std::memcpy(x.mutable_values().data() + b * x_block, src.data() + start * row_width,
                    sizeof(double) * static_cast<size_t>(x_block));
        std::memcpy(y.mutable_values().data() + b * y_block,
                    src.data() + (start + input_len) * row_width,
                    sizeof(double) * static_cast<size_t>(y_block));
    }
    return {x, y};
}

WindowedDataset split_and_window(const TrafficSeries& series, int64_t input_len, int64_t horizon,
                                 const std::array<double, 3>& ratios) {
    if (input_len < 1 || horizon < 1) {
        throw std::invalid_argument("input length and horizon must both be at least 1");
    }
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw std::invalid_argument("split ratios must be non-negative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must sum to 1, got " + kv::format_double(sum));
    }
    if (!series.values.defined() || series.values.rank() != 3) {
        throw std::invalid_argument("split_and_window needs a (time, node, feature) series");
    }

    int64_t total = series.steps();
    int64_t train_end = static_cast<int64_t>(std::floor(total * ratios[0] + 1e-9));
    int64_t val_end =
        static_cast<int64_t>(std::floor(total * (ratios[0] + ratios[1]) + 1e-9));
    train_end = std::clamp<int64_t>(train_end, 0, total);
    val_end = std::clamp<int64_t>(val_end, train_end, total);

    WindowedDataset dataset;
    dataset.raw = Tensor::from_values(series.values.shape(), series.values.values());
    dataset.input_len = input_len;
    dataset.horizon = horizon;
    dataset.ranges = {SplitRange{0, train_end}, SplitRange{train_end, val_end},
                      SplitRange{val_end, total}};

    int64_t span = input_len + horizon;
    if (train_end < span) {
        throw std::runtime_error("train split has " + std::to_string(train_end) +
                                 " steps, shorter than one window of " + std::to_string(span));
    }
    return dataset;
}

NormStats normalize(WindowedDataset& dataset) {
    if (dataset.normalized) throw std::runtime_error("dataset is already normalized");
    int64_t channels = dataset.features();
    int64_t row_width = dataset.nodes() * channels;
    const SplitRange& train = dataset.range(Split::train);
    int64_t count = train.length() * dataset.nodes();
    if (count <= 0) throw std::runtime_error("cannot normalize: train split is empty");

    NormStats stats;
    stats.mean.assign(static_cast<size_t>(channels), 0.0);
    stats.stdev.assign(static_cast<size_t>(channels), 1.0);
    const std::vector<double>& values = dataset.raw.values();
    for (int64_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (int64_t t = train.begin; t < train.end; ++t) {
            for (int64_t j = 0; j < dataset.nodes(); ++j) {
                sum += values[static_cast<size_t>(t * row_width + j * channels + c)];
            }
        }
        double mean = sum / static_cast<double>(count);
        double var = 0.0;
        for (int64_t t = train.begin; t < train.end; ++t) {
            for (int64_t j = 0; j < dataset.nodes(); ++j) {
                double d = values[static_cast<size_t>(t * row_width + j * channels + c)] - mean;
                var += d * d;
            }
        }
        double stdev = std::sqrt(var / static_cast<double>(count));
        if (stdev <= 1e-12) {
            std::cerr << "warning: feature channel " << c
                      << " is constant on the train split; leaving it unscaled\n";
            continue;
        }
        stats.mean[static_cast<size_t>(c)] = mean;
        stats.stdev[static_cast<size_t>(c)] = stdev;
    }
    apply_normalization(dataset, stats);
    return stats;
}

void apply_normalization(WindowedDataset& dataset, const NormStats& stats) {
    if (dataset.normalized) throw std::runtime_error("dataset is already normalized");
    int64_t channels = dataset.features();
    if (static_cast<int64_t>(stats.mean.size()) != channels ||
        static_cast<int64_t>(stats.stdev.size()) != channels) {
        throw std::invalid_argument("normalization stats cover " +
                                    std::to_string(stats.mean.size()) + " channels, dataset has " +
                                    std::to_string(channels));
    }
    std::vector<double>& values = dataset.raw.mutable_values();
    for (size_t i = 0; i < values.size(); ++i) {
        size_t c = i % static_cast<size_t>(channels);
        values[i] = (values[i] - stats.mean[c]) / stats.stdev[c];
    }
    dataset.stats = stats;
    dataset.normalized = true;
}

Tensor denormalize(const Tensor& values, const NormStats& stats) {
    if (!values.defined() || values.rank() < 1) {
        throw std::invalid_argument("denormalize needs a defined tensor");
    }
    int64_t channels = values.dim(values.rank() - 1);
    if (static_cast<int64_t>(stats.mean.size()) != channels) {
        throw std::invalid_argument("normalization stats cover " +
                                    std::to_string(stats.mean.size()) +
                                    " channels, tensor has trailing axis " +
                                    std::to_string(channels));
    }
    Tensor out = Tensor::from_values(values.shape(), values.values());
    std::vector<double>& data = out.mutable_values();
    for (size_t i = 0; i < data.size(); ++i) {
        size_t c = i % static_cast<size_t>(channels);
        data[i] = data[i] * stats.stdev[c] + stats.mean[c];
    }
    return out;
}

void SyntheticSpec::validate() const {
    if (num_nodes < 1) throw std::invalid_argument("synthetic spec needs at least one node");
    if (num_steps < 2) throw std::invalid_argument("synthetic spec needs at least two steps");
    if (num_sources < 1 || num_sources > num_nodes) {
        throw std::invalid_argument("source count must be in [1, num_nodes]");
    }
    if (period < 2) throw std::invalid_argument("seasonal period must be at least 2 steps");
    if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) {
        throw std::invalid_argument("noise level must be finite and non-negative");
    }
    for (size_t i = 0; i < edges.size(); ++i) {
        const PlantedEdge& e = edges[i];
        std::string label = "planted edge " + std::to_string(i);
        if (e.src < 0 || e.src >= num_sources) {
            throw std::invalid_argument(label + ": source " + std::to_string(e.src) +
                                        " is not a source node (sources are 0.." +
                                        std::to_string(num_sources - 1) + ")");
        }
        if (e.dst < num_sources || e.dst >= num_nodes) {
            throw std::invalid_argument(label + ": destination " + std::to_string(e.dst) +
                                        " must be a non-source node");
        }
        if (e.lag < 1) throw std::invalid_argument(label + ": lag must be at least 1");
        if (e.lag >= num_steps) {
            throw std::invalid_argument(label + ": lag " + std::to_string(e.lag) +
                                        " is not below the series length " +
                                        std::to_string(num_steps));
        }
        if (!(e.weight > 0.0) || !(e.weight <= 1.0)) {
            throw std::invalid_argument(label + ": weight must lie in (0, 1]");
        }
    }
}

SyntheticSpec default_synthetic_spec() {
    SyntheticSpec spec;
    const int64_t lags[3] = {1, 2, 4};
    for (int64_t k = 0; k + spec.num_sources < spec.num_nodes; ++k) {
        PlantedEdge edge;
        edge.src = k % spec.num_sources;
        edge.dst = spec.num_sources + k;
        edge.lag = lags[k % 3];
        edge.weight = 1.0 - 0.05 * static_cast<double>(k);
        spec.edges.push_back(edge);
    }
    return spec;
}

SyntheticSpec read_synthetic_spec(const std::string& path) {
    kv::Document doc = kv::parse_file(path);
    SyntheticSpec spec;
    spec.name = doc.get_or("name", spec.name);
    if (doc.has("num_nodes")) spec.num_nodes = doc.get_int("num_nodes");
    if (doc.has("num_steps")) spec.num_steps = doc.get_int("num_steps");
    if (doc.has("num_sources")) spec.num_sources = doc.get_int("num_sources");
    if (doc.has("period")) spec.period = doc.get_int("period");
    if (doc.has("noise_level")) spec.noise_level = doc.get_double("noise_level");
    spec.edges.clear();
    for (const std::string& text : doc.all("edge")) {
        std::vector<std::string> fields = split_fields(text);
        if (fields.size() != 4) {
            throw std::runtime_error(path + ": edge entry '" + text +
                                     "' needs src,dst,lag,weight");
        }
        PlantedEdge edge;
        edge.src = kv::parse_int(fields[0], path + " edge src");
        edge.dst = kv::parse_int(fields[1], path + " edge dst");
        edge.lag = kv::parse_int(fields[2], path + " edge lag");
        edge.weight = kv::parse_double(fields[3], path + " edge weight");
        spec.edges.push_back(edge);
    }
    spec.validate();
    return spec;
}

void write_synthetic_spec(const SyntheticSpec& spec, const std::string& path) {
    spec.validate();
    kv::Document doc;
    doc.set("name", spec.name);
    doc.set_int("num_nodes", spec.num_nodes);
    doc.set_int("num_steps", spec.num_steps);
    doc.set_int("num_sources", spec.num_sources);
    doc.set_int("period", spec.period);
    doc.set_double("noise_level", spec.noise_level);
    for (const PlantedEdge& e : spec.edges) {
        doc.set("edge", std::to_string(e.src) + "," + std::to_string(e.dst) + "," +
                            std::to_string(e.lag) + "," + kv::format_double(e.weight));
    }
    kv::write_file(doc, path);
}

SynthResult synth_generate(const SyntheticSpec& spec, uint64_t seed) {
    spec.validate();
    const double base = 50.0;
    const double amplitude = 20.0;
    const double harmonic = 6.0;
    // Emitting nodes carry a seeded stochastic component on top of the
    // seasonal pattern. It is part of the emitted signal, so planted copies
    // propagate it; noise_level only scales per-node observation noise.
    // Without it every node would be a pure deterministic sinusoid and the
    // planted structure would not be identifiable from the data at all.
    const double jitter = 4.0;
    const double two_pi = 2.0 * std::numbers::pi_v<double>;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    int64_t max_lag = 0;
    for (const PlantedEdge& e : spec.edges) max_lag = std::max(max_lag, e.lag);
    int64_t ext_len = spec.num_steps + max_lag;

    // sources are generated on an extended horizon so a destination's first
    // steps still see the delayed signal
    std::vector<std::vector<double>> source_ext(
        static_cast<size_t>(spec.num_sources), std::vector<double>(static_cast<size_t>(ext_len)));
    for (int64_t s = 0; s < spec.num_sources; ++s) {
        double phase =
            static_cast<double>(spec.period) * static_cast<double>(s + 1) /
            static_cast<double>(spec.num_sources + 2);
        double harmonic_phase = 0.3 + 0.7 * static_cast<double>(s);
        for (int64_t t = 0; t < ext_len; ++t) {
            double tau = static_cast<double>(t - max_lag);
            double value = base +
                           amplitude * std::sin(two_pi * (tau + phase) /
                                                static_cast<double>(spec.period)) +
                           harmonic * std::sin(2.0 * two_pi * tau /
                                                   static_cast<double>(spec.period) +
                                               harmonic_phase);
            source_ext[static_cast<size_t>(s)][static_cast<size_t>(t)] =
                value + jitter * noise(rng);
        }
    }

    std::vector<double> values(static_cast<size_t>(spec.num_steps * spec.num_nodes), 0.0);
    auto cell = [&](int64_t t, int64_t j) -> double& {
        return values[static_cast<size_t>(t * spec.num_nodes + j)];
    };
    for (int64_t s = 0; s < spec.num_sources; ++s) {
        for (int64_t t = 0; t < spec.num_steps; ++t) {
            cell(t, s) = source_ext[static_cast<size_t>(s)][static_cast<size_t>(max_lag + t)];
        }
    }
    for (int64_t j = spec.num_sources; j < spec.num_nodes; ++j) {
        bool driven = false;
        for (const PlantedEdge& e : spec.edges) {
            if (e.dst != j) continue;
            driven = true;
            for (int64_t t = 0; t < spec.num_steps; ++t) {
                cell(t, j) += e.weight * source_ext[static_cast<size_t>(e.src)]
                                                   [static_cast<size_t>(max_lag + t - e.lag)];
            }
        }
        if (driven) {
            for (int64_t t = 0; t < spec.num_steps; ++t) {
                cell(t, j) += spec.noise_level * noise(rng);
            }
        } else {
            // node with no planted parent gets its own independent pattern
            double phase = static_cast<double>(spec.period) * static_cast<double>(j) /
                           static_cast<double>(spec.num_nodes + 1);
            for (int64_t t = 0; t < spec.num_steps; ++t) {
                cell(t, j) = base +
                             amplitude * std::sin(two_pi * (static_cast<double>(t) + phase) /
                                                  static_cast<double>(spec.period)) +
                             jitter * noise(rng) + spec.noise_level * noise(rng);
            }
        }
    }

    SynthResult result;
    result.series.name = spec.name;
    result.series.period = "synthetic";
    result.series.steps_per_day = spec.period;
    result.series.values =
        Tensor::from_values({spec.num_steps, spec.num_nodes, 1}, values);
    result.planted = spec.edges;
    return result;
}

void write_planted_edges(const std::vector<PlantedEdge>& edges, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write planted edges to " + path);
    out << "# src,dst,lag,weight\n";
    for (const PlantedEdge& e : edges) {
        out << e.src << ',' << e.dst << ',' << e.lag << ',' << kv::format_double(e.weight)
            << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<PlantedEdge> load_planted_edges(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open planted edges file " + path);
    std::vector<PlantedEdge> edges;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        std::vector<std::string> fields = split_fields(text);
        std::string context = path + ":" + std::to_string(line_no);
        if (fields.size() != 4) {
            throw std::runtime_error(context + ": expected src,dst,lag,weight");
        }
        PlantedEdge edge;
        edge.src = kv::parse_int(fields[0], context + " src");
        edge.dst = kv::parse_int(fields[1], context + " dst");
        edge.lag = kv::parse_int(fields[2], context + " lag");
        edge.weight = kv::parse_double(fields[3], context + " weight");
        if (edge.lag < 1) throw std::runtime_error(context + ": lag must be at least 1");
        if (!std::isfinite(edge.weight)) {
            throw std::runtime_error(context + ": weight must be finite");
        }
        edges.push_back(edge);
    }
    return edges;
}

}  // namespace dtmp
