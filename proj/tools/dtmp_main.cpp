// Command-line front end: synthetic data generation, training, evaluation,
// and station-profile export over one run-directory layout.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dtmp/checkpoint.hpp"
#include "dtmp/data.hpp"
#include "dtmp/kvfile.hpp"
#include "dtmp/metrics.hpp"
#include "dtmp/train.hpp"

namespace fs = std::filesystem;

namespace {

std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path + " for digest");
    uint64_t hash = 1469598103934665603ull;  // fnv1a-64
    char buffer[4096];
    while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<unsigned char>(buffer[i]);
            hash *= 1099511628211ull;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
    return hex;
}

// Run directories are append-only: a non-empty target needs --force.
void prepare_out_dir(const std::string& out_dir, bool force) {
    if (fs::exists(out_dir) && !fs::is_directory(out_dir)) {
        throw std::runtime_error(out_dir + " exists and is not a directory");
    }
    if (fs::is_directory(out_dir) && !fs::is_empty(out_dir) && !force) {
        throw std::runtime_error("output directory " + out_dir +
                                 " is not empty; pick a fresh directory or pass --force");
    }
    fs::create_directories(out_dir);
}

void write_manifest(const std::string& out_dir, const std::string& command, uint64_t seed,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::string>& layout,
                    const dtmp::kv::Document* config_doc = nullptr) {
    dtmp::kv::Document doc;
    doc.set("format", "dtmp-run-1");
    doc.set("tool_version", DTMP_VERSION);
    doc.set("command", command);
    doc.set_int("seed", static_cast<int64_t>(seed));
    for (const auto& [label, path] : inputs) {
        doc.set("input." + label, fs::path(path).filename().string() + " fnv1a64:" +
                                      digest_file(path));
    }
    std::string files;
    for (const std::string& name : layout) {
        if (!files.empty()) files += ",";
        files += name;
    }
    doc.set("layout", files);
    if (config_doc) {
        for (const auto& [key, value] : config_doc->entries()) doc.set("config." + key, value);
    }
    dtmp::kv::write_file(doc, (fs::path(out_dir) / "manifest.txt").string());
}

std::string metric_line(const dtmp::MetricsReport& report) {
    std::string mape = report.mape_defined() ? dtmp::kv::format_double(report.mape) : "undefined";
    return "mae " + dtmp::kv::format_double(report.mae) + "  rmse " + dtmp::kv::format_double(report.rmse) +
           "  mape_percent " + mape;
}

int cmd_synth(const std::string& spec_path, uint64_t seed, const std::string& out_dir,
              bool force) {
    dtmp::SyntheticSpec spec =
        spec_path.empty() ? dtmp::default_synthetic_spec() : dtmp::read_synthetic_spec(spec_path);
    prepare_out_dir(out_dir, force);

    dtmp::SynthResult result = dtmp::synth_generate(spec, seed);
    std::string data_path = (fs::path(out_dir) / "data.csv").string();
    std::string meta_path = (fs::path(out_dir) / "metadata.txt").string();
    std::string truth_path = (fs::path(out_dir) / "planted_edges.csv").string();
    dtmp::write_dataset(result.series, data_path, meta_path);
    dtmp::write_planted_edges(result.planted, truth_path);

    std::vector<std::pair<std::string, std::string>> inputs;
    if (!spec_path.empty()) inputs.emplace_back("spec", spec_path);
    write_manifest(out_dir, "synth", seed, inputs,
                   {"manifest.txt", "data.csv", "metadata.txt", "planted_edges.csv"});

    std::cout << "wrote " << result.series.steps() << " steps for " << result.series.nodes()
              << " nodes to " << data_path << "\n"
              << "planted " << result.planted.size() << " edges listed in " << truth_path
              << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& variant_name_arg,
              int64_t seed_override, bool force) {
    std::string data_path = (fs::path(data_dir) / "data.csv").string();
    std::string meta_path = (fs::path(data_dir) / "metadata.txt").string();
    dtmp::TrafficSeries series = dtmp::load_dataset(data_path, meta_path);

    dtmp::kv::Document config_doc = dtmp::kv::parse_file(config_path);
    if (!config_doc.has("n_nodes")) config_doc.set_int("n_nodes", series.nodes());
    dtmp::TrainConfig config = dtmp::read_train_config(config_doc);
    if (seed_override >= 0) config.seed = static_cast<uint64_t>(seed_override);
    dtmp::Variant variant = dtmp::parse_variant(variant_name_arg);
    config.validate();

    dtmp::WindowedDataset dataset =
        dtmp::split_and_window(series, config.model.input_len, config.model.horizon);
    dtmp::normalize(dataset);

    prepare_out_dir(out_dir, force);
    dtmp::kv::Document resolved;
    dtmp::write_train_config(config, resolved);
    resolved.set("variant", dtmp::variant_name(variant));
    write_manifest(out_dir, "train", config.seed,
                   {{"config", config_path}, {"data", data_path}, {"metadata", meta_path}},
                   {"manifest.txt", "checkpoint.txt", "checkpoint.bin", "history.csv",
                    "metrics_validation.txt", "metrics_validation_horizons.csv",
                    "metrics_test.txt", "metrics_test_horizons.csv"},
                   &resolved);

    dtmp::AblationResult run = dtmp::run_ablation(variant, config, dataset);

    dtmp::save_checkpoint(run.outcome.checkpoint, (fs::path(out_dir) / "checkpoint.txt").string(),
                          (fs::path(out_dir) / "checkpoint.bin").string());
    dtmp::write_history(run.outcome.history, (fs::path(out_dir) / "history.csv").string());
    dtmp::MetricsReport validation =
        dtmp::evaluate(run.outcome.checkpoint, dataset, dtmp::Split::validation);
    dtmp::write_metrics_report(validation, (fs::path(out_dir) / "metrics_validation.txt").string(),
                               (fs::path(out_dir) / "metrics_validation_horizons.csv").string());
    dtmp::write_metrics_report(run.test_report, (fs::path(out_dir) / "metrics_test.txt").string(),
                               (fs::path(out_dir) / "metrics_test_horizons.csv").string());

    std::cout << "trained " << dtmp::variant_name(variant) << " for "
              << run.outcome.history.size() << " epochs, best epoch "
              << run.outcome.checkpoint.best_epoch << "\n"
              << "validation: " << metric_line(validation) << "\n"
              << "test:       " << metric_line(run.test_report) << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_dir, const std::string& split_name_arg, bool with_ha,
             uint64_t seed, bool force) {
    dtmp::Split split = dtmp::parse_split(split_name_arg);
    dtmp::Checkpoint ckpt = dtmp::load_checkpoint(ckpt_path);

    std::string data_path = (fs::path(data_dir) / "data.csv").string();
    std::string meta_path = (fs::path(data_dir) / "metadata.txt").string();
    dtmp::TrafficSeries series = dtmp::load_dataset(data_path, meta_path);
    dtmp::WindowedDataset dataset =
        dtmp::split_and_window(series, ckpt.config.input_len, ckpt.config.horizon);
    dtmp::apply_normalization(dataset, ckpt.stats);

    prepare_out_dir(out_dir, force);
    std::string tag = dtmp::split_name(split);
    std::vector<std::string> layout = {"manifest.txt", "metrics_" + tag + ".txt",
                                       "metrics_" + tag + "_horizons.csv"};
    if (with_ha) {
        layout.push_back("metrics_" + tag + "_ha.txt");
        layout.push_back("metrics_" + tag + "_ha_horizons.csv");
    }
    write_manifest(out_dir, "eval", seed,
                   {{"checkpoint", ckpt_path}, {"data", data_path}, {"metadata", meta_path}},
                   layout);

    dtmp::MetricsReport report = dtmp::evaluate(ckpt, dataset, split);
    dtmp::write_metrics_report(report, (fs::path(out_dir) / ("metrics_" + tag + ".txt")).string(),
                               (fs::path(out_dir) / ("metrics_" + tag + "_horizons.csv")).string());
    std::cout << tag << ": " << metric_line(report) << "\n";

    if (with_ha) {
        dtmp::MetricsReport ha = dtmp::evaluate_ha(dataset, split);
        dtmp::write_metrics_report(
            ha, (fs::path(out_dir) / ("metrics_" + tag + "_ha.txt")).string(),
            (fs::path(out_dir) / ("metrics_" + tag + "_ha_horizons.csv")).string());
        std::cout << tag << " (ha baseline): " << metric_line(ha) << "\n";
    }
    return 0;
}

int cmd_profiles(const std::string& ckpt_path, int64_t node, int64_t top_k,
                 const std::string& out_dir, uint64_t seed, bool force) {
    dtmp::Checkpoint ckpt = dtmp::load_checkpoint(ckpt_path);
    dtmp::ProfileExport profiles = dtmp::export_profiles(ckpt, node, top_k);

    prepare_out_dir(out_dir, force);
    dtmp::write_profiles(profiles, out_dir);

    std::vector<std::string> layout = {"manifest.txt", "top_relations.csv"};
    for (size_t m = 0; m < profiles.module_graphs.size(); ++m) {
        layout.push_back("embeddings_m" + std::to_string(m) + ".csv");
        for (const dtmp::ShiftedAdjacency& graph : profiles.module_graphs[m].graphs) {
            layout.push_back("graph_m" + std::to_string(m) + "_s" +
                             std::to_string(graph.shift) + ".csv");
        }
    }
    write_manifest(out_dir, "profiles", seed, {{"checkpoint", ckpt_path}}, layout);

    std::cout << "node " << node << " strongest relations:\n";
    for (size_t i = 0; i < profiles.top_relations.size(); ++i) {
        const dtmp::Relation& r = profiles.top_relations[i];
        std::cout << "  " << (i + 1) << ". node " << r.node << " via module " << r.module
                  << " shift " << r.shift << " weight " << dtmp::kv::format_double(r.weight) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive spatio-temporal graph forecaster"};
    app.require_subcommand(1);
    app.set_version_flag("--version", DTMP_VERSION);

    std::string spec_path, config_path, data_dir, out_dir, ckpt_path;
    std::string variant = "full";
    std::string split = "test";
    uint64_t seed = 0;
    int64_t train_seed = -1;
    int64_t node = 0;
    int64_t top_k = 2;
    bool force = false;
    std::string baseline;

    CLI::App* synth = app.add_subcommand("synth", "generate a planted-lag synthetic dataset");
    synth->add_option("--spec", spec_path, "synthetic spec file (defaults to the built-in spec)");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_flag("--force", force, "write into a non-empty directory");

    CLI::App* train = app.add_subcommand("train", "train a model and write a run directory");
    train->add_option("--config", config_path, "training config file")->required();
    train->add_option("--data", data_dir, "directory holding data.csv and metadata.txt")
        ->required();
    train->add_option("--out", out_dir, "run directory")->required();
    train->add_option("--seed", train_seed, "overrides the config seed");
    train->add_option("--variant", variant, "full, no_coupling, no_alignment, or no_gated_tcn");
    train->add_flag("--force", force, "write into a non-empty directory");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint manifest")->required();
    eval->add_option("--data", data_dir, "directory holding data.csv and metadata.txt")
        ->required();
    eval->add_option("--out", out_dir, "output directory")->required();
    eval->add_option("--split", split, "train, validation, or test");
    eval->add_option("--baseline", baseline, "also score a reference predictor (ha)")
        ->check(CLI::IsMember({"ha"}));
    eval->add_option("--seed", seed, "recorded in the manifest");
    eval->add_flag("--force", force, "write into a non-empty directory");

    CLI::App* profiles = app.add_subcommand("profiles", "export station profiles and graphs");
    profiles->add_option("--checkpoint", ckpt_path, "checkpoint manifest")->required();
    profiles->add_option("--node", node, "station to rank relations for")->required();
    profiles->add_option("--top-k", top_k, "relations to report");
    profiles->add_option("--out", out_dir, "output directory")->required();
    profiles->add_option("--seed", seed, "recorded in the manifest");
    profiles->add_flag("--force", force, "write into a non-empty directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth(spec_path, seed, out_dir, force);
        if (*train) return cmd_train(config_path, data_dir, out_dir, variant, train_seed, force);
        if (*eval) return cmd_eval(ckpt_path, data_dir, out_dir, split, baseline == "ha", seed,
                                   force);
        if (*profiles) return cmd_profiles(ckpt_path, node, top_k, out_dir, seed, force);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
