#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dtmp/train.hpp"
#include "oracle_helpers.hpp"

using namespace dtmp;

namespace {

SyntheticSpec tiny_spec() {
    SyntheticSpec spec;
    spec.name = "tiny";
    spec.num_nodes = 4;
    spec.num_steps = 240;
    spec.num_sources = 1;
    spec.period = 24;
    spec.noise_level = 0.3;
    spec.edges = {{0, 1, 1, 0.9}, {0, 2, 2, 0.8}, {0, 3, 1, 0.7}};
    return spec;
}

TrainConfig tiny_train_config() {
    TrainConfig config;
    config.model.n_nodes = 4;
    config.model.in_features = 1;
    config.model.hidden = 4;
    config.model.skip_width = 4;
    config.model.n_modules = 1;
    config.model.dilations = {1};
    config.model.dacn_kernel = 2;
    config.model.tcn_kernel = 2;
    config.model.emb_dim = 2;
    config.model.dropout_rate = 0.1;
    config.model.input_len = 6;
    config.model.horizon = 2;
    config.model.out_features = 1;
    config.batch_size = 16;
    config.max_epochs = 6;
    config.patience = 15;
    config.seed = 31;
    return config;
}

WindowedDataset tiny_dataset(uint64_t seed = 2) {
    SynthResult generated = synth_generate(tiny_spec(), seed);
    WindowedDataset ds = split_and_window(generated.series, 6, 2);
    normalize(ds);
    return ds;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("train config validation and file round trip") {
    TrainConfig config = tiny_train_config();
    config.validate();

    SUBCASE("field checks") {
        config.learning_rate = 0.0;
        CHECK_THROWS_AS(config.validate(), std::invalid_argument);
        config = tiny_train_config();
        config.batch_size = 0;
        CHECK_THROWS_AS(config.validate(), std::invalid_argument);
        config = tiny_train_config();
        config.patience = 0;
        CHECK_THROWS_AS(config.validate(), std::invalid_argument);
    }
    SUBCASE("defaults materialize when keys are absent") {
        kv::Document doc;
        write_config(config.model, doc);  // model keys only
        TrainConfig loaded = read_train_config(doc);
        CHECK(loaded.learning_rate == 0.003);
        CHECK(loaded.batch_size == 64);
        CHECK(loaded.max_epochs == 100);
        CHECK(loaded.patience == 15);
        CHECK(loaded.grad_clip == 5.0);
        CHECK(loaded.seed == 0);
    }
    SUBCASE("full round trip") {
        config.learning_rate = 0.0105;
        config.seed = 99;
        kv::Document doc;
        write_train_config(config, doc);
        TrainConfig loaded = read_train_config(doc);
        CHECK(loaded.learning_rate == 0.0105);
        CHECK(loaded.seed == 99);
        CHECK(loaded.model.n_nodes == 4);
        CHECK(loaded.model.dilations == config.model.dilations);
    }
}

TEST_CASE("training learns and keeps the best validation epoch") {
    WindowedDataset ds = tiny_dataset();
    TrainResult result = train(tiny_train_config(), ds);

    REQUIRE(!result.history.empty());
    CHECK(result.history.size() <= 6);

    double min_train = result.history.front().train_loss;
    double min_val = result.history.front().val_mae;
    int64_t argmin_val = 1;
    for (const EpochRecord& r : result.history) {
        CHECK(std::isfinite(r.train_loss));
        CHECK(r.val_rmse >= r.val_mae);
        min_train = std::min(min_train, r.train_loss);
        if (r.val_mae < min_val) {
            min_val = r.val_mae;
            argmin_val = r.epoch;
        }
    }
    CHECK(result.history.front().train_loss > min_train);
    CHECK(result.checkpoint.best_epoch == argmin_val);
    CHECK(result.checkpoint.best_val_mae == min_val);
    CHECK(result.checkpoint.stats.mean == ds.stats.mean);
    CHECK(result.checkpoint.stats.stdev == ds.stats.stdev);
}

TEST_CASE("same config and seed reproduce the loss history exactly") {
    WindowedDataset ds = tiny_dataset();
    TrainConfig config = tiny_train_config();
    config.max_epochs = 4;

    TrainResult a = train(config, ds);
    TrainResult b = train(config, ds);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_mae == b.history[i].val_mae);
    }
    for (size_t i = 0; i < a.checkpoint.params.size(); ++i) {
        CHECK(a.checkpoint.params[i].second.values() == b.checkpoint.params[i].second.values());
    }

    config.seed = 32;
    TrainResult c = train(config, ds);
    CHECK(a.history.front().train_loss != c.history.front().train_loss);
}

TEST_CASE("early stopping halts after patience epochs without improvement") {
    WindowedDataset ds = tiny_dataset();
    TrainConfig config = tiny_train_config();
    config.max_epochs = 50;
    config.patience = 1;
    config.learning_rate = 5.0;  // wild steps so validation stops improving fast

    TrainResult result = train(config, ds);
    REQUIRE(result.history.size() < 50);
    // with patience 1, every epoch before the stop improved
    CHECK(result.checkpoint.best_epoch ==
          static_cast<int64_t>(result.history.size()) - 1);
    double min_val = result.history.front().val_mae;
    for (const EpochRecord& r : result.history) min_val = std::min(min_val, r.val_mae);
    CHECK(result.checkpoint.best_val_mae == min_val);
}

TEST_CASE("exploding loss aborts naming the epoch and batch") {
    WindowedDataset ds = tiny_dataset();
    TrainConfig config = tiny_train_config();
    config.learning_rate = 1e200;
    CHECK_THROWS_WITH_AS(train(config, ds), doctest::Contains("epoch"), std::runtime_error);
}

TEST_CASE("training preconditions") {
    TrainConfig config = tiny_train_config();

    SUBCASE("unnormalized dataset") {
        SynthResult generated = synth_generate(tiny_spec(), 2);
        WindowedDataset raw = split_and_window(generated.series, 6, 2);
        CHECK_THROWS_WITH_AS(train(config, raw), doctest::Contains("normalized"),
                             std::invalid_argument);
    }
    SUBCASE("dimension mismatch") {
        WindowedDataset ds = tiny_dataset();
        config.model.n_nodes = 5;
        CHECK_THROWS_AS(train(config, ds), std::invalid_argument);
    }
    SUBCASE("validation split too short to window") {
        SyntheticSpec spec = tiny_spec();
        spec.num_steps = 60;  // 36/12/12 split, window span 14
        SynthResult generated = synth_generate(spec, 2);
        WindowedDataset ds = split_and_window(generated.series, 12, 2);
        normalize(ds);
        TrainConfig c = tiny_train_config();
        c.model.input_len = 12;
        CHECK_THROWS_WITH_AS(train(c, ds), doctest::Contains("validation"), std::runtime_error);
    }
}

TEST_CASE("evaluation is deterministic and tied to the training history") {
    WindowedDataset ds = tiny_dataset();
    TrainResult result = train(tiny_train_config(), ds);

    MetricsReport val = evaluate(result.checkpoint, ds, Split::validation);
    CHECK(val.mae == result.checkpoint.best_val_mae);

    MetricsReport test_a = evaluate(result.checkpoint, ds, Split::test);
    MetricsReport test_b = evaluate(result.checkpoint, ds, Split::test);
    CHECK(test_a.mae == test_b.mae);
    CHECK(test_a.rmse == test_b.rmse);
    CHECK(test_a.rmse >= test_a.mae);
    CHECK(test_a.entry_count == ds.sample_count(Split::test) * 2 * 4);

    SUBCASE("statistics must match the checkpoint") {
        WindowedDataset other = tiny_dataset(3);  // different seed, different stats
        CHECK_THROWS_WITH_AS(evaluate(result.checkpoint, other, Split::test),
                             doctest::Contains("statistics"), std::runtime_error);
    }
    SUBCASE("reloading through files changes nothing") {
        oracle::TempDir dir("evalreload");
        save_checkpoint(result.checkpoint, dir.file("c.txt"), dir.file("c.bin"));
        MetricsReport reloaded = evaluate(load_checkpoint(dir.file("c.txt")), ds, Split::test);
        CHECK(reloaded.mae == test_a.mae);
        CHECK(reloaded.rmse == test_a.rmse);
        CHECK(reloaded.mape == test_a.mape);
    }
}

TEST_CASE("historical average pipeline produces original-unit metrics") {
    WindowedDataset ds = tiny_dataset();
    MetricsReport report = evaluate_ha(ds, Split::test);
    CHECK(report.rmse >= report.mae);
    CHECK(report.mae > 1.0);  // sinusoid amplitude 20, window mean is a poor fit
    CHECK(report.entry_count == ds.sample_count(Split::test) * 2 * 4);

    // constant series: the window mean is a perfect prediction
    TrafficSeries flat;
    flat.name = "flat";
    flat.steps_per_day = 24;
    flat.values = Tensor::full({200, 2, 1}, 3.25);
    WindowedDataset flat_ds = split_and_window(flat, 6, 2);
    MetricsReport perfect = evaluate_ha(flat_ds, Split::test);
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.rmse == 0.0);
}

TEST_CASE("ablation runner trains the requested variant") {
    WindowedDataset ds = tiny_dataset();
    TrainConfig config = tiny_train_config();
    config.max_epochs = 3;

    AblationResult ablated = run_ablation(Variant::no_gated_tcn, config, ds);
    CHECK(ablated.outcome.checkpoint.variant == Variant::no_gated_tcn);
    CHECK(ablated.test_report.rmse >= ablated.test_report.mae);

    // the identity variant reproduces the standard pipeline exactly
    AblationResult full = run_ablation(Variant::full, config, ds);
    TrainResult direct = train(config, ds);
    REQUIRE(full.outcome.history.size() == direct.history.size());
    for (size_t i = 0; i < direct.history.size(); ++i) {
        CHECK(full.outcome.history[i].train_loss == direct.history[i].train_loss);
    }
    CHECK(full.test_report.mae == evaluate(direct.checkpoint, ds, Split::test).mae);
}

TEST_CASE("profile export regenerates stochastic graphs from the checkpoint") {
    WindowedDataset ds = tiny_dataset();
    TrainConfig config = tiny_train_config();
    config.max_epochs = 2;
    config.model.n_modules = 2;
    config.model.dilations = {1, 2};
    TrainResult result = train(config, ds);

    ProfileExport profiles = export_profiles(result.checkpoint, 1, 3);
    CHECK(profiles.module_pairs.size() == 2);
    CHECK(profiles.module_graphs.size() == 2);
    CHECK(profiles.module_graphs[0].graphs.size() == 2);
    CHECK(profiles.module_graphs[1].graphs.size() == 2);
    CHECK(profiles.module_graphs[0].graphs[1].shift == 1);
    CHECK(profiles.module_graphs[1].graphs[1].shift == 2);

    for (const GraphBank& bank : profiles.module_graphs) {
        for (const ShiftedAdjacency& graph : bank.graphs) {
            for (int64_t i = 0; i < 4; ++i) {
                double row_sum = 0;
                for (int64_t j = 0; j < 4; ++j) row_sum += graph.matrix.at({i, j});
                CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }

    REQUIRE(profiles.top_relations.size() == 3);
    CHECK(profiles.top_relations[0].weight >= profiles.top_relations[1].weight);
    CHECK(profiles.top_relations[1].weight >= profiles.top_relations[2].weight);
    for (const Relation& r : profiles.top_relations) CHECK(r.node != 1);

    SUBCASE("second export is bit identical") {
        ProfileExport again = export_profiles(result.checkpoint, 1, 3);
        for (size_t m = 0; m < 2; ++m) {
            for (size_t k = 0; k < 2; ++k) {
                CHECK(again.module_graphs[m].graphs[k].matrix.values() ==
                      profiles.module_graphs[m].graphs[k].matrix.values());
            }
        }
        CHECK(again.top_relations[0].weight == profiles.top_relations[0].weight);
    }
    SUBCASE("out-of-range node is rejected") {
        CHECK_THROWS_AS(export_profiles(result.checkpoint, 4, 2), std::out_of_range);
        CHECK_THROWS_AS(export_profiles(result.checkpoint, -1, 2), std::out_of_range);
    }
    SUBCASE("files land in the output directory") {
        oracle::TempDir dir("profiles");
        write_profiles(profiles, dir.file("out"));
        namespace fs = std::filesystem;
        CHECK(fs::exists(dir.file("out/embeddings_m0.csv")));
        CHECK(fs::exists(dir.file("out/embeddings_m1.csv")));
        CHECK(fs::exists(dir.file("out/graph_m0_s0.csv")));
        CHECK(fs::exists(dir.file("out/graph_m0_s1.csv")));
        CHECK(fs::exists(dir.file("out/graph_m1_s0.csv")));
        CHECK(fs::exists(dir.file("out/graph_m1_s2.csv")));
        std::ifstream top(dir.file("out/top_relations.csv"));
        std::string line;
        std::getline(top, line);
        CHECK(line == "rank,module,shift,node,weight");
        int rows = 0;
        while (std::getline(top, line)) {
            if (!line.empty()) ++rows;
        }
        CHECK(rows == 3);
    }
    SUBCASE("single-graph variant exports one shift per module") {
        TrainResult na = train(config, ds, Variant::no_alignment);
        ProfileExport p = export_profiles(na.checkpoint, 0, 2);
        CHECK(p.module_graphs[0].graphs.size() == 1);
        CHECK(p.module_graphs[0].graphs[0].shift == 0);
        CHECK(p.module_graphs[1].graphs.size() == 1);
    }
}

TEST_CASE("history file holds one row per epoch") {
    oracle::TempDir dir("history");
    WindowedDataset ds = tiny_dataset();
    TrainConfig config = tiny_train_config();
    config.max_epochs = 3;
    TrainResult result = train(config, ds);

    write_history(result.history, dir.file("history.csv"));
    std::ifstream in(dir.file("history.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,train_loss,val_mae,val_rmse,val_mape,wall_seconds");
    int rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 3);
}

}  // TEST_SUITE
