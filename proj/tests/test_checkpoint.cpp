#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "dtmp/checkpoint.hpp"
#include "dtmp/kvfile.hpp"
#include "oracle_helpers.hpp"

using namespace dtmp;

namespace {

ModelConfig small_config() {
    ModelConfig config;
    config.n_nodes = 3;
    config.in_features = 1;
    config.hidden = 4;
    config.skip_width = 4;
    config.n_modules = 2;
    config.dilations = {1, 2};
    config.dacn_kernel = 2;
    config.tcn_kernel = 2;
    config.emb_dim = 2;
    config.dropout_rate = 0.3;
    config.input_len = 6;
    config.horizon = 2;
    config.out_features = 1;
    return config;
}

NormStats small_stats() {
    NormStats stats;
    stats.mean = {41.25};
    stats.stdev = {7.0625e-3};
    return stats;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save and load round trip is bit exact") {
    oracle::TempDir dir("ckpt");
    DtmpModel model = init_model(small_config(), Variant::full, 77);
    Checkpoint original = snapshot(model, small_stats());
    original.best_epoch = 12;
    original.best_val_mae = 3.0517578125e-5;

    save_checkpoint(original, dir.file("checkpoint.txt"), dir.file("checkpoint.bin"));
    Checkpoint loaded = load_checkpoint(dir.file("checkpoint.txt"));

    CHECK(loaded.variant == Variant::full);
    CHECK(loaded.config.n_nodes == 3);
    CHECK(loaded.config.dilations == std::vector<int64_t>{1, 2});
    CHECK(loaded.stats.mean == original.stats.mean);
    CHECK(loaded.stats.stdev == original.stats.stdev);
    CHECK(loaded.best_epoch == 12);
    CHECK(loaded.best_val_mae == original.best_val_mae);

    REQUIRE(loaded.params.size() == original.params.size());
    for (size_t i = 0; i < loaded.params.size(); ++i) {
        CHECK(loaded.params[i].first == original.params[i].first);
        CHECK(loaded.params[i].second.shape() == original.params[i].second.shape());
        CHECK(loaded.params[i].second.values() == original.params[i].second.values());
    }
}

TEST_CASE("irrational values survive the blob byte-for-byte") {
    oracle::TempDir dir("ckptbits");
    DtmpModel model = init_model(small_config(), Variant::full, 5);
    ParamSet params = model.parameters();
    // force awkward values through: denormals, negative zero, huge magnitudes
    params[0].tensor.mutable_values()[0] = 5e-324;
    params[0].tensor.mutable_values()[1] = -0.0;
    params[1].tensor.mutable_values()[0] = 1.0 / 3.0;
    params[1].tensor.mutable_values()[1] = 1e308;

    Checkpoint original = snapshot(model, small_stats());
    save_checkpoint(original, dir.file("c.txt"), dir.file("c.bin"));
    Checkpoint loaded = load_checkpoint(dir.file("c.txt"));
    for (size_t i = 0; i < 2; ++i) {
        CHECK(std::memcmp(loaded.params[i].second.values().data(),
                          original.params[i].second.values().data(),
                          original.params[i].second.values().size() * sizeof(double)) == 0);
    }
    CHECK(std::signbit(loaded.params[0].second.values()[1]));
}

TEST_CASE("reconstructed model reproduces the original forward pass exactly") {
    oracle::TempDir dir("ckptfwd");
    DtmpModel model = init_model(small_config(), Variant::full, 123);
    Checkpoint ckpt = snapshot(model, small_stats());
    save_checkpoint(ckpt, dir.file("checkpoint.txt"), dir.file("checkpoint.bin"));
    DtmpModel rebuilt = model_from_checkpoint(load_checkpoint(dir.file("checkpoint.txt")));

    std::mt19937_64 data_rng(9);
    Tensor x = oracle::random_tensor({2, 6, 3, 1}, data_rng, -1.0, 1.0);
    std::mt19937_64 eval_rng(0);
    Tensor a = network_forward(model, x, false, eval_rng).prediction;
    Tensor b = network_forward(rebuilt, x, false, eval_rng).prediction;
    CHECK(a.values() == b.values());
}

TEST_CASE("checkpoints reload after the directory moves") {
    oracle::TempDir dir("ckptmove");
    DtmpModel model = init_model(small_config(), Variant::no_gated_tcn, 3);
    save_checkpoint(snapshot(model, small_stats()), dir.file("checkpoint.txt"),
                    dir.file("checkpoint.bin"));

    namespace fs = std::filesystem;
    fs::path moved = fs::path(dir.file("elsewhere"));
    fs::create_directories(moved);
    fs::copy(dir.file("checkpoint.txt"), moved / "checkpoint.txt");
    fs::copy(dir.file("checkpoint.bin"), moved / "checkpoint.bin");

    Checkpoint loaded = load_checkpoint((moved / "checkpoint.txt").string());
    CHECK(loaded.variant == Variant::no_gated_tcn);
    CHECK(loaded.params.size() == snapshot(model, small_stats()).params.size());
}

TEST_CASE("corrupted files are rejected") {
    oracle::TempDir dir("ckptbad");
    DtmpModel model = init_model(small_config(), Variant::full, 4);
    save_checkpoint(snapshot(model, small_stats()), dir.file("checkpoint.txt"),
                    dir.file("checkpoint.bin"));

    SUBCASE("truncated blob") {
        std::filesystem::resize_file(dir.file("checkpoint.bin"), 24);
        CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("checkpoint.txt")),
                             doctest::Contains("bytes"), std::runtime_error);
    }
    SUBCASE("wrong format tag") {
        kv::Document doc = kv::parse_file(dir.file("checkpoint.txt"));
        kv::Document bad;
        bad.set("format", "something-else");
        for (const auto& [k, v] : doc.entries()) {
            if (k != "format") bad.set(k, v);
        }
        kv::write_file(bad, dir.file("checkpoint.txt"));
        CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("checkpoint.txt")),
                             doctest::Contains("not a checkpoint"), std::runtime_error);
    }
    SUBCASE("missing blob") {
        std::filesystem::remove(dir.file("checkpoint.bin"));
        CHECK_THROWS_AS(load_checkpoint(dir.file("checkpoint.txt")), std::runtime_error);
    }
}

TEST_CASE("parameter set mismatches are named") {
    DtmpModel model = init_model(small_config(), Variant::full, 8);
    Checkpoint ckpt = snapshot(model, small_stats());

    SUBCASE("renamed parameter") {
        ckpt.params[3].first = "module0.bogus";
        CHECK_THROWS_WITH_AS(model_from_checkpoint(ckpt), doctest::Contains("module0.bogus"),
                             std::runtime_error);
    }
    SUBCASE("dropped parameter") {
        ckpt.params.pop_back();
        CHECK_THROWS_AS(model_from_checkpoint(ckpt), std::runtime_error);
    }
    SUBCASE("reshaped parameter") {
        Tensor flat = Tensor::from_values({ckpt.params[0].second.numel()},
                                          ckpt.params[0].second.values());
        ckpt.params[0].second = flat;
        CHECK_THROWS_WITH_AS(model_from_checkpoint(ckpt), doctest::Contains("shape"),
                             std::runtime_error);
    }
}

TEST_CASE("variant structure survives the round trip") {
    oracle::TempDir dir("ckptvar");
    for (Variant variant : {Variant::full, Variant::no_coupling, Variant::no_alignment,
                            Variant::no_gated_tcn}) {
        DtmpModel model = init_model(small_config(), variant, 21);
        std::string tag = variant_name(variant);
        save_checkpoint(snapshot(model, small_stats()), dir.file(tag + ".txt"),
                        dir.file(tag + ".bin"));
        DtmpModel rebuilt = model_from_checkpoint(load_checkpoint(dir.file(tag + ".txt")));
        CHECK(rebuilt.variant == variant);
        CHECK(count_parameters(rebuilt) == count_parameters(model));
    }
}

}  // TEST_SUITE
