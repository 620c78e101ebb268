#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "dtmp/kvfile.hpp"
#include "dtmp/metrics.hpp"
#include "oracle_helpers.hpp"

using namespace dtmp;

TEST_SUITE("metrics") {

TEST_CASE("hand-computed values for a two-entry forecast") {
    Tensor pred = Tensor::from_values({2}, {1.0, 2.0});
    Tensor target = Tensor::from_values({2}, {2.0, 4.0});
    MetricsReport report = compute_metrics(pred, target);
    CHECK(report.mae == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(report.rmse == doctest::Approx(std::sqrt(2.5)).epsilon(1e-12));
    CHECK(std::abs(report.rmse - 1.5811) < 1e-4);
    CHECK(report.mape == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(report.entry_count == 2);
    CHECK(report.masked_count == 0);
}

TEST_CASE("perfect prediction scores zero on all three metrics") {
    std::mt19937_64 rng(3);
    Tensor target = oracle::random_tensor({2, 3, 4, 1}, rng, 1.0, 9.0);
    MetricsReport report = compute_metrics(target, target);
    CHECK(report.mae == 0.0);
    CHECK(report.rmse == 0.0);
    CHECK(report.mape == 0.0);
}

TEST_CASE("near-zero targets drop out of MAPE but stay in MAE and RMSE") {
    Tensor pred = Tensor::from_values({3}, {1.0, 2.0, 3.0});
    Tensor target = Tensor::from_values({3}, {0.0, 2.0, 4.0});
    MetricsReport report = compute_metrics(pred, target);
    CHECK(report.mae == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(report.rmse == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
    // only the 4 entry contributes: |3-4|/4
    CHECK(report.mape == doctest::Approx(12.5).epsilon(1e-12));
    CHECK(report.masked_count == 1);
    CHECK(report.entry_count == 3);
}

TEST_CASE("all-masked targets leave MAPE undefined with a count") {
    Tensor pred = Tensor::from_values({2}, {1.0, -1.0});
    Tensor target = Tensor::from_values({2}, {0.0, 0.0005});
    MetricsReport report = compute_metrics(pred, target);
    CHECK(!report.mape_defined());
    CHECK(report.masked_count == 2);
    CHECK(report.mae == doctest::Approx(1.00025).epsilon(1e-9));
}

TEST_CASE("RMSE dominates MAE on random data") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        Tensor pred = oracle::random_tensor({5}, rng, -10.0, 10.0);
        Tensor target = oracle::random_tensor({5}, rng, -10.0, 10.0);
        MetricsReport report = compute_metrics(pred, target);
        CHECK(report.rmse >= report.mae);
        CHECK(report.mae >= 0.0);
    }
}

TEST_CASE("per-horizon slices reconcile with the overall values") {
    std::mt19937_64 rng(12);
    Tensor pred = oracle::random_tensor({3, 4, 5, 2}, rng, 10.0, 90.0);
    Tensor target = oracle::random_tensor({3, 4, 5, 2}, rng, 10.0, 90.0);
    MetricsReport report = compute_metrics(pred, target);
    REQUIRE(report.horizon_mae.size() == 4);

    double mae_mean = 0, mse_mean = 0;
    for (size_t h = 0; h < 4; ++h) {
        mae_mean += report.horizon_mae[h] / 4.0;
        mse_mean += report.horizon_rmse[h] * report.horizon_rmse[h] / 4.0;
    }
    CHECK(report.mae == doctest::Approx(mae_mean).epsilon(1e-12));
    CHECK(report.rmse == doctest::Approx(std::sqrt(mse_mean)).epsilon(1e-12));
}

TEST_CASE("per-horizon values isolate each output step") {
    // one sample, two horizon steps: errors 1 and 3
    Tensor pred = Tensor::from_values({1, 2, 1, 1}, {5.0, 5.0});
    Tensor target = Tensor::from_values({1, 2, 1, 1}, {4.0, 8.0});
    MetricsReport report = compute_metrics(pred, target);
    REQUIRE(report.horizon_mae.size() == 2);
    CHECK(report.horizon_mae[0] == doctest::Approx(1.0));
    CHECK(report.horizon_mae[1] == doctest::Approx(3.0));
    CHECK(report.horizon_rmse[0] == doctest::Approx(1.0));
    CHECK(report.horizon_rmse[1] == doctest::Approx(3.0));
    CHECK(report.mae == doctest::Approx(2.0));

    Tensor single = Tensor::from_values({2, 1, 1}, {5.0, 5.0});
    Tensor single_t = Tensor::from_values({2, 1, 1}, {4.0, 8.0});
    MetricsReport same = compute_metrics(single, single_t);
    CHECK(same.horizon_mae == report.horizon_mae);
}

TEST_CASE("shape mismatch is rejected") {
    Tensor pred = Tensor::from_values({2}, {1.0, 2.0});
    Tensor target = Tensor::from_values({3}, {1.0, 2.0, 3.0});
    CHECK_THROWS_AS(compute_metrics(pred, target), std::invalid_argument);
}

TEST_CASE("historical average predicts the window mean at every horizon") {
    SUBCASE("constant input stays constant") {
        Tensor x = Tensor::full({6, 3, 1}, 7.5);
        Tensor pred = ha_baseline(x, 4);
        CHECK(pred.shape() == Shape{4, 3, 1});
        for (double v : pred.values()) CHECK(v == 7.5);
    }
    SUBCASE("1..12 ramp averages to 6.5 everywhere") {
        std::vector<double> values;
        for (int t = 1; t <= 12; ++t) {
            values.push_back(static_cast<double>(t));
            values.push_back(static_cast<double>(t));
        }
        Tensor x = Tensor::from_values({12, 2, 1}, values);
        Tensor pred = ha_baseline(x, 12);
        for (double v : pred.values()) CHECK(v == doctest::Approx(6.5).epsilon(1e-12));
    }
    SUBCASE("prediction is horizon invariant") {
        std::mt19937_64 rng(4);
        Tensor x = oracle::random_tensor({2, 6, 3, 2}, rng, 0.0, 10.0);
        Tensor pred = ha_baseline(x, 5);
        CHECK(pred.shape() == Shape{2, 5, 3, 2});
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t h = 1; h < 5; ++h)
                for (int64_t j = 0; j < 3; ++j)
                    for (int64_t c = 0; c < 2; ++c)
                        CHECK(pred.at({b, h, j, c}) == pred.at({b, 0, j, c}));
    }
    SUBCASE("batched output matches per-sample calls") {
        std::mt19937_64 rng(5);
        Tensor x = oracle::random_tensor({3, 6, 2, 1}, rng, 0.0, 10.0);
        Tensor batched = ha_baseline(x, 2);
        for (int64_t b = 0; b < 3; ++b) {
            std::vector<double> one(x.values().begin() + b * 12,
                                    x.values().begin() + (b + 1) * 12);
            Tensor single = ha_baseline(Tensor::from_values({6, 2, 1}, one), 2);
            for (int64_t h = 0; h < 2; ++h)
                for (int64_t j = 0; j < 2; ++j)
                    CHECK(batched.at({b, h, j, 0}) == single.at({h, j, 0}));
        }
    }
    SUBCASE("bad inputs") {
        CHECK_THROWS_AS(ha_baseline(Tensor::from_values({4}, {1, 2, 3, 4}), 2),
                        std::invalid_argument);
        CHECK_THROWS_AS(ha_baseline(Tensor::full({6, 3, 1}, 1.0), 0), std::invalid_argument);
    }
}

TEST_CASE("report files carry the summary and one row per horizon") {
    oracle::TempDir dir("metrics");
    std::mt19937_64 rng(6);
    Tensor pred = oracle::random_tensor({2, 3, 2, 1}, rng, 20.0, 80.0);
    Tensor target = oracle::random_tensor({2, 3, 2, 1}, rng, 20.0, 80.0);
    MetricsReport report = compute_metrics(pred, target);

    write_metrics_report(report, dir.file("metrics.txt"), dir.file("horizons.csv"));

    kv::Document doc = kv::parse_file(dir.file("metrics.txt"));
    CHECK(doc.get_double("mae") == report.mae);
    CHECK(doc.get_double("rmse") == report.rmse);
    CHECK(doc.get_double("mape_percent") == report.mape);
    CHECK(doc.get_int("entry_count") == report.entry_count);
    CHECK(doc.get_int("horizons") == 3);

    std::ifstream csv(dir.file("horizons.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "horizon,mae,rmse,mape_percent");
    int rows = 0;
    while (std::getline(csv, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 3);

    SUBCASE("undefined MAPE is spelled out") {
        MetricsReport masked = compute_metrics(Tensor::from_values({1}, {1.0}),
                                               Tensor::from_values({1}, {0.0}));
        write_metrics_report(masked, dir.file("masked.txt"), dir.file("masked.csv"));
        kv::Document m = kv::parse_file(dir.file("masked.txt"));
        CHECK(m.get("mape_percent") == "undefined");
    }
}

}  // TEST_SUITE
