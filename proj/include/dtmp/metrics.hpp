#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dtmp/tensor.hpp"

namespace dtmp {

// Forecast quality summary. MAPE is NaN when every entry was masked; the
// masked count says how many entries fell under the epsilon threshold.
struct MetricsReport {
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;
    std::vector<double> horizon_mae;
    std::vector<double> horizon_rmse;
    std::vector<double> horizon_mape;
    int64_t entry_count = 0;
    int64_t masked_count = 0;

    bool mape_defined() const;
};

// pred and target share a shape; the horizon axis is 1 for (B,T',N,C)
// batches, 0 for single (T',N,C) samples, and collapses to one slice for
// plain vectors or matrices. Values are expected in original units.
MetricsReport compute_metrics(const Tensor& pred, const Tensor& target,
                              double mask_epsilon = 1e-3);

// Historical-average predictor: every horizon step is the mean of the input
// window, per node and channel. Accepts (T,N,C) or (B,T,N,C).
Tensor ha_baseline(const Tensor& x_window, int64_t horizon);

void write_metrics_report(const MetricsReport& report, const std::string& summary_path,
                          const std::string& horizons_csv_path);

}  // namespace dtmp
