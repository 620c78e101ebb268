#include "dtmp/metrics.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "dtmp/kvfile.hpp"

namespace dtmp {

namespace {

struct Accumulator {
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    double ape_sum = 0.0;
    int64_t count = 0;
    int64_t mape_count = 0;

    void add(double pred, double target, double mask_epsilon) {
        double err = pred - target;
        abs_sum += std::abs(err);
        sq_sum += err * err;
        ++count;
        if (std::abs(target) > mask_epsilon) {
            ape_sum += std::abs(err) / std::abs(target);
            ++mape_count;
        }
    }

    double mae() const { return count ? abs_sum / static_cast<double>(count) : 0.0; }
    double rmse() const { return count ? std::sqrt(sq_sum / static_cast<double>(count)) : 0.0; }
    double mape() const {
        if (!mape_count) return std::numeric_limits<double>::quiet_NaN();
        return 100.0 * ape_sum / static_cast<double>(mape_count);
    }
};

}  // namespace

bool MetricsReport::mape_defined() const { return !std::isnan(mape); }

MetricsReport compute_metrics(const Tensor& pred, const Tensor& target, double mask_epsilon) {
    if (!pred.defined() || !target.defined()) {
        throw std::invalid_argument("compute_metrics needs defined tensors");
    }
    if (pred.shape() != target.shape()) {
        throw std::invalid_argument("prediction shape " + shape_to_string(pred.shape()) +
                                    " does not match target shape " +
                                    shape_to_string(target.shape()));
    }
    if (!(mask_epsilon >= 0.0)) {
        throw std::invalid_argument("mask epsilon must be non-negative");
    }

    // horizon slices: axis 1 for batched output, axis 0 for one sample
    int64_t horizon = 1;
    int64_t lead = 1;
    int64_t slice = pred.numel();
    if (pred.rank() == 4) {
        lead = pred.dim(0);
        horizon = pred.dim(1);
        slice = pred.dim(2) * pred.dim(3);
    } else if (pred.rank() == 3) {
        horizon = pred.dim(0);
        slice = pred.dim(1) * pred.dim(2);
    }

    Accumulator overall;
    std::vector<Accumulator> per_horizon(static_cast<size_t>(horizon));
    const std::vector<double>& p = pred.values();
    const std::vector<double>& y = target.values();
    for (int64_t b = 0; b < lead; ++b) {
        for (int64_t h = 0; h < horizon; ++h) {
            int64_t offset = (b * horizon + h) * slice;
            for (int64_t i = 0; i < slice; ++i) {
                double pv = p[static_cast<size_t>(offset + i)];
                double yv = y[static_cast<size_t>(offset + i)];
                overall.add(pv, yv, mask_epsilon);
                per_horizon[static_cast<size_t>(h)].add(pv, yv, mask_epsilon);
            }
        }
    }

    MetricsReport report;
    report.mae = overall.mae();
    report.rmse = overall.rmse();
    report.mape = overall.mape();
    report.entry_count = overall.count;
    report.masked_count = overall.count - overall.mape_count;
    for (const Accumulator& acc : per_horizon) {
        report.horizon_mae.push_back(acc.mae());
        report.horizon_rmse.push_back(acc.rmse());
        report.horizon_mape.push_back(acc.mape());
    }
    return report;
}

Tensor ha_baseline(const Tensor& x_window, int64_t horizon) {
    if (!x_window.defined() || (x_window.rank() != 3 && x_window.rank() != 4)) {
        throw std::invalid_argument("ha_baseline expects (T,N,C) or (B,T,N,C) input");
    }
    if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");

    bool batched = x_window.rank() == 4;
    int64_t lead = batched ? x_window.dim(0) : 1;
    int64_t steps = x_window.dim(batched ? 1 : 0);
    int64_t rest = x_window.dim(batched ? 2 : 1) * x_window.dim(batched ? 3 : 2);

    Shape out_shape = x_window.shape();
    out_shape[batched ? 1 : 0] = horizon;
    Tensor out = Tensor::zeros(out_shape);
    const std::vector<double>& in = x_window.values();
    std::vector<double>& data = out.mutable_values();
    for (int64_t b = 0; b < lead; ++b) {
        for (int64_t i = 0; i < rest; ++i) {
            double sum = 0.0;
            for (int64_t t = 0; t < steps; ++t) {
                sum += in[static_cast<size_t>((b * steps + t) * rest + i)];
            }
            double mean = sum / static_cast<double>(steps);
            for (int64_t h = 0; h < horizon; ++h) {
                data[static_cast<size_t>((b * horizon + h) * rest + i)] = mean;
            }
        }
    }
    return out;
}

void write_metrics_report(const MetricsReport& report, const std::string& summary_path,
                          const std::string& horizons_csv_path) {
    kv::Document doc;
    doc.set_double("mae", report.mae);
    doc.set_double("rmse", report.rmse);
    doc.set("mape_percent", report.mape_defined() ? kv::format_double(report.mape) : "undefined");
    doc.set_int("entry_count", report.entry_count);
    doc.set_int("masked_count", report.masked_count);
    doc.set_int("horizons", static_cast<int64_t>(report.horizon_mae.size()));
    kv::write_file(doc, summary_path);

    std::ofstream csv(horizons_csv_path);
    if (!csv) throw std::runtime_error("cannot write horizon metrics to " + horizons_csv_path);
    csv << "horizon,mae,rmse,mape_percent\n";
    for (size_t h = 0; h < report.horizon_mae.size(); ++h) {
        csv << (h + 1) << ',' << kv::format_double(report.horizon_mae[h]) << ','
            << kv::format_double(report.horizon_rmse[h]) << ',';
        if (std::isnan(report.horizon_mape[h])) {
            csv << "undefined";
        } else {
            csv << kv::format_double(report.horizon_mape[h]);
        }
        csv << '\n';
    }
    if (!csv) throw std::runtime_error("write failed for " + horizons_csv_path);
}

}  // namespace dtmp
