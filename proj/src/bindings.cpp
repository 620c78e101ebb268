// Python module wrapping the forecasting workflow: synthetic data, windowing,
// training, evaluation, metrics, checkpoints and profile export. Tensors
// cross the boundary as copied numpy arrays.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dtmp/checkpoint.hpp"
#include "dtmp/data.hpp"
#include "dtmp/graph.hpp"
#include "dtmp/metrics.hpp"
#include "dtmp/network.hpp"
#include "dtmp/train.hpp"

namespace py = pybind11;
using namespace dtmp;

namespace {

py::array_t<double> to_array(const Tensor& tensor) {
    if (!tensor.defined()) throw std::invalid_argument("tensor is empty");
    std::vector<py::ssize_t> shape(tensor.shape().begin(), tensor.shape().end());
    py::array_t<double> out(shape);
    std::copy(tensor.values().begin(), tensor.values().end(), out.mutable_data());
    return out;
}

Tensor to_tensor(const py::array& array) {
    py::array_t<double, py::array::c_style | py::array::forcecast> dense(array);
    Shape shape(dense.ndim());
    for (py::ssize_t d = 0; d < dense.ndim(); ++d) shape[(size_t)d] = dense.shape(d);
    std::vector<double> values(dense.data(), dense.data() + dense.size());
    return Tensor::from_values(shape, values);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "adaptive spatio-temporal graph forecaster";
    m.attr("__version__") = DTMP_VERSION;

    py::enum_<Split>(m, "Split")
        .value("train", Split::train)
        .value("validation", Split::validation)
        .value("test", Split::test);

    py::enum_<Variant>(m, "Variant")
        .value("full", Variant::full)
        .value("no_coupling", Variant::no_coupling)
        .value("no_alignment", Variant::no_alignment)
        .value("no_gated_tcn", Variant::no_gated_tcn);

    py::class_<PlantedEdge>(m, "PlantedEdge")
        .def(py::init([](int64_t src, int64_t dst, int64_t lag, double weight) {
                 PlantedEdge e;
                 e.src = src;
                 e.dst = dst;
                 e.lag = lag;
                 e.weight = weight;
                 return e;
             }),
             py::arg("src"), py::arg("dst"), py::arg("lag"), py::arg("weight"))
        .def_readwrite("src", &PlantedEdge::src)
        .def_readwrite("dst", &PlantedEdge::dst)
        .def_readwrite("lag", &PlantedEdge::lag)
        .def_readwrite("weight", &PlantedEdge::weight)
        .def("__repr__", [](const PlantedEdge& e) {
            return "PlantedEdge(src=" + std::to_string(e.src) + ", dst=" + std::to_string(e.dst) +
                   ", lag=" + std::to_string(e.lag) + ", weight=" + std::to_string(e.weight) +
                   ")";
        });

    py::class_<SyntheticSpec>(m, "SyntheticSpec")
        .def(py::init<>())
        .def_readwrite("name", &SyntheticSpec::name)
        .def_readwrite("num_nodes", &SyntheticSpec::num_nodes)
        .def_readwrite("num_steps", &SyntheticSpec::num_steps)
        .def_readwrite("num_sources", &SyntheticSpec::num_sources)
        .def_readwrite("period", &SyntheticSpec::period)
        .def_readwrite("noise_level", &SyntheticSpec::noise_level)
        .def_readwrite("edges", &SyntheticSpec::edges)
        .def("validate", &SyntheticSpec::validate);

    py::class_<TrafficSeries>(m, "TrafficSeries")
        .def_readonly("name", &TrafficSeries::name)
        .def_readonly("period", &TrafficSeries::period)
        .def_readonly("steps_per_day", &TrafficSeries::steps_per_day)
        .def_property_readonly("values",
                               [](const TrafficSeries& s) { return to_array(s.values); })
        .def_property_readonly("steps", &TrafficSeries::steps)
        .def_property_readonly("nodes", &TrafficSeries::nodes);

    py::class_<SynthResult>(m, "SynthResult")
        .def_readonly("series", &SynthResult::series)
        .def_readonly("planted", &SynthResult::planted);

    py::class_<NormStats>(m, "NormStats")
        .def_readonly("mean", &NormStats::mean)
        .def_readonly("stdev", &NormStats::stdev);

    py::class_<WindowedDataset>(m, "WindowedDataset")
        .def_readonly("input_len", &WindowedDataset::input_len)
        .def_readonly("horizon", &WindowedDataset::horizon)
        .def_readonly("normalized", &WindowedDataset::normalized)
        .def_readonly("stats", &WindowedDataset::stats)
        .def_property_readonly("nodes", &WindowedDataset::nodes)
        .def("sample_count", &WindowedDataset::sample_count, py::arg("split"));

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_nodes", &ModelConfig::n_nodes)
        .def_readwrite("in_features", &ModelConfig::in_features)
        .def_readwrite("hidden", &ModelConfig::hidden)
        .def_readwrite("skip_width", &ModelConfig::skip_width)
        .def_readwrite("n_modules", &ModelConfig::n_modules)
        .def_readwrite("dilations", &ModelConfig::dilations)
        .def_readwrite("dacn_kernel", &ModelConfig::dacn_kernel)
        .def_readwrite("tcn_kernel", &ModelConfig::tcn_kernel)
        .def_readwrite("emb_dim", &ModelConfig::emb_dim)
        .def_readwrite("dropout_rate", &ModelConfig::dropout_rate)
        .def_readwrite("input_len", &ModelConfig::input_len)
        .def_readwrite("horizon", &ModelConfig::horizon)
        .def_readwrite("out_features", &ModelConfig::out_features)
        .def("validate", &ModelConfig::validate);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("model", &TrainConfig::model)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("max_epochs", &TrainConfig::max_epochs)
        .def_readwrite("patience", &TrainConfig::patience)
        .def_readwrite("grad_clip", &TrainConfig::grad_clip)
        .def_readwrite("seed", &TrainConfig::seed)
        .def("validate", &TrainConfig::validate);

    py::class_<EpochRecord>(m, "EpochRecord")
        .def_readonly("epoch", &EpochRecord::epoch)
        .def_readonly("train_loss", &EpochRecord::train_loss)
        .def_readonly("val_mae", &EpochRecord::val_mae)
        .def_readonly("val_rmse", &EpochRecord::val_rmse)
        .def_readonly("val_mape", &EpochRecord::val_mape)
        .def_readonly("wall_seconds", &EpochRecord::wall_seconds);

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_readonly("config", &Checkpoint::config)
        .def_readonly("variant", &Checkpoint::variant)
        .def_readonly("stats", &Checkpoint::stats)
        .def_readonly("best_epoch", &Checkpoint::best_epoch)
        .def_readonly("best_val_mae", &Checkpoint::best_val_mae)
        .def_property_readonly("param_names", [](const Checkpoint& c) {
            std::vector<std::string> names;
            names.reserve(c.params.size());
            for (const auto& [name, tensor] : c.params) names.push_back(name);
            return names;
        })
        .def("param", [](const Checkpoint& c, const std::string& name) {
            for (const auto& [key, tensor] : c.params)
                if (key == name) return to_array(tensor);
            throw std::out_of_range("no parameter named '" + name + "'");
        });

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("checkpoint", &TrainResult::checkpoint)
        .def_readonly("history", &TrainResult::history);

    py::class_<MetricsReport>(m, "MetricsReport")
        .def_readonly("mae", &MetricsReport::mae)
        .def_readonly("rmse", &MetricsReport::rmse)
        .def_readonly("mape", &MetricsReport::mape)
        .def_readonly("horizon_mae", &MetricsReport::horizon_mae)
        .def_readonly("horizon_rmse", &MetricsReport::horizon_rmse)
        .def_readonly("horizon_mape", &MetricsReport::horizon_mape)
        .def_readonly("entry_count", &MetricsReport::entry_count)
        .def_readonly("masked_count", &MetricsReport::masked_count)
        .def("mape_defined", &MetricsReport::mape_defined);

    py::class_<Relation>(m, "Relation")
        .def_readonly("module", &Relation::module)
        .def_readonly("shift", &Relation::shift)
        .def_readonly("node", &Relation::node)
        .def_readonly("weight", &Relation::weight);

    py::class_<ShiftedAdjacency>(m, "ShiftedAdjacency")
        .def_readonly("shift", &ShiftedAdjacency::shift)
        .def_property_readonly("matrix",
                               [](const ShiftedAdjacency& a) { return to_array(a.matrix); });

    py::class_<GraphBank>(m, "GraphBank").def_readonly("graphs", &GraphBank::graphs);

    py::class_<EmbeddingPair>(m, "EmbeddingPair")
        .def_property_readonly("e1", [](const EmbeddingPair& p) { return to_array(p.e1); })
        .def_property_readonly("e2", [](const EmbeddingPair& p) { return to_array(p.e2); });

    py::class_<ProfileExport>(m, "ProfileExport")
        .def_readonly("node_id", &ProfileExport::node_id)
        .def_readonly("top_k", &ProfileExport::top_k)
        .def_readonly("module_pairs", &ProfileExport::module_pairs)
        .def_readonly("module_graphs", &ProfileExport::module_graphs)
        .def_readonly("top_relations", &ProfileExport::top_relations);

    m.def("default_synthetic_spec", &default_synthetic_spec,
          "Standard 12-node planted-lag benchmark spec");
    m.def("synth_generate", &synth_generate, py::arg("spec"), py::arg("seed"),
          "Generate a seeded synthetic traffic series with planted lagged edges");
    m.def(
        "split_and_window",
        [](const TrafficSeries& series, int64_t input_len, int64_t horizon) {
            return split_and_window(series, input_len, horizon);
        },
        py::arg("series"), py::arg("input_len"), py::arg("horizon"),
        "Chronological 60/20/20 split plus sliding windows");
    m.def("normalize", &normalize, py::arg("dataset"),
          "Per-node standardization fitted on the training split, in place");
    m.def(
        "train",
        [](const TrainConfig& config, const WindowedDataset& dataset, Variant variant) {
            return train(config, dataset, variant);
        },
        py::arg("config"), py::arg("dataset"), py::arg("variant") = Variant::full,
        py::call_guard<py::gil_scoped_release>(),
        "Seeded training; returns the best checkpoint and the epoch history");
    m.def("evaluate", &evaluate, py::arg("checkpoint"), py::arg("dataset"), py::arg("split"),
          py::call_guard<py::gil_scoped_release>(),
          "Metrics for a checkpoint on one split, in original units");
    m.def("evaluate_ha", &evaluate_ha, py::arg("dataset"), py::arg("split"),
          "Historical-average baseline metrics on the same windows");
    m.def("export_profiles", &export_profiles, py::arg("checkpoint"), py::arg("node_id"),
          py::arg("top_k"), "Regenerate every module's graphs and rank a node's relations");
    m.def(
        "compute_metrics",
        [](const py::array& pred, const py::array& target) {
            return compute_metrics(to_tensor(pred), to_tensor(target));
        },
        py::arg("pred"), py::arg("target"), "MAE, RMSE and masked MAPE of a forecast");
    m.def(
        "generate_graph",
        [](const py::array& e1, const py::array& e2) {
            EmbeddingPair pair;
            pair.e1 = to_tensor(e1);
            pair.e2 = to_tensor(e2);
            return to_array(generate_graph(pair));
        },
        py::arg("e1"), py::arg("e2"),
        "Right-stochastic adjacency induced by an embedding pair");
    m.def(
        "save_checkpoint",
        [](const Checkpoint& ckpt, const std::string& manifest_path,
           const std::string& blob_path) { save_checkpoint(ckpt, manifest_path, blob_path); },
        py::arg("checkpoint"), py::arg("manifest_path"), py::arg("blob_path"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("manifest_path"));
}
