#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <variant>

#include "ftnn/augment.hpp"
#include "ftnn/baseline.hpp"
#include "ftnn/error.hpp"
#include "ftnn/experiment.hpp"
#include "ftnn/forward_thinking.hpp"
#include "ftnn/mnist.hpp"
#include "ftnn/model_io.hpp"
#include "ftnn/trainer.hpp"

namespace py = pybind11;
using namespace ftnn;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<long, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_numpy(const DoubleArray& arr) {
    std::vector<std::size_t> shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<std::size_t>(i)] = arr.shape(i);
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor(std::move(shape), std::move(data));
}

DoubleArray numpy_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    DoubleArray arr(shape);
    std::memcpy(arr.mutable_data(), t.data(), t.size() * sizeof(double));
    return arr;
}

std::vector<int> labels_from_numpy(const IntArray& arr) {
    std::vector<int> out(arr.size());
    for (py::ssize_t i = 0; i < arr.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(arr.data()[i]);
    return out;
}

Dataset dataset_from_numpy(const DoubleArray& x, const IntArray& y, int n_classes) {
    return Dataset(tensor_from_numpy(x), labels_from_numpy(y), n_classes);
}

py::list metrics_to_list(const std::vector<PhaseMetrics>& phases) {
    py::list out;
    for (const PhaseMetrics& pm : phases) {
        for (const EpochMetrics& em : pm.epochs) {
            py::dict row;
            row["phase"] = pm.phase;
            row["stage"] = pm.stage;
            row["epoch"] = em.epoch;
            row["train_loss"] = em.train_loss;
            row["train_acc"] = em.train_accuracy;
            row["val_acc"] = em.val_accuracy;
            row["test_acc"] = em.test_accuracy;
            row["wall_seconds"] = em.wall_seconds;
            out.append(row);
        }
    }
    return out;
}

py::list epochs_to_list(const std::vector<EpochMetrics>& epochs, const char* phase) {
    std::vector<PhaseMetrics> wrap{{phase, 0, epochs}};
    return metrics_to_list(wrap);
}

/// Model handle shared by the greedy and end-to-end pipelines.
struct PyModel {
    std::variant<StackedModel, DeepNet> model;

    std::string kind() const { return std::holds_alternative<StackedModel>(model) ? "stacked" : "deep"; }

    DoubleArray proba(const DoubleArray& x) const {
        const Tensor xt = tensor_from_numpy(x);
        if (const auto* stacked = std::get_if<StackedModel>(&model)) {
            return numpy_from_tensor(predict_proba(*stacked, xt));
        }
        return numpy_from_tensor(deep_probs(std::get<DeepNet>(model), xt));
    }

    py::array_t<long> predict_labels(const DoubleArray& x) const {
        const Tensor xt = tensor_from_numpy(x);
        std::vector<int> labels;
        if (const auto* stacked = std::get_if<StackedModel>(&model)) {
            labels = predict(*stacked, xt);
        } else {
            labels = argmax_rows(deep_probs(std::get<DeepNet>(model), xt));
        }
        py::array_t<long> out(static_cast<py::ssize_t>(labels.size()));
        for (std::size_t i = 0; i < labels.size(); ++i) out.mutable_data()[i] = labels[i];
        return out;
    }

    double accuracy(const DoubleArray& x, const IntArray& y, int n_classes) const {
        const Dataset data = dataset_from_numpy(x, y, n_classes);
        if (const auto* stacked = std::get_if<StackedModel>(&model)) return evaluate(*stacked, data);
        return deep_accuracy(std::get<DeepNet>(model), data);
    }

    void save(const std::string& path) const {
        if (const auto* stacked = std::get_if<StackedModel>(&model)) {
            save_model(*stacked, path);
        } else {
            save_model(std::get<DeepNet>(model), path);
        }
    }

    static PyModel load(const std::string& path) {
        LoadedModel loaded = load_model(path);
        return PyModel{std::move(loaded.model)};
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "greedy layer-wise (forward thinking) network training core";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseFailure", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init([](double learning_rate, double momentum, std::size_t batch_size, std::size_t epochs,
                         double l2, std::uint64_t seed) {
                 TrainConfig cfg;
                 cfg.learning_rate = learning_rate;
                 cfg.momentum = momentum;
                 cfg.batch_size = batch_size;
                 cfg.epochs = epochs;
                 cfg.l2_coefficient = l2;
                 cfg.seed = seed;
                 validate(cfg);
                 return cfg;
             }),
             py::arg("learning_rate") = 0.1, py::arg("momentum") = 0.9, py::arg("batch_size") = 128,
             py::arg("epochs") = 10, py::arg("l2") = 0.0, py::arg("seed") = 0)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("momentum", &TrainConfig::momentum)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("l2", &TrainConfig::l2_coefficient)
        .def_readwrite("seed", &TrainConfig::seed);

    py::class_<StoppingPolicy>(m, "StoppingPolicy")
        .def(py::init([](double min_improvement, std::size_t patience, std::size_t max_stages) {
                 StoppingPolicy p;
                 p.min_improvement = min_improvement;
                 p.patience = patience;
                 if (max_stages > 0) p.max_stages = max_stages;
                 return p;
             }),
             py::arg("min_improvement") = 0.001, py::arg("patience") = 1, py::arg("max_stages") = 0)
        .def_readwrite("min_improvement", &StoppingPolicy::min_improvement)
        .def_readwrite("patience", &StoppingPolicy::patience)
        .def_readwrite("max_stages", &StoppingPolicy::max_stages);

    py::class_<StageSpec>(m, "StageSpec");

    m.def(
        "dense_stage",
        [](std::size_t width, double dropout, std::size_t fc_width, double fc_dropout, const TrainConfig& train) {
            StageSpec spec;
            spec.kind = StageSpec::Dense{width};
            spec.stage_dropout = dropout;
            spec.head_hidden_width = fc_width;
            spec.fc_dropout = fc_dropout;
            spec.train = train;
            return spec;
        },
        py::arg("width"), py::arg("dropout") = 0.0, py::arg("fc_width") = 0, py::arg("fc_dropout") = 0.0,
        py::arg("train") = TrainConfig{});

    m.def(
        "conv_stage",
        [](std::size_t filters, bool pool, std::size_t fc_width, double dropout, double fc_dropout,
           const TrainConfig& train) {
            StageSpec spec;
            spec.kind = StageSpec::Conv{filters, pool};
            spec.head_hidden_width = fc_width;
            spec.stage_dropout = dropout;
            spec.fc_dropout = fc_dropout;
            spec.train = train;
            return spec;
        },
        py::arg("filters"), py::arg("pool") = true, py::arg("fc_width") = 64, py::arg("dropout") = 0.0,
        py::arg("fc_dropout") = 0.0, py::arg("train") = TrainConfig{});

    py::class_<PyModel>(m, "Model")
        .def_property_readonly("kind", &PyModel::kind)
        .def("predict", &PyModel::predict_labels, py::arg("x"))
        .def("predict_proba", &PyModel::proba, py::arg("x"))
        .def("evaluate", &PyModel::accuracy, py::arg("x"), py::arg("y"), py::arg("n_classes"))
        .def("save", &PyModel::save, py::arg("path"))
        .def_static("load", &PyModel::load, py::arg("path"));

    m.def(
        "matmul",
        [](const DoubleArray& a, const DoubleArray& b) {
            return numpy_from_tensor(matmul(tensor_from_numpy(a), tensor_from_numpy(b)));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "synth_xor",
        [](std::size_t n, double noise, std::uint64_t seed) {
            const Dataset data = synth_xor(n, noise, seed);
            py::array_t<long> y(static_cast<py::ssize_t>(data.size()));
            for (std::size_t i = 0; i < data.size(); ++i) y.mutable_data()[i] = data.labels()[i];
            return py::make_tuple(numpy_from_tensor(data.features_tensor()), y);
        },
        py::arg("n"), py::arg("noise"), py::arg("seed") = 0);

    m.def(
        "load_mnist",
        [](const std::string& images_path, const std::string& labels_path, const std::string& layout) {
            const RawDataset raw = load_idx(images_path, labels_path);
            const Dataset data = normalize(raw, layout == "flat" ? Layout::flat : Layout::image, 10);
            py::array_t<long> y(static_cast<py::ssize_t>(data.size()));
            for (std::size_t i = 0; i < data.size(); ++i) y.mutable_data()[i] = data.labels()[i];
            return py::make_tuple(numpy_from_tensor(data.features_tensor()), y);
        },
        py::arg("images_path"), py::arg("labels_path"), py::arg("layout") = "flat");

    m.def(
        "augment",
        [](const DoubleArray& x, const IntArray& y, int n_classes, std::size_t copies, int max_shift_px,
           double max_rotation_deg, double scale_lo, double scale_hi, std::uint64_t seed) {
            AugmentConfig cfg;
            cfg.copies_per_image = copies;
            cfg.max_shift_px = max_shift_px;
            cfg.max_rotation_deg = max_rotation_deg;
            cfg.scale_lo = scale_lo;
            cfg.scale_hi = scale_hi;
            cfg.seed = seed;
            const Dataset out = augment(dataset_from_numpy(x, y, n_classes), cfg);
            py::array_t<long> labels(static_cast<py::ssize_t>(out.size()));
            for (std::size_t i = 0; i < out.size(); ++i) labels.mutable_data()[i] = out.labels()[i];
            return py::make_tuple(numpy_from_tensor(out.features_tensor()), labels);
        },
        py::arg("x"), py::arg("y"), py::arg("n_classes"), py::arg("copies") = 1, py::arg("max_shift_px") = 2,
        py::arg("max_rotation_deg") = 15.0, py::arg("scale_lo") = 0.9, py::arg("scale_hi") = 1.1,
        py::arg("seed") = 0);

    m.def(
        "train_forward_thinking",
        [](const DoubleArray& x, const IntArray& y, const DoubleArray& xv, const IntArray& yv, int n_classes,
           const std::vector<StageSpec>& schedule, const StoppingPolicy& policy, const TrainConfig& head) {
            const Dataset train = dataset_from_numpy(x, y, n_classes);
            const Dataset val = dataset_from_numpy(xv, yv, n_classes);
            ForwardThinkingResult res = train_forward_thinking(train, val, schedule, policy, head);
            return py::make_tuple(PyModel{std::move(res.model)}, metrics_to_list(res.phases));
        },
        py::arg("x"), py::arg("y"), py::arg("x_val"), py::arg("y_val"), py::arg("n_classes"),
        py::arg("schedule"), py::arg("policy") = StoppingPolicy{}, py::arg("head_train") = TrainConfig{});

    m.def(
        "train_forward_thinking_conv",
        [](const DoubleArray& x, const IntArray& y, const DoubleArray& xv, const IntArray& yv, int n_classes,
           const std::vector<StageSpec>& schedule, const StoppingPolicy& policy) {
            const Dataset train = dataset_from_numpy(x, y, n_classes);
            const Dataset val = dataset_from_numpy(xv, yv, n_classes);
            ForwardThinkingResult res = train_forward_thinking_conv(train, val, schedule, policy);
            return py::make_tuple(PyModel{std::move(res.model)}, metrics_to_list(res.phases));
        },
        py::arg("x"), py::arg("y"), py::arg("x_val"), py::arg("y_val"), py::arg("n_classes"),
        py::arg("schedule"), py::arg("policy") = StoppingPolicy{});

    m.def(
        "train_backprop",
        [](const DoubleArray& x, const IntArray& y, const DoubleArray& xv, const IntArray& yv, int n_classes,
           const std::vector<StageSpec>& schedule, std::size_t final_fc_width, double final_fc_dropout,
           const TrainConfig& train_cfg, std::uint64_t init_seed) {
            const Dataset train = dataset_from_numpy(x, y, n_classes);
            const Dataset val = dataset_from_numpy(xv, yv, n_classes);
            DeepNet net = make_deep_net(schedule, final_fc_width, final_fc_dropout, train.sample_shape(),
                                        n_classes, init_seed);
            const auto epochs = train_backprop(net, train, val, train_cfg);
            return py::make_tuple(PyModel{std::move(net)}, epochs_to_list(epochs, "backprop"));
        },
        py::arg("x"), py::arg("y"), py::arg("x_val"), py::arg("y_val"), py::arg("n_classes"),
        py::arg("schedule"), py::arg("final_fc_width") = 0, py::arg("final_fc_dropout") = 0.0,
        py::arg("train") = TrainConfig{}, py::arg("init_seed") = 0);

    m.def("grad_check_dense", &grad_check_dense_preset, py::arg("seed") = 0, py::arg("corrupt_delta") = 0.0);
    m.def("grad_check_conv", &grad_check_conv_preset, py::arg("seed") = 0, py::arg("corrupt_delta") = 0.0);

    m.def(
        "run_experiment",
        [](const std::string& config_json) {
            const ExperimentConfig cfg = parse_experiment_config(config_json);
            const ExperimentResult res = run_experiment(cfg);
            py::dict out;
            out["final_val_accuracy"] = res.final_val_accuracy;
            out["final_test_accuracy"] = res.final_test_accuracy;
            out["metrics_path"] = res.metrics_path;
            out["model_path"] = res.model_path;
            out["config_echo_path"] = res.config_echo_path;
            return out;
        },
        py::arg("config_json"));

#ifdef VERSION_INFO
#define FTNN_STR_INNER(x) #x
#define FTNN_STR(x) FTNN_STR_INNER(x)
    m.attr("__version__") = FTNN_STR(VERSION_INFO);
#else
    m.attr("__version__") = "dev";
#endif
}
