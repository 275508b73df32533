#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <numeric>

#include "trafficdtl/energy.hpp"
#include "trafficdtl/error.hpp"
#include "trafficdtl/experiment.hpp"
#include "trafficdtl/io.hpp"
#include "trafficdtl/runtime.hpp"
#include "trafficdtl/svr.hpp"
#include "trafficdtl/synth.hpp"
#include "trafficdtl/transfer.hpp"
#include "trafficdtl/xai.hpp"

namespace py = pybind11;
using namespace trafficdtl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(s), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> s(t.shape().begin(), t.shape().end());
  Array out(s);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// Windows supplied from Python carry no series bookkeeping; rows are numbered in order.
WindowedDataset dataset(const Array& X, const Array& Y) {
  WindowedDataset d;
  d.X = to_tensor(X);
  d.Y = to_tensor(Y);
  if (d.X.rank() != 3 || d.Y.rank() != 2 || d.X.dim(0) != d.Y.dim(0))
    throw ShapeError("expected X [N,p,m] and Y [N,q] with matching N");
  d.p = d.X.dim(1);
  d.last_row.resize(d.X.dim(0));
  std::iota(d.last_row.begin(), d.last_row.end(), std::size_t{0});
  d.target_row = d.last_row;
  d.target_time.assign(d.last_row.begin(), d.last_row.end());
  return d;
}

TrainConfig train_config(const ModelGraph& m, std::size_t epochs, std::size_t batch, std::size_t patience,
                         double lr, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch ? batch : TrainConfig::default_batch(m.arch());
  c.patience = patience;
  c.optimizer.learning_rate = lr;
  c.seed = seed;
  return c;
}

py::dict train_summary(const TrainResult& r) {
  py::dict d;
  d["mse"] = r.eval.mse;
  d["per_output_mse"] = r.eval.per_output_mse;
  d["epochs_used"] = r.eval.epochs_used;
  d["best_epoch"] = r.best_epoch;
  d["wall_time"] = r.eval.wall_time;
  py::list hist;
  for (const auto& e : r.history) hist.append(py::make_tuple(e.epoch, e.train_loss, e.validation_mse));
  d["history"] = hist;
  return d;
}

py::dict series_dict(const SiteSeries& s) {
  py::dict d;
  d["timestamps"] = py::array_t<std::int64_t>(static_cast<py::ssize_t>(s.timestamps.size()), s.timestamps.data());
  d["inputs"] = to_array(s.inputs);
  d["targets"] = to_array(s.targets);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  configure_allocator();
  m.doc() = "Traffic forecasting with deep transfer learning: C++ core";

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<NumericalError> numerical_error(m, "NumericalError", PyExc_ArithmeticError);
  static py::exception<ConvergenceError> convergence_error(m, "ConvergenceError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(config_error.ptr(), e.what());
    } catch (const NumericalError& e) {
      PyErr_SetString(numerical_error.ptr(), e.what());
    } catch (const ConvergenceError& e) {
      PyErr_SetString(convergence_error.ptr(), e.what());
    }
  });

  py::class_<ModelGraph>(m, "Model")
      .def_property_readonly("arch", [](const ModelGraph& g) { return std::string(arch_name(g.arch())); })
      .def_property_readonly("window", &ModelGraph::window)
      .def_property_readonly("features", &ModelGraph::features)
      .def_property_readonly("outputs", &ModelGraph::outputs)
      .def("param_count", &ModelGraph::param_count)
      .def("trainable_param_count", &ModelGraph::trainable_param_count)
      .def("layer_names",
           [](const ModelGraph& g) {
             std::vector<std::string> names;
             for (std::size_t i = 0; i < g.layer_count(); ++i) names.push_back(g.layer(i).name());
             return names;
           })
      .def("summary", [](const ModelGraph& g) { return g.summary().dump(); })
      .def(
          "predict", [](const ModelGraph& g, const Array& X) { return to_array(g.predict(to_tensor(X))); },
          py::arg("windows"))
      .def(
          "save", [](const ModelGraph& g, const std::filesystem::path& stem) { save_model(stem, g); },
          py::arg("stem"))
      .def("copy", [](const ModelGraph& g) { return ModelGraph(g); });

  m.def(
      "build_model",
      [](const std::string& arch, std::size_t p, std::uint64_t seed) {
        return parse_arch(arch) == Arch::rnn ? build_rnn(p, 5, 5, {}, seed) : build_cnn(p, 5, 5, {}, seed);
      },
      py::arg("arch"), py::arg("p"), py::arg("seed") = 0);
  m.def("load_model", [](const std::filesystem::path& stem) { return load_model(stem); }, py::arg("stem"));

  m.def(
      "generate_site",
      [](const std::string& profile, std::uint64_t seed) {
        return series_dict(to_series(generate(builtin_profile(profile), seed)));
      },
      py::arg("profile"), py::arg("seed") = 1);

  m.def(
      "prepare",
      [](const std::string& profile, std::uint64_t seed, std::size_t p, std::size_t dn, double train_days) {
        const PreparedData d = prepare(to_series(generate(builtin_profile(profile), seed)), p, dn, train_days);
        return py::make_tuple(to_array(d.train.X), to_array(d.train.Y), to_array(d.validation.X),
                              to_array(d.validation.Y));
      },
      py::arg("profile"), py::arg("seed"), py::arg("p"), py::arg("dn"), py::arg("train_days") = 6.0,
      "Returns (X_train, Y_train, X_val, Y_val) normalized windows for a shipped profile.");

  m.def(
      "train",
      [](ModelGraph& model, const Array& Xt, const Array& Yt, const Array& Xv, const Array& Yv, std::size_t epochs,
         std::size_t batch, std::size_t patience, double lr, std::uint64_t seed) {
        const auto tr = dataset(Xt, Yt), va = dataset(Xv, Yv);
        py::gil_scoped_release release;
        TrainResult r = train(model, tr, va, train_config(model, epochs, batch, patience, lr, seed));
        py::gil_scoped_acquire acquire;
        return train_summary(r);
      },
      py::arg("model"), py::arg("X_train"), py::arg("Y_train"), py::arg("X_val"), py::arg("Y_val"),
      py::arg("epochs") = 30, py::arg("batch_size") = 0, py::arg("patience") = 5, py::arg("learning_rate") = 1e-3,
      py::arg("seed") = 0);

  m.def(
      "transfer",
      [](const ModelGraph& teacher, const Array& Xt, const Array& Yt, const Array& Xv, const Array& Yv,
         const std::string& mask, std::size_t epochs, std::size_t batch, std::size_t patience, double lr,
         std::uint64_t seed) {
        const auto tr = dataset(Xt, Yt), va = dataset(Xv, Yv);
        const FreezeMask fm = FreezeMask::from_label(teacher, mask);
        TransferResult r = transfer(teacher, tr, va, fm, train_config(teacher, epochs, batch, patience, lr, seed));
        return py::make_tuple(std::move(r.student), train_summary(r.train));
      },
      py::arg("teacher"), py::arg("X_train"), py::arg("Y_train"), py::arg("X_val"), py::arg("Y_val"),
      py::arg("mask"), py::arg("epochs") = 30, py::arg("batch_size") = 0, py::arg("patience") = 5,
      py::arg("learning_rate") = 1e-3, py::arg("seed") = 0);

  m.def("masks", [](const ModelGraph& model) {
    std::vector<std::string> labels;
    for (const auto& mk : all_masks(model)) labels.push_back(mk.label);
    return labels;
  });

  m.def(
      "smoothgrad",
      [](const ModelGraph& model, const Array& x, std::size_t output, std::size_t samples, double sigma,
         std::uint64_t seed) {
        SmoothGradOptions o;
        o.samples = samples;
        o.sigma = sigma;
        o.seed = seed;
        return to_array(smoothgrad(model, to_tensor(x), output, o));
      },
      py::arg("model"), py::arg("window"), py::arg("output"), py::arg("samples") = 50, py::arg("sigma") = 0.1,
      py::arg("seed") = 0);

  m.def(
      "lrp",
      [](const ModelGraph& model, const Array& x, std::size_t output) {
        const LrpResult r = lrp(model, to_tensor(x), output);
        py::list layers;
        for (const auto& s : r.layers) {
          py::dict d;
          d["layer"] = s.layer;
          d["relevance_out"] = s.relevance_out;
          d["relevance_in"] = s.relevance_in;
          d["bias"] = s.bias;
          d["stabilizer"] = s.stabilizer;
          d["absorbed"] = s.absorbed;
          layers.append(d);
        }
        return py::make_tuple(to_array(r.map), r.output, layers);
      },
      py::arg("model"), py::arg("window"), py::arg("output"));

  m.def(
      "svr_fit_predict",
      [](const Array& X, const Array& y, const Array& Xq, double C, double epsilon, double gamma) {
        SvrParams p;
        p.C = C;
        p.epsilon = epsilon;
        p.gamma = gamma;
        const Tensor xt = to_tensor(X);
        std::vector<double> yv(y.data(), y.data() + y.size());
        SvrFitInfo info;
        const SvrModel model = svr_fit(xt, yv, p, &info);
        const std::vector<double> pred = model.predict(to_tensor(Xq));
        return py::make_tuple(py::array_t<double>(static_cast<py::ssize_t>(pred.size()), pred.data()),
                              model.support_count(), info.objective);
      },
      py::arg("X"), py::arg("y"), py::arg("X_query"), py::arg("C") = 1.0, py::arg("epsilon") = 0.1,
      py::arg("gamma") = 0.0);

  m.def(
      "energy_wh",
      [](double seconds, const std::string& power_json) {
        return energy_wh(seconds, power_json.empty() ? PowerModel{} : PowerModel::from_json(nlohmann::json::parse(power_json)));
      },
      py::arg("wall_time"), py::arg("power_json") = "");
  m.def("savings_percent", &savings_percent, py::arg("baseline_wh"), py::arg("energy_wh"));
  m.def("format_percent", &format_percent, py::arg("percent"));

  m.def(
      "run",
      [](const std::string& command, const std::string& config_json) {
        ExperimentConfig cfg = ExperimentConfig::from_json(nlohmann::json::parse(config_json));
        cfg.validate();
        py::gil_scoped_release release;
        if (command == "generate") return run_generate(cfg).size();
        if (command == "train") return run_train(cfg);
        if (command == "transfer") return run_transfer(cfg);
        if (command == "svr") return run_svr(cfg);
        if (command == "explain") return run_explain(cfg).size();
        if (command == "energy") {
          run_energy(cfg);
          return std::size_t{1};
        }
        if (command == "report") return run_report(cfg).size();
        throw ConfigError("unknown command '" + command + "'");
      },
      py::arg("command"), py::arg("config_json"),
      "Runs one pipeline stage from a JSON config. Returns the number of runs or files produced.");
}
