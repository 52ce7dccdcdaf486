// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "civet/certify.hpp"
#include "civet/errors.hpp"
#include "civet/selftest.hpp"
#include "civet/training.hpp"

namespace py = pybind11;
using namespace civet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_civet, m) {
  m.doc() = "Certified VAE training and evaluation";

  py::register_exception<Error>(m, "CivetError");
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("std_normal_cdf", &std_normal_cdf);
  m.def("std_normal_icdf", &std_normal_icdf);
  m.def(
      "find_support_1d",
      [](double mu_lb, double mu_ub, double sigma_ub, double target) {
        const Support1d s = find_support_1d(mu_lb, mu_ub, sigma_ub, target);
        return py::make_tuple(s.lower, s.upper);
      },
      py::arg("mu_lb"), py::arg("mu_ub"), py::arg("sigma_ub"), py::arg("target"),
      "Smallest symmetric interval holding `target` mass for every mean in [mu_lb, mu_ub].");
  m.def("schedule_weights", [](std::vector<double> deltas) {
    return DeltaSchedule(std::move(deltas)).weights();
  });
  m.def("snr", [](const Array& h, const Array& gt) { return snr(to_tensor(h), to_tensor(gt)); });

  m.def(
      "synthetic_dataset",
      [](std::size_t n, std::size_t d_in, std::uint64_t seed) {
        return to_array(synthetic_dataset(n, d_in, seed).examples);
      },
      py::arg("n"), py::arg("d_in") = 8, py::arg("seed") = 1);
  m.def("load_idx", [](const std::filesystem::path& p) { return to_array(load_idx(p).examples); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_property(
          "method", [](const TrainConfig& c) { return method_name(c.method); },
          [](TrainConfig& c, const std::string& s) { c.method = parse_method(s); })
      .def_property(
          "optimizer", [](const TrainConfig& c) { return optimizer_name(c.optimizer); },
          [](TrainConfig& c, const std::string& s) { c.optimizer = parse_optimizer(s); })
      .def_readwrite("epsilon", &TrainConfig::epsilon)
      .def_readwrite("deltas", &TrainConfig::deltas)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("warmup_standard_iters", &TrainConfig::warmup_standard_iters)
      .def_readwrite("warmup_ramp_iters", &TrainConfig::warmup_ramp_iters)
      .def_readwrite("pgd_steps", &TrainConfig::pgd_steps)
      .def_readwrite("sabr_tau", &TrainConfig::sabr_tau)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("beta", &TrainConfig::beta)
      .def_readwrite("civet_weight", &TrainConfig::civet_weight)
      .def("validate", &TrainConfig::validate);

  py::class_<Model>(m, "Model")
      .def_static(
          "create",
          [](const std::string& preset, std::uint64_t seed) {
            return Model::create(preset_architecture(preset), seed);
          },
          py::arg("preset") = "synthetic", py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
      .def("save", [](const Model& model, const std::filesystem::path& p) {
        save_checkpoint(model, p);
      })
      .def_property_readonly("architecture",
                             [](const Model& model) { return architecture_to_json(model.arch); })
      .def_property_readonly("checksum", [](const Model& model) { return model.params.checksum(); })
      .def("encode",
           [](const Model& model, const Array& x) {
             const LatentDistribution d = encode(model, to_tensor(x));
             return py::make_tuple(to_array(d.mu), to_array(d.sigma));
           })
      .def("decode",
           [](const Model& model, const Array& z) { return to_array(decode(model, to_tensor(z))); });

  m.def(
      "train",
      [](const TrainConfig& config, const Array& data, const std::string& preset) {
        Dataset ds;
        ds.examples = to_tensor(data);
        ds.example_shape = Shape{ds.examples.dim(1)};
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(config, ds, preset_architecture(preset));
        }
        py::list log;
        for (const auto& row : r.log) {
          py::dict d;
          d["epoch"] = row.epoch;
          d["iter"] = row.iter;
          d["std_loss"] = row.std_loss;
          d["civet_loss"] = row.civet_loss;
          d["epsilon_current"] = row.epsilon_current;
          log.append(d);
        }
        return py::make_tuple(r.model, log);
      },
      py::arg("config"), py::arg("data"), py::arg("preset") = "synthetic");

  m.def(
      "certify",
      [](const Model& model, const Array& x, double epsilon, double delta) {
        const Tensor t = to_tensor(x);
        return certify_batch(model, InputRegion{t, epsilon, std::pair{0.0, 1.0}}, delta, t);
      },
      py::arg("model"), py::arg("x"), py::arg("epsilon") = 0.1, py::arg("delta") = 0.05,
      "Certified bound on the (1 - delta) worst-case MSE for each row of x.");

  m.def(
      "attack",
      [](const std::string& name, const Model& model, const Array& x, double epsilon, int steps,
         std::uint64_t seed) {
        AttackOptions o;
        o.epsilon = epsilon;
        o.steps = steps;
        o.seed = seed;
        return to_array(run_attack(name, model, to_tensor(x), o));
      },
      py::arg("name"), py::arg("model"), py::arg("x"), py::arg("epsilon") = 0.1,
      py::arg("steps") = 10, py::arg("seed") = 0);

  m.def("selftest", [](std::uint64_t seed) {
    py::list out;
    for (const auto& c : run_selftest(seed)) out.append(py::make_tuple(c.name, c.passed, c.detail));
    return out;
  }, py::arg("seed") = 0);
}
