// Python bindings: metrics, densities, toy boosting and the experiment driver.
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "bbnn/bvi.hpp"
#include "bbnn/data.hpp"
#include "bbnn/distributions.hpp"
#include "bbnn/errors.hpp"
#include "bbnn/experiment.hpp"
#include "bbnn/metrics.hpp"
#include "bbnn/network.hpp"

namespace py = pybind11;
using namespace bbnn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, Vector(a.data(), a.data() + r * c));
}

Array from_matrix(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

PredictionSet prediction_set(const Array& probs, const std::vector<int>& labels) {
  PredictionSet p{to_matrix(probs), labels};
  validate(p);
  return p;
}

py::dict calibration_dict(const CalibrationReport& r) {
  py::list bins;
  for (const auto& b : r.bins)
    bins.append(py::dict(py::arg("lo") = b.lo, py::arg("hi") = b.hi, py::arg("count") = b.count,
                         py::arg("accuracy") = b.accuracy, py::arg("confidence") = b.confidence));
  return py::dict(py::arg("ece") = r.ece, py::arg("nll") = r.nll, py::arg("accuracy") = r.accuracy,
                  py::arg("bins") = bins);
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bayesian neural network training with boosted variational inference";
  m.attr("__version__") = kSoftwareVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // metrics
  m.def("accuracy", [](const Array& p, const std::vector<int>& y) { return accuracy(prediction_set(p, y)); },
        py::arg("probs"), py::arg("labels"));
  m.def("nll", [](const Array& p, const std::vector<int>& y) { return nll(prediction_set(p, y)); },
        py::arg("probs"), py::arg("labels"));
  m.def("ece", [](const Array& p, const std::vector<int>& y, std::size_t bins) {
        return calibration_dict(ece(prediction_set(p, y), bins));
      },
        py::arg("probs"), py::arg("labels"), py::arg("bins") = 10);
  m.def("uncertainty_decomposition",
        [](const Array& draws) {
          const auto d = uncertainty_decomposition(to_matrix(draws));
          return py::dict(py::arg("aleatoric") = d.aleatoric, py::arg("epistemic") = d.epistemic,
                          py::arg("aleatoric_total") = d.aleatoric_total,
                          py::arg("epistemic_total") = d.epistemic_total);
        },
        py::arg("draws"), "Rows are MC draws of one sample's class probabilities.");

  // densities
  py::class_<DiagonalGaussian>(m, "DiagonalGaussian")
      .def(py::init<Vector, Vector>(), py::arg("mean"), py::arg("rho"))
      .def_static("with_stddev", &DiagonalGaussian::with_stddev, py::arg("mean"), py::arg("sigma"))
      .def_property_readonly("mean", [](const DiagonalGaussian& g) { return g.mean(); })
      .def_property_readonly("rho", [](const DiagonalGaussian& g) { return g.rho(); })
      .def_property_readonly("stddev", [](const DiagonalGaussian& g) { return g.stddev(); })
      .def("log_prob", [](const DiagonalGaussian& g, const Vector& x) { return g.log_prob(x); })
      .def("entropy", &DiagonalGaussian::entropy)
      .def("kl_to_std_normal", [](const DiagonalGaussian& g) { return kl_diag_to_std_normal(g); });

  py::class_<GaussianMixture>(m, "GaussianMixture")
      .def(py::init<std::vector<DiagonalGaussian>, Vector>(), py::arg("components"), py::arg("weights"))
      .def_property_readonly("components", &GaussianMixture::components)
      .def_property_readonly("weights", &GaussianMixture::weights)
      .def("log_prob", [](const GaussianMixture& g, const Vector& x) { return g.log_prob(x); })
      .def("with_component", &GaussianMixture::with_component, py::arg("q_new"), py::arg("lam"))
      .def("__len__", &GaussianMixture::size);

  m.def("softplus", &softplus);
  m.def("toy_target_names", &toy_target_names);
  m.def("toy_log_density",
        [](const std::string& name, double x) { return toy_target(name).log_joint(Vector{x}); },
        py::arg("target"), py::arg("x"));

  m.def("boost_toy",
        [](const std::string& target, std::size_t rounds, std::uint64_t seed) {
          BoostConfig cfg;
          cfg.rounds = rounds;
          cfg.seed = seed;
          const TargetDensity t = toy_target(target);
          BoostResult r;
          {
            py::gil_scoped_release nogil;
            r = boost(t, 1, cfg);
          }
          std::vector<double> kl;
          for (const auto& h : r.history) kl.push_back(quadrature_kl(h, t));
          py::list trace;
          for (const auto& rec : r.trace)
            trace.append(py::dict(py::arg("round") = rec.round, py::arg("lambda") = rec.lambda,
                                  py::arg("elbo") = rec.elbo, py::arg("elbo_se") = rec.elbo_se,
                                  py::arg("accepted") = rec.accepted));
          return py::dict(py::arg("mixture") = r.mixture, py::arg("kl") = kl, py::arg("trace") = trace);
        },
        py::arg("target") = "bimodal", py::arg("rounds") = 5, py::arg("seed") = 0);
  m.def("quadrature_kl", [](const GaussianMixture& q, const std::string& target) {
        return quadrature_kl(q, toy_target(target));
      });

  // networks
  m.def("param_count", [](const std::string& arch) { return param_count(parse_architecture(arch)); });
  m.def("predict_proba",
        [](const std::string& arch, const Vector& w, const Array& x) {
          return from_matrix(predict_proba(parse_architecture(arch), w, to_matrix(x)));
        },
        py::arg("arch"), py::arg("weights"), py::arg("x"));

  // data
  m.def("stratified_split",
        [](const std::vector<int>& labels, std::size_t classes, std::array<double, 3> ratios, std::uint64_t seed) {
          const Split s = stratified_split(labels, classes, ratios, seed);
          return py::make_tuple(s.train, s.val, s.test);
        },
        py::arg("labels"), py::arg("class_count"), py::arg("ratios") = std::array<double, 3>{0.7, 0.15, 0.15},
        py::arg("seed") = 0);
  m.def("dataset_names", [] {
    std::vector<std::string> n;
    for (const auto& d : dataset_registry()) n.push_back(d.name);
    return n;
  });

  // experiments
  m.def("train",
        [](const std::string& config_text, const std::string& dataset, const std::string& method,
           const std::filesystem::path& out, const std::filesystem::path& data_dir) {
          ExperimentConfig cfg = parse_config(config_text);
          if (!dataset.empty()) cfg.dataset = dataset;
          if (!method.empty()) cfg.method = method;
          if (!out.empty()) cfg.out_dir = out;
          if (!data_dir.empty()) cfg.data_dir = data_dir;
          std::vector<RunReport> reports;
          {
            py::gil_scoped_release nogil;
            reports = cmd_train(cfg);
          }
          py::list outl;
          for (const auto& r : reports) outl.append(json_to_py(r.json));
          return outl;
        },
        py::arg("config") = "", py::arg("dataset") = "", py::arg("method") = "",
        py::arg("out") = std::filesystem::path(), py::arg("data_dir") = std::filesystem::path(),
        "Train every configured seed; returns the run reports as dicts.");
  m.def("verify_report", [](const std::filesystem::path& p) {
    const VerifyResult v = verify_report(p);
    return py::dict(py::arg("ok") = v.ok, py::arg("checked") = v.checked, py::arg("mismatches") = v.mismatches);
  });
}
