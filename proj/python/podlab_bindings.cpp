#include "podlab/pipeline.hpp"

#include <pybind11/complex.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace podlab;

namespace {

ProjectConfig config_from(const std::string& text, std::optional<std::uint64_t> seed) {
  ProjectConfig cfg = text.empty() ? default_config() : parse_config(nlohmann::json::parse(text));
  if (seed) cfg.set_seed(*seed);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_podlab, m) {
  m.doc() = "POD controller design toolkit";

  py::register_exception<Error>(m, "DomainError", PyExc_ValueError);

  py::class_<TransferFunction>(m, "TransferFunction")
      .def(py::init<std::vector<double>, std::vector<double>>(), py::arg("num"), py::arg("den"))
      .def_property_readonly("num", &TransferFunction::num)
      .def_property_readonly("den", &TransferFunction::den)
      .def("__call__", &TransferFunction::eval)
      .def("poles", &TransferFunction::poles)
      .def("zeros", &TransferFunction::zeros)
      .def("__mul__", [](const TransferFunction& a, const TransferFunction& b) { return a * b; })
      .def("__repr__", [](const TransferFunction& t) {
        return "TransferFunction(num=" + py::repr(py::cast(t.num())).cast<std::string>() +
               ", den=" + py::repr(py::cast(t.den())).cast<std::string>() + ")";
      });

  m.def("pade_approx", &pade_approx, py::arg("theta_s"), py::arg("order"));
  m.def("validate_surrogate", [](const TransferFunction& tf, double theta, double lo, double hi) {
    return validate_surrogate(tf, theta, {lo, hi});
  }, py::arg("pade"), py::arg("theta_s"), py::arg("low_hz") = 0.1, py::arg("high_hz") = 2.0);
  m.def("select_surrogate_order", [](double theta, double lo, double hi, double err) {
    const auto s = select_surrogate(theta, {lo, hi}, err);
    return py::make_tuple(s.order, s.max_phase_err_deg);
  }, py::arg("theta_s"), py::arg("low_hz") = 0.1, py::arg("high_hz") = 2.0, py::arg("max_phase_err_deg") = 10.0);
  m.def("nyquist_limit", &nyquist_limit, py::arg("rate_hz"));
  m.def("phase_at", &phase_at, py::arg("tf"), py::arg("omega_rad_s"));
  m.def("leadlag_tf", py::overload_cast<double, double, double, double>(&leadlag_tf),
        py::arg("T1"), py::arg("T2"), py::arg("T3"), py::arg("T4"));
  m.def("washout", &washout, py::arg("Tw_s"));
  m.def("power_limits", [](double k, double p_R, double q_R, double S_n) {
    const auto l = power_limits({k, p_R, q_R, S_n});
    return py::make_tuple(l.p_l, l.q_l);
  }, py::arg("k"), py::arg("p_R"), py::arg("q_R"), py::arg("S_n"));
  m.def("dogleg_solve", [](const std::function<std::vector<double>(std::vector<double>)>& f, std::vector<double> x0) {
    const ResidualFunction F = [&f](const Vector& x) {
      const auto r = f(std::vector<double>(x.data(), x.data() + x.size()));
      return Vector(Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size())));
    };
    const auto res = dogleg_solve(F, Eigen::Map<const Vector>(x0.data(), static_cast<Eigen::Index>(x0.size())));
    return py::dict(py::arg("x") = std::vector<double>(res.x.data(), res.x.data() + res.x.size()),
                    py::arg("norm") = res.norm, py::arg("iterations") = res.iterations,
                    py::arg("converged") = res.converged);
  }, py::arg("residual"), py::arg("x0"));

  m.def("default_config", [] { return default_config_json().dump(2); });
  m.def("build_plant", [](const std::string& config) {
    return plant_json(build_reference_plant(config_from(config, std::nullopt).plant)).dump();
  }, py::arg("config") = "");
  m.def("design", [](const std::string& config) {
    py::gil_scoped_release release;
    return design_json(run_design(config_from(config, std::nullopt))).dump();
  }, py::arg("config") = "");
  m.def("ensemble", [](const std::string& config, std::optional<std::uint64_t> seed) {
    py::gil_scoped_release release;
    const ProjectConfig cfg = config_from(config, seed);
    return ensemble_json(run_ensemble(cfg, run_design(cfg))).dump();
  }, py::arg("config") = "", py::arg("seed") = py::none());
}
