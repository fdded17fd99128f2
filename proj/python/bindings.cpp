#include "fdnml/common.hpp"
#include "fdnml/complexity.hpp"
#include "fdnml/distance.hpp"
#include "fdnml/fracnet.hpp"
#include "fdnml/learn.hpp"
#include "fdnml/multifractal.hpp"
#include "fdnml/pipeline.hpp"
#include "fdnml/synth.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace fdnml;

namespace {

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

mf::QGrid make_grid(const std::optional<std::vector<double>>& q) {
  if (!q) return mf::QGrid::standard();
  mf::QGrid g;
  g.q = *q;
  g.validate();
  return g;
}

}  // namespace

PYBIND11_MODULE(_fdnml, m) {
  m.doc() = "Fractional dynamics and multifractal features for EEG fatigue classification";
  m.attr("__version__") = pipeline::kVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);

  m.def("set_thread_count", &set_thread_count, py::arg("n"), "0 selects the hardware concurrency");

  // Generators
  m.def(
      "gen_fbm",
      [](double hurst, std::size_t n, std::uint64_t seed) {
        const auto f = synth::gen_fbm({hurst, n, seed});
        return py::make_tuple(f.path, f.increments);
      },
      py::arg("hurst"), py::arg("n"), py::arg("seed") = 0, "Returns (path, increments).");
  m.def(
      "gen_cascade",
      [](int depth, double weight, std::uint64_t seed) {
        const auto c = synth::gen_cascade({depth, weight, seed});
        return py::make_tuple(c.path, c.measure);
      },
      py::arg("depth"), py::arg("weight"), py::arg("seed") = 0, "Returns (path, measure).");
  m.def("cascade_zeta", &synth::cascade_zeta, py::arg("weight"), py::arg("q"));
  m.def("simulate_fdn", &synth::simulate_fdn, py::arg("alpha"), py::arg("A"), py::arg("B"), py::arg("u"),
        py::arg("x0"), py::arg("horizon"), py::arg("noise_std") = 0.0, py::arg("seed") = 0, py::arg("memory") = 0);

  // Multifractal analysis
  m.def(
      "analyze",
      [](std::vector<double> signal, const std::string& family, std::optional<std::vector<double>> q, int j1, int j2,
         std::size_t bootstrap, std::uint64_t seed) {
        mf::MfaOptions o;
        o.family = mf::parse_family(family);
        o.qs = make_grid(q);
        o.j1 = j1;
        o.j2 = j2;
        o.bootstrap_resamples = bootstrap;
        o.seed = seed;
        const auto s = mf::analyze(signal, o);
        auto j = pipeline::summary_json(s, "");
        j.erase("channel");
        j["q"] = s.q;
        j["j1"] = s.j1;
        j["j2"] = s.j2;
        return to_python(j);
      },
      py::arg("signal"), py::arg("family") = "db3", py::arg("q") = py::none(), py::arg("j1") = 0, py::arg("j2") = -2,
      py::arg("bootstrap") = 0, py::arg("seed") = 0, "Wavelet-leader analysis; returns a dict.");

  // Fractional-order network
  m.def("psi_weights", [](double alpha, std::size_t j_mem) { return fracnet::psi_weights(alpha, j_mem).weights; },
        py::arg("alpha"), py::arg("j_mem"));
  m.def(
      "gl_difference",
      [](std::vector<double> x, double alpha, std::size_t j_mem) {
        return fracnet::gl_difference(x, alpha, j_mem).values;
      },
      py::arg("x"), py::arg("alpha"), py::arg("j_mem"));
  m.def(
      "estimate_alphas",
      [](const Eigen::MatrixXd& x) {
        std::vector<double> out;
        for (const auto& e : fracnet::estimate_alphas(x)) out.push_back(e.alpha);
        return out;
      },
      py::arg("window"), "Per-row fractional order estimates of an [n x T] window.");
  m.def(
      "fit",
      [](const Eigen::MatrixXd& window, const Eigen::VectorXd& alpha, std::size_t p, std::size_t j_mem, double tol,
         std::size_t max_iter) {
        fracnet::EmOptions o;
        o.j_mem = j_mem;
        o.tol = tol;
        o.max_iter = max_iter;
        const auto r = fracnet::fit(window, alpha, p, o);
        py::dict d;
        d["A"] = r.A;
        d["B"] = r.B;
        d["U"] = r.U;
        d["residual_rms"] = r.residual_rms;
        d["iterations"] = r.iterations;
        d["converged"] = r.converged;
        d["residual_trace"] = r.residual_trace;
        return d;
      },
      py::arg("window"), py::arg("alpha"), py::arg("p") = 1, py::arg("j_mem") = 0, py::arg("tol") = 1e-6,
      py::arg("max_iter") = 200);

  // Complexity and distances
  m.def(
      "lz76",
      [](const std::vector<std::uint8_t>& bits) {
        const auto r = complexity::lz76(bits);
        return py::make_tuple(r.c, r.ci);
      },
      py::arg("bits"), "Returns (phrase count, normalized complexity).");
  m.def(
      "binarize", [](std::vector<double> x) { return complexity::binarize(x).bits; }, py::arg("x"));
  m.def(
      "wasserstein1", [](std::vector<double> a, std::vector<double> b) { return distance::wasserstein1(a, b); },
      py::arg("a"), py::arg("b"));
  m.def(
      "contrastive_loss",
      [](const Eigen::MatrixXd& zr, const Eigen::MatrixXd& zf, double tau) {
        const auto l = learn::contrastive_loss(zr, zf, tau, true);
        return py::make_tuple(l.loss, l.grad_r, l.grad_f);
      },
      py::arg("z_raw"), py::arg("z_feat"), py::arg("tau") = 0.2, "Returns (loss, dL/dz_raw, dL/dz_feat).");

  // Pipeline
  m.def(
      "run",
      [](const std::string& config_path, std::optional<std::string> out, std::optional<std::uint64_t> seed) {
        auto cfg = pipeline::load_config(config_path);
        if (out) cfg.output_dir = *out;
        if (seed) cfg.seed = *seed;
        pipeline::RunManifest manifest;
        {
          py::gil_scoped_release release;
          manifest = pipeline::run_pipeline(cfg);
        }
        return to_python(manifest.to_json());
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(),
      "Runs every stage and returns the manifest as a dict.");
}
