#include "doctest.h"

#include "fdnml/common.hpp"
#include "fdnml/fracnet.hpp"
#include "fdnml/synth.hpp"
#include "fdn_systems.hpp"
#include "test_util.hpp"

#include <cmath>
#include <random>

using namespace fdnml;
using namespace fdnml::fracnet;

namespace {

// psi(alpha, i) = Gamma(i - alpha) / (Gamma(-alpha) Gamma(i + 1)) through
// log-Gamma with explicit signs, independent of the library recurrence.
double psi_direct(double alpha, int i) {
  if (i == 0) return 1.0;
  int s1 = 0, s2 = 0;
  const double l1 = lgamma_r(i - alpha, &s1);
  const double l2 = lgamma_r(-alpha, &s2);
  const double l3 = std::lgamma(i + 1.0);
  return static_cast<double>(s1 * s2) * std::exp(l1 - l2 - l3);
}

Eigen::MatrixXd stable_coupling() {
  Eigen::MatrixXd A(4, 4);
  A << -0.30, 0.10, 0.00, 0.05,
        0.08, -0.25, 0.06, 0.00,
        0.00, 0.07, -0.35, 0.10,
        0.05, 0.00, 0.09, -0.28;
  return A;
}

Eigen::VectorXd test_alpha() {
  Eigen::VectorXd a(4);
  a << 0.6, 0.7, 0.8, 0.9;
  return a;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

Eigen::MatrixXd noisy_run(std::size_t L, std::uint64_t seed, double noise, const Eigen::MatrixXd& B,
                          Eigen::MatrixXd* u_out = nullptr) {
  std::mt19937_64 rng(derive_seed(seed, "u"));
  std::normal_distribution<double> nd;
  Eigen::MatrixXd u(B.cols(), static_cast<Eigen::Index>(L));
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = nd(rng);
  if (u_out) *u_out = u;
  Eigen::VectorXd x0(4);
  x0 << 1.0, -0.5, 0.3, 0.8;
  return synth::simulate_fdn(test_alpha(), stable_coupling(), B, u, x0, L, noise, seed, 100);
}

}  // namespace

TEST_CASE("psi weights: closed forms") {
  const auto w1 = psi_weights(1.0, 10).weights;
  CHECK(w1[0] == 1.0);
  CHECK(w1[1] == -1.0);
  for (std::size_t i = 2; i < w1.size(); ++i) CHECK(w1[i] == 0.0);
  const auto w = psi_weights(0.5, 5).weights;
  CHECK(w[1] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(w[2] == doctest::Approx(std::tgamma(1.5) / (std::tgamma(-0.5) * std::tgamma(3.0))).epsilon(1e-14));
  CHECK(w[2] == doctest::Approx(-0.125).epsilon(1e-14));
  CHECK(psi_weights(0.0, 4).weights == std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS(psi_weights(-1.5, 4), ConfigError);
}

TEST_CASE("psi recurrence agrees with log-Gamma evaluation") {
  for (int a = 1; a <= 9; ++a) {
    const double alpha = 0.1 * a;
    const auto w = psi_weights(alpha, 100).weights;
    for (int i = 0; i <= 100; ++i) {
      const double ref = psi_direct(alpha, i);
      CHECK(std::abs(w[static_cast<std::size_t>(i)] - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST_CASE("GL difference: first differences, identity, constants") {
  const std::vector<double> x{1.0, 2.0, 4.0};
  const auto d = gl_difference(x, 1.0, 2);
  CHECK(d.values == std::vector<double>{1.0, 1.0, 2.0});
  CHECK(d.warmup >= 1);

  const auto r = testutil::normal_vector(300, 1);
  CHECK(gl_difference(r, 0.0, 50).values == r);

  // alpha = 1 is bit-exact first differencing on random data.
  const auto fd = gl_difference(r, 1.0, 100).values;
  for (std::size_t k = 1; k < r.size(); ++k) CHECK(fd[k] == r[k] - r[k - 1]);

  const std::vector<double> c(200, 2.5);
  const auto w = psi_weights(0.5, 100).weights;
  double sum = 0.0;
  for (double v : w) sum += v;
  const auto dc = gl_difference(c, 0.5, 100).values;
  CHECK(dc.back() == doctest::Approx(2.5 * sum).epsilon(1e-12));
}

TEST_CASE("GL difference is linear") {
  const auto x = testutil::normal_vector(400, 2);
  const auto y = testutil::normal_vector(400, 3);
  std::vector<double> z(400);
  const double a = 1.7, b = -0.3;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + b * y[i];
  for (double alpha : {0.2, 0.55, 0.9}) {
    const auto dx = gl_difference(x, alpha, 100).values;
    const auto dy = gl_difference(y, alpha, 100).values;
    const auto dz = gl_difference(z, alpha, 100).values;
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(dz[i] - (a * dx[i] + b * dy[i])) < 1e-12);
  }
}

TEST_CASE("alpha estimation") {
  // White noise: flat L1 wavelet variance slope, below the clamp.
  int clamped = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto e = estimate_alpha(testutil::normal_vector(4096, s));
    clamped += e.clamped ? 1 : 0;
    CHECK(e.alpha == doctest::Approx(0.1));
  }
  CHECK(clamped == 10);

  // First-order random walk (the alpha = 1 process).
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto steps = testutil::normal_vector(4096, 100 + s);
    std::vector<double> walk(steps.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < steps.size(); ++i) walk[i] = acc += steps[i];
    mean += estimate_alpha(walk).alpha / 10.0;
  }
  CHECK(std::abs(mean - 1.0) < 0.15);

  try {
    estimate_alpha(std::vector<double>(1024, 3.0));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("degenerate variance") != std::string::npos);
  }
  CHECK_THROWS_AS(estimate_alpha(std::vector<double>(100, 1.0)), DataError);
}

TEST_CASE("noiseless inverse crime recovers A") {
  const auto x = noisy_run(1024, 1, 0.0, Eigen::MatrixXd(4, 0));
  const auto m = fit(x, test_alpha(), 1);
  CHECK(rel_err(m.A, stable_coupling()) < 1e-6);
  CHECK(m.inputs_negligible);
  CHECK((m.B * m.U).norm() < 1e-6);
  CHECK(m.C.isIdentity());
}

TEST_CASE("injected inputs with noise: A within 10 percent") {
  const Eigen::MatrixXd A = testutil::excited_coupling();
  const Eigen::MatrixXd B = testutil::excited_input_direction();
  for (std::uint64_t seed : {2u, 3u, 4u, 5u, 6u}) {
    const auto x = testutil::excited_run(1024, seed, 0.01, 0.01);
    const auto m = fit(x, testutil::excited_alpha(), 1);
    CHECK(rel_err(m.A, A) < 0.10);
    // The single input direction is recovered up to sign.
    CHECK(std::abs(m.B.col(0).dot(B.col(0))) > 0.9);
    for (std::size_t i = 1; i < m.residual_trace.size(); ++i) {
      CHECK(m.residual_trace[i] <= m.residual_trace[i - 1] * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("EM residual never increases") {
  Eigen::MatrixXd B = Eigen::MatrixXd::Random(4, 2);
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const auto x = noisy_run(600, seed, 0.05, B);
    for (std::size_t p : {1u, 2u, 3u}) {
      EmOptions o;
      o.tol = 1e-10;
      const auto m = fit(x, test_alpha(), p, o);
      CHECK(m.iterations >= 1);
      for (std::size_t i = 1; i < m.residual_trace.size(); ++i) {
        CHECK(m.residual_trace[i] <= m.residual_trace[i - 1] * (1.0 + 1e-12));
      }
      CHECK(m.B.colwise().norm().isOnes(1e-12));
    }
  }
}

TEST_CASE("p = 0 is ordinary least squares") {
  const auto x = noisy_run(700, 30, 0.05, Eigen::MatrixXd(4, 0));
  const auto m = fit(x, test_alpha(), 0);
  const std::size_t J = 100;
  const std::size_t k0 = J - 1;
  const Eigen::MatrixXd Z = gl_targets(x, test_alpha(), J, k0);
  const Eigen::MatrixXd X = x.middleCols(static_cast<Eigen::Index>(k0), Z.cols());
  const Eigen::MatrixXd ols = (X * X.transpose()).ldlt().solve(X * Z.transpose()).transpose();
  CHECK((m.A - ols).norm() < 1e-10 * ols.norm());
  CHECK(m.B.cols() == 0);
}

TEST_CASE("fit preconditions") {
  const auto x = noisy_run(120, 40, 0.05, Eigen::MatrixXd(4, 0));
  CHECK_THROWS_AS(fit(x, test_alpha(), 1), DataError);
  const auto y = noisy_run(600, 41, 0.05, Eigen::MatrixXd(4, 0));
  CHECK_THROWS_AS(fit(y, test_alpha(), 4), ConfigError);
  CHECK_THROWS_AS(fit(y, Eigen::VectorXd::Constant(3, 0.5), 1), ConfigError);
  Eigen::MatrixXd flat = y;
  flat.row(2) = flat.row(1);
  CHECK_THROWS_AS(fit(flat, test_alpha(), 1), NumericError);
}

TEST_CASE("coupling trajectory shapes and invalid windows") {
  const auto x = noisy_run(4096, 50, 0.05, Eigen::MatrixXd(4, 0));
  ingest::EegRecording rec;
  rec.channels = {"a", "b", "c", "d"};
  rec.samples = x;
  rec.sample_rate_hz = 256;
  rec.trial_id = "t";
  rec.fatigue_level = 1;
  const auto series = ingest::window(rec, {512, 256, {}});
  const auto tr = coupling_trajectory(series, test_alpha(), 1);
  CHECK(tr.windows() == 15);
  CHECK(tr.matrices.cols() == 16);
  CHECK(tr.invalid_count() == 0);
  CHECK(tr.coupling(3)(1, 2) == tr.matrices(3, 1 * 4 + 2));
  CHECK(tr.valid_matrices().rows() == 15);

  ingest::WindowedSeries one = series;
  one.windows.resize(1);
  one.window_starts.resize(1);
  CHECK(coupling_trajectory(one, test_alpha(), 1).windows() == 1);

  // One broken window out of 15 stays below the 20% limit.
  ingest::WindowedSeries broken = series;
  broken.windows[4].row(3) = broken.windows[4].row(0);
  const auto tb = coupling_trajectory(broken, test_alpha(), 1);
  CHECK(tb.invalid_count() == 1);
  CHECK_FALSE(tb.fits[4].valid);
  CHECK(tb.matrices.row(4).isZero());
  CHECK(tb.valid_matrices().rows() == 14);
  for (std::size_t w : {5u, 6u, 7u}) broken.windows[w].row(3) = broken.windows[w].row(0);
  CHECK_THROWS_AS(coupling_trajectory(broken, test_alpha(), 1), NumericError);
}

TEST_CASE("stationary system: window-to-window dispersion matches the replicate noise floor") {
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(4, 1);
  B(0, 0) = 1.0;
  auto dispersion = [](const std::vector<Eigen::MatrixXd>& as) {
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(4, 4);
    for (const auto& a : as) mean += a / static_cast<double>(as.size());
    double d = 0.0;
    for (const auto& a : as) d += (a - mean).norm() / static_cast<double>(as.size());
    return d;
  };
  // Replicates: independent single windows.
  std::vector<Eigen::MatrixXd> reps;
  for (std::uint64_t s = 0; s < 12; ++s) reps.push_back(fit(noisy_run(512, 200 + s, 0.05, B), test_alpha(), 1).A);
  // Windows of one long stationary run.
  ingest::EegRecording rec;
  rec.channels = {"a", "b", "c", "d"};
  rec.samples = noisy_run(512 * 12, 300, 0.05, B);
  rec.trial_id = "long";
  rec.sample_rate_hz = 256;
  const auto tr = coupling_trajectory(ingest::window(rec, {512, 512, {}}), test_alpha(), 1);
  std::vector<Eigen::MatrixXd> wins;
  for (std::size_t w = 0; w < tr.windows(); ++w) wins.push_back(tr.coupling(w));
  CHECK(dispersion(wins) < 3.0 * dispersion(reps));
}

TEST_CASE("trajectory CSV round trip") {
  testutil::TempDir dir("fracnet");
  const auto x = noisy_run(2048, 60, 0.05, Eigen::MatrixXd(4, 0));
  ingest::EegRecording rec;
  rec.channels = {"a", "b", "c", "d"};
  rec.samples = x;
  rec.trial_id = "rt";
  rec.fatigue_level = 2;
  rec.sample_rate_hz = 256;
  const auto tr = coupling_trajectory(ingest::window(rec, {512, 256, {}}), test_alpha(), 1);
  write_trajectories_csv(dir / "t.csv", {tr});
  const auto back = read_trajectories_csv(dir / "t.csv");
  REQUIRE(back.size() == 1);
  CHECK(back[0].trial_id == "rt");
  CHECK(back[0].fatigue_level == 2);
  CHECK((back[0].matrices.array() == tr.matrices.array()).all());
  CHECK(back[0].invalid_count() == tr.invalid_count());
}
