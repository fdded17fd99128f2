#include "fdnml/synth.hpp"

#include "fdnml/common.hpp"
#include "fdnml/fracnet.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <iostream>
#include <random>

namespace fdnml::synth {

namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

double fgn_autocov(double hurst, std::size_t k) {
  const double h2 = 2.0 * hurst;
  const auto kd = static_cast<double>(k);
  return 0.5 * (std::pow(kd + 1.0, h2) - 2.0 * std::pow(kd, h2) + std::pow(std::abs(kd - 1.0), h2));
}

std::vector<double> fgn_cholesky(double hurst, std::size_t n, std::mt19937_64& rng) {
  Eigen::MatrixXd cov(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = fgn_autocov(hurst, i > j ? i - j : j - i);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericError("fGn covariance is not positive definite");
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  const Eigen::VectorXd x = llt.matrixL() * z;
  return {x.data(), x.data() + x.size()};
}

}  // namespace

void validate(const FbmSpec& spec) {
  if (!(spec.hurst > 0.0 && spec.hurst < 1.0)) throw ConfigError("hurst exponent must lie in (0, 1)");
  if (spec.n < 256 || !is_power_of_two(spec.n)) throw ConfigError("fBm length must be a power of two >= 256");
}

FbmPath gen_fbm(const FbmSpec& spec) {
  validate(spec);
  const std::size_t n = spec.n;
  const std::size_t m = 2 * n;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;

  std::vector<std::complex<double>> row(m), eig;
  for (std::size_t k = 0; k <= n; ++k) row[k] = fgn_autocov(spec.hurst, k);
  for (std::size_t k = n + 1; k < m; ++k) row[k] = row[m - k];
  Eigen::FFT<double> fft;
  fft.fwd(eig, row);

  FbmPath out;
  bool psd = true;
  for (const auto& e : eig) {
    if (e.real() < -1e-10) psd = false;
  }
  if (psd) {
    std::vector<std::complex<double>> spectrum(m), field;
    for (std::size_t k = 0; k < m; ++k) {
      const double amp = std::sqrt(std::max(eig[k].real(), 0.0) / static_cast<double>(m));
      const double re = normal(rng);
      const double im = normal(rng);
      spectrum[k] = amp * std::complex<double>(re, im);
    }
    fft.fwd(field, spectrum);
    out.increments.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.increments[i] = field[i].real();
  } else {
    std::cerr << "warning: circulant embedding not PSD for H=" << spec.hurst << ", n=" << n
              << "; using Cholesky synthesis\n";
    out.used_cholesky = true;
    out.increments = fgn_cholesky(spec.hurst, n, rng);
  }
  out.path.resize(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += out.increments[i];
    out.path[i] = acc;
  }
  return out;
}

void validate(const CascadeSpec& spec) {
  if (spec.depth < 8 || spec.depth > 26) throw ConfigError("cascade depth must lie in [8, 26]");
  if (!(spec.weight >= 0.5 && spec.weight < 1.0)) throw ConfigError("cascade weight must lie in [0.5, 1)");
}

CascadePath gen_cascade(const CascadeSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> mass{1.0};
  for (int level = 0; level < spec.depth; ++level) {
    std::vector<double> next(mass.size() * 2);
    for (std::size_t i = 0; i < mass.size(); ++i) {
      const bool left_heavy = coin(rng);
      const double wl = left_heavy ? spec.weight : 1.0 - spec.weight;
      next[2 * i] = mass[i] * wl;
      next[2 * i + 1] = mass[i] * (1.0 - wl);
    }
    mass = std::move(next);
  }
  CascadePath out;
  out.weight = spec.weight;
  out.path.resize(mass.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    acc += mass[i];
    out.path[i] = acc;
  }
  out.measure = std::move(mass);
  return out;
}

double cascade_zeta(double weight, double q) {
  return 1.0 - std::log2(std::pow(weight, q) + std::pow(1.0 - weight, q));
}

std::array<double, 3> cascade_cumulants(double weight) {
  // zeta(q) = 1 - log2 E-sum, with log-weights a = ln w, b = ln(1-w) drawn
  // with probability 1/2 each: cumulant generating function of the log-mass.
  const double a = std::log(weight);
  const double b = std::log(1.0 - weight);
  const double ln2 = std::log(2.0);
  const double mean = 0.5 * (a + b);
  const double var = 0.25 * (a - b) * (a - b);
  // zeta(q) = sum_p c_p q^p / p!, c_p = -kappa_p / ln 2 (third cumulant of a
  // symmetric two-point law vanishes).
  return {-mean / ln2, -var / ln2, 0.0};
}

Eigen::MatrixXd simulate_fdn(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                             const Eigen::MatrixXd& u, const Eigen::VectorXd& x0, std::size_t horizon,
                             double noise_std, std::uint64_t seed, std::size_t memory) {
  const Eigen::Index n = alpha.size();
  if (n < 1) throw ConfigError("simulate_fdn needs at least one channel");
  if (A.rows() != n || A.cols() != n) throw ConfigError("A must be n x n");
  if (B.rows() != n) throw ConfigError("B must have n rows");
  if (x0.size() != n) throw ConfigError("x0 must have n entries");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (B.cols() > 0 && (u.rows() != B.cols() || static_cast<std::size_t>(u.cols()) < horizon - 1)) {
    throw ConfigError("u must be p x T");
  }
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");

  const std::size_t mem = memory == 0 ? horizon : memory;
  std::vector<std::vector<double>> psi(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < n; ++c) psi[static_cast<std::size_t>(c)] = fracnet::psi_weights(alpha(c), mem).weights;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(horizon));
  x.col(0) = x0;
  for (std::size_t k = 0; k + 1 < horizon; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    Eigen::VectorXd next = A * x.col(kk);
    if (B.cols() > 0) next += B * u.col(kk);
    const std::size_t lim = std::min(k + 1, mem);
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto& w = psi[static_cast<std::size_t>(c)];
      double acc = 0.0;
      for (std::size_t i = 1; i <= lim; ++i) acc += w[i] * x(c, static_cast<Eigen::Index>(k + 1 - i));
      next(c) -= acc;
      if (noise_std > 0.0) next(c) += noise_std * normal(rng);
    }
    if (!next.allFinite() || next.norm() > 1e9) {
      throw NumericError("simulate_fdn diverged at step " + std::to_string(k + 1));
    }
    x.col(kk + 1) = next;
  }
  return x;
}

LevelParameters level_parameters(int level) {
  LevelParameters p;
  p.alpha.resize(4);
  p.coupling = Eigen::MatrixXd::Zero(4, 4);
  switch (level) {
    case 0:
      p.hurst = 0.3;
      p.cascade_weight = 0.55;
      p.alpha << 0.35, 0.40, 0.40, 0.35;
      p.coupling.diagonal().setConstant(-0.15);
      p.coupling(0, 3) = p.coupling(3, 0) = 0.05;
      break;
    case 1:
      p.hurst = 0.5;
      p.cascade_weight = 0.65;
      p.alpha << 0.60, 0.65, 0.65, 0.60;
      p.coupling.diagonal().setConstant(-0.30);
      p.coupling(1, 0) = p.coupling(2, 1) = p.coupling(3, 2) = 0.15;
      break;
    case 2:
      p.hurst = 0.7;
      p.cascade_weight = 0.75;
      p.alpha << 0.85, 0.90, 0.90, 0.85;
      p.coupling.diagonal().setConstant(-0.45);
      p.coupling.col(1).setConstant(0.12);
      p.coupling(1, 1) = -0.45;
      break;
    default:
      throw ConfigError("fatigue level must be 0, 1 or 2");
  }
  return p;
}

std::vector<ingest::EegRecording> gen_fatigue_dataset(const DatasetSpec& spec) {
  if (spec.trials_per_level < 1) throw ConfigError("need at least one trial per level");
  if (spec.samples_per_trial < 512) throw ConfigError("need at least 512 samples per trial");
  std::size_t pow2 = 256;
  int depth = 8;
  while (pow2 < spec.samples_per_trial) {
    pow2 *= 2;
    ++depth;
  }
  const std::vector<std::string> names{"TP9", "AF7", "AF8", "TP10"};
  std::vector<ingest::EegRecording> out;
  for (int level = 0; level < 3; ++level) {
    const LevelParameters lp = level_parameters(level);
    for (std::size_t t = 0; t < spec.trials_per_level; ++t) {
      const uint64_t trial_seed = derive_seed(spec.seed, static_cast<uint64_t>(level) * 100000 + t);
      const auto T = static_cast<Eigen::Index>(spec.samples_per_trial);
      Eigen::MatrixXd drive(4, T);
      for (Eigen::Index c = 0; c < 4; ++c) {
        const auto chan_seed = derive_seed(trial_seed, static_cast<uint64_t>(c));
        const FbmPath f = gen_fbm({lp.hurst, pow2, chan_seed});
        const CascadePath cp = gen_cascade({depth, lp.cascade_weight, derive_seed(chan_seed, "cascade")});
        for (Eigen::Index k = 0; k < T; ++k) {
          const double intensity = cp.measure[static_cast<std::size_t>(k)] * static_cast<double>(pow2);
          drive(c, k) = f.increments[static_cast<std::size_t>(k)] * std::sqrt(intensity);
        }
      }
      ingest::EegRecording rec;
      rec.channels = names;
      rec.samples = 10.0 * simulate_fdn(lp.alpha, lp.coupling, Eigen::MatrixXd::Identity(4, 4), drive,
                                        Eigen::VectorXd::Zero(4), spec.samples_per_trial, 0.05,
                                        derive_seed(trial_seed, "noise"), 0);
      rec.sample_rate_hz = spec.sample_rate_hz;
      rec.fatigue_level = level;
      rec.trial_id = "L" + std::to_string(level) + "_T" + std::to_string(t);
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace fdnml::synth
