#pragma once

#include "fdnml/ingest.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fdnml::synth {

struct FbmSpec {
  double hurst{0.7};
  std::size_t n{4096};  // power of two, >= 256
  std::uint64_t seed{0};
};

void validate(const FbmSpec& spec);

struct FbmPath {
  std::vector<double> increments;  // fractional Gaussian noise, unit variance
  std::vector<double> path;        // cumulative sum of the increments
  bool used_cholesky{false};       // circulant embedding was not PSD
};

// Exact synthesis: circulant embedding of the fGn autocovariance, with a
// Cholesky fallback when the embedding has negative eigenvalues.
FbmPath gen_fbm(const FbmSpec& spec);

struct CascadeSpec {
  int depth{14};        // output length 2^depth
  double weight{0.7};   // in [0.5, 1)
  std::uint64_t seed{0};
};

void validate(const CascadeSpec& spec);

struct CascadePath {
  std::vector<double> measure;  // sums to 1
  std::vector<double> path;     // cumulative sum of the measure
  double weight{0.0};
};

// Binomial multiplicative cascade; at every split a fair coin decides which
// child receives the weight w.
CascadePath gen_cascade(const CascadeSpec& spec);

// Scaling exponents of the leader structure functions of the integrated
// cascade path: zeta(q) = 1 - log2(w^q + (1-w)^q).
double cascade_zeta(double weight, double q);

// Log-cumulants of the same analytic zeta(q): (c1, c2, c3).
std::array<double, 3> cascade_cumulants(double weight);

struct FdnSimulation {
  Eigen::MatrixXd states;  // [n x T]
};

// Forward simulation of  Delta^alpha x[k+1] = A x[k] + B u[k] (+ noise):
//   x[k+1] = A x[k] + B u[k] - sum_{i=1}^{min(k+1, memory)} psi(alpha, i) x[k+1-i] + e[k]
// `memory` = 0 keeps the full history. u may be empty when B has no columns.
// Throws NumericError naming the step when ||x[k]|| exceeds 1e9.
Eigen::MatrixXd simulate_fdn(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                             const Eigen::MatrixXd& u, const Eigen::VectorXd& x0, std::size_t horizon,
                             double noise_std, std::uint64_t seed, std::size_t memory = 0);

// Three-class synthetic fatigue data. Levels differ in the Hurst exponent and
// multiplicative weight of the driving noise, in the fractional orders and in
// the coupling matrix.
struct DatasetSpec {
  std::size_t trials_per_level{6};
  std::size_t samples_per_trial{4096};
  double sample_rate_hz{256.0};
  std::uint64_t seed{0};
};

struct LevelParameters {
  double hurst{0.5};
  double cascade_weight{0.5};
  Eigen::VectorXd alpha;
  Eigen::MatrixXd coupling;
};

LevelParameters level_parameters(int level);

std::vector<ingest::EegRecording> gen_fatigue_dataset(const DatasetSpec& spec);

}  // namespace fdnml::synth
