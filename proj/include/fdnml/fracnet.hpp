#pragma once

#include "fdnml/ingest.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fdnml::fracnet {

// Grünwald–Letnikov weights psi(alpha, i) = Gamma(i - alpha) / (Gamma(-alpha) Gamma(i + 1)),
// i = 0 .. j_mem, evaluated with the recurrence psi(i) = psi(i-1) (i - 1 - alpha) / i.
struct PsiWeights {
  double alpha{0.0};
  std::vector<double> weights;
};

PsiWeights psi_weights(double alpha, std::size_t j_mem);

struct GlDifference {
  std::vector<double> values;  // (Delta^alpha x)[k], k = 0 .. N-1
  std::size_t warmup{0};       // leading outputs computed from a truncated history
};

// (Delta^alpha x)[k] = sum_{i=0}^{min(k, j_mem)} psi(alpha, i) x[k - i]
GlDifference gl_difference(std::span<const double> x, double alpha, std::size_t j_mem);

struct AlphaEstimate {
  double alpha{0.0};
  double raw_slope{0.0};  // slope of log2 Var d(j, .) against j (L1 coefficients)
  double r2{0.0};
  bool clamped{false};
};

// Wavelet log-variance regression over scales 2 .. min(6, deepest scale with
// >= 8 interior coefficients); alpha = (slope + 1) / 2 clamped to [0.1, 1.4].
AlphaEstimate estimate_alpha(std::span<const double> x);

// One estimate per row of `channels` ([n x T]).
std::vector<AlphaEstimate> estimate_alphas(const Eigen::MatrixXd& channels);

struct EmOptions {
  std::size_t j_mem{0};  // 0 selects min(window length - 1, 100)
  double tol{1e-6};
  std::size_t max_iter{200};
  double ridge{1e-6};
  bool skip_warmup{true};
};

struct FractionalModel {
  Eigen::VectorXd alpha;
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd B;  // n x p, unit-norm columns
  Eigen::MatrixXd U;  // p x T_eff
  Eigen::MatrixXd C;  // identity
  double residual_rms{0.0};
  std::size_t iterations{0};
  bool converged{false};
  bool inputs_negligible{false};  // residual of the input-free fit is numerically zero
  double condition_number{0.0};   // of the state Gram matrix
  std::vector<double> residual_trace;
  std::size_t first_target{0};    // time index k of the first regression target
};

// Latent-input identification by alternating least squares (EM with a
// least-squares E-step):
//   E-step: u[k] = argmin || z[k] - A x[k] - B u ||, then the gauge
//           u <- u - C x, A <- A + B C removes the part of U explained by X;
//   M-step: [A B] = argmin || Z - [A B][X; U] ||.
// z[k] is the GL difference of x at k+1.
FractionalModel fit(const Eigen::MatrixXd& window, const Eigen::VectorXd& alpha, std::size_t p,
                    const EmOptions& opts = {});

// Regression targets z[k] = (Delta^alpha x)[k + 1] for k = first_target .. L-2,
// as an [n x T_eff] matrix.
Eigen::MatrixXd gl_targets(const Eigen::MatrixXd& window, const Eigen::VectorXd& alpha, std::size_t j_mem,
                           std::size_t first_target);

struct WindowFit {
  bool valid{false};
  double residual_rms{0.0};
  std::size_t iterations{0};
  bool converged{false};
  std::string error;
};

// Row w holds A of window w flattened row-major: column r * n + c = A(r, c).
struct CouplingTrajectory {
  Eigen::MatrixXd matrices;  // [W x n^2]
  std::vector<WindowFit> fits;
  std::size_t n_channels{0};
  std::string trial_id;
  int fatigue_level{0};

  std::size_t windows() const { return static_cast<std::size_t>(matrices.rows()); }
  std::size_t invalid_count() const;
  Eigen::MatrixXd coupling(std::size_t w) const;
  // Valid rows only, in order.
  Eigen::MatrixXd valid_matrices() const;
};

// Fits every window; windows whose fit throws are marked invalid with zeros
// in their row. More than 20% invalid windows raise NumericError.
CouplingTrajectory coupling_trajectory(const ingest::WindowedSeries& series, const Eigen::VectorXd& alpha,
                                       std::size_t p, const EmOptions& opts = {});

// trial_id,label,window_index,valid,a_0_0..a_{n-1}_{n-1},residual_rms,iterations,converged
void write_trajectories_csv(const std::filesystem::path& path, const std::vector<CouplingTrajectory>& trajs);
std::vector<CouplingTrajectory> read_trajectories_csv(const std::filesystem::path& path);

}  // namespace fdnml::fracnet
