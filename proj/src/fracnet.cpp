#include "fdnml/fracnet.hpp"

#include "fdnml/common.hpp"
#include "fdnml/multifractal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace fdnml::fracnet {

namespace fs = std::filesystem;

PsiWeights psi_weights(double alpha, std::size_t j_mem) {
  if (!(alpha > -1.0) || !std::isfinite(alpha)) throw ConfigError("fractional order must be > -1");
  if (j_mem < 1) throw ConfigError("GL memory must be >= 1");
  PsiWeights out;
  out.alpha = alpha;
  out.weights.resize(j_mem + 1);
  out.weights[0] = 1.0;
  for (std::size_t i = 1; i <= j_mem; ++i) {
    const auto id = static_cast<double>(i);
    out.weights[i] = out.weights[i - 1] * (id - 1.0 - alpha) / id;
  }
  return out;
}

GlDifference gl_difference(std::span<const double> x, double alpha, std::size_t j_mem) {
  if (x.size() <= j_mem) throw DataError("series shorter than the GL warm-up");
  const auto psi = psi_weights(alpha, j_mem);
  GlDifference out;
  out.values.resize(x.size());
  out.warmup = j_mem;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const std::size_t lim = std::min(k, j_mem);
    double acc = 0.0;
    for (std::size_t i = 0; i <= lim; ++i) acc += psi.weights[i] * x[k - i];
    out.values[k] = acc;
  }
  return out;
}

AlphaEstimate estimate_alpha(std::span<const double> x) {
  if (x.size() < 256) throw DataError("alpha estimation needs >= 256 samples");
  const auto dec = mf::dwt(x, mf::WaveletFamily::db3, 0, mf::Normalization::l1);
  if (dec.degenerate) throw DataError("degenerate variance: constant channel");
  std::vector<double> js, logv, w;
  for (int j = 2; j <= std::min(6, dec.max_scale()); ++j) {
    const auto& d = dec.at(j);
    const auto& flag = dec.boundary[static_cast<std::size_t>(j - 1)];
    double ss = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (flag[k]) continue;
      ss += d[k] * d[k];
      ++count;
    }
    if (count < 8) break;
    const double var = ss / static_cast<double>(count);
    if (!(var > 0.0)) throw DataError("degenerate variance at scale " + std::to_string(j));
    js.push_back(static_cast<double>(j));
    logv.push_back(std::log2(var));
    w.push_back(1.0);
  }
  if (js.size() < 2) throw DataError("alpha estimation: fewer than two usable scales");
  const auto line = mf::weighted_line(js, logv, w);
  AlphaEstimate est;
  est.raw_slope = line.slope;
  est.r2 = line.r2;
  const double a = 0.5 * (line.slope + 1.0);
  est.alpha = std::clamp(a, 0.1, 1.4);
  est.clamped = est.alpha != a;
  return est;
}

std::vector<AlphaEstimate> estimate_alphas(const Eigen::MatrixXd& channels) {
  std::vector<AlphaEstimate> out;
  for (Eigen::Index c = 0; c < channels.rows(); ++c) {
    const Eigen::VectorXd row = channels.row(c).transpose();
    out.push_back(estimate_alpha(std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))));
  }
  return out;
}

Eigen::MatrixXd gl_targets(const Eigen::MatrixXd& window, const Eigen::VectorXd& alpha, std::size_t j_mem,
                           std::size_t first_target) {
  const Eigen::Index n = window.rows();
  const auto L = static_cast<std::size_t>(window.cols());
  if (alpha.size() != n) throw ConfigError("alpha must have one entry per channel");
  if (first_target + 1 >= L) throw DataError("window too short for GL targets");
  const std::size_t T = L - 1 - first_target;
  Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(T));
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto psi = psi_weights(alpha(c), j_mem);
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t k1 = first_target + t + 1;  // time index of Delta^alpha x
      const std::size_t lim = std::min(k1, j_mem);
      double acc = 0.0;
      for (std::size_t i = 0; i <= lim; ++i) acc += psi.weights[i] * window(c, static_cast<Eigen::Index>(k1 - i));
      Z(c, static_cast<Eigen::Index>(t)) = acc;
    }
  }
  return Z;
}

namespace {

double rms(const Eigen::MatrixXd& r) { return r.norm() / std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, r.size()))); }

double condition(const Eigen::MatrixXd& gram) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

void normalize_inputs(Eigen::MatrixXd& B, Eigen::MatrixXd& U) {
  for (Eigen::Index c = 0; c < B.cols(); ++c) {
    const double s = B.col(c).norm();
    if (s > 0.0) {
      B.col(c) /= s;
      U.row(c) *= s;
    }
  }
}

}  // namespace

FractionalModel fit(const Eigen::MatrixXd& window, const Eigen::VectorXd& alpha, std::size_t p,
                    const EmOptions& opts) {
  const Eigen::Index n = window.rows();
  const auto L = static_cast<std::size_t>(window.cols());
  if (n < 1) throw DataError("window has no channels");
  if (alpha.size() != n) throw ConfigError("alpha must have one entry per channel");
  if (p >= static_cast<std::size_t>(n)) throw ConfigError("latent input dimension p must be < n");
  if (!window.allFinite()) throw DataError("window contains non-finite samples");
  const std::size_t j_mem = opts.j_mem == 0 ? std::min<std::size_t>(L - 1, 100) : opts.j_mem;
  if (L <= j_mem + 10 * static_cast<std::size_t>(n)) {
    throw DataError("window length " + std::to_string(L) + " must exceed J_mem + 10 n = " +
                    std::to_string(j_mem + 10 * static_cast<std::size_t>(n)));
  }

  const std::size_t k0 = opts.skip_warmup ? j_mem - 1 : 0;
  const auto T = static_cast<Eigen::Index>(L - 1 - k0);
  const Eigen::MatrixXd X = window.block(0, static_cast<Eigen::Index>(k0), n, T);
  const Eigen::MatrixXd Z = gl_targets(window, alpha, j_mem, k0);
  const auto P = static_cast<Eigen::Index>(p);

  FractionalModel m;
  m.alpha = alpha;
  m.C = Eigen::MatrixXd::Identity(n, n);
  m.first_target = k0;

  const Eigen::MatrixXd G = X * X.transpose();
  m.condition_number = condition(G);
  if (m.condition_number > 1e14) {
    std::ostringstream os;
    os << "state matrix rank deficient (condition number " << m.condition_number << ")";
    throw NumericError(os.str());
  }
  const Eigen::LDLT<Eigen::MatrixXd> g_ldlt(G);
  const Eigen::MatrixXd XZt = X * Z.transpose();

  // Ridge initialisation, inputs ignored.
  const double lambda = opts.ridge * G.trace() / static_cast<double>(n);
  Eigen::MatrixXd A =
      (G + lambda * Eigen::MatrixXd::Identity(n, n)).ldlt().solve(XZt).transpose();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, P);
  Eigen::MatrixXd U = Eigen::MatrixXd::Zero(P, T);
  const Eigen::MatrixXd R0 = Z - A * X;
  m.residual_trace.push_back(rms(R0));

  const Eigen::MatrixXd A_ols = g_ldlt.solve(XZt).transpose();
  const double z_norm = Z.norm();
  if (p > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(R0, Eigen::ComputeThinU);
    B = svd.matrixU().leftCols(P) * svd.singularValues().head(P).asDiagonal();
    for (Eigen::Index c = 0; c < P; ++c) {
      const double s = B.col(c).norm();
      if (s > 0.0) B.col(c) /= s;
    }
  }

  if (p > 0 && (Z - A_ols * X).norm() <= 1e-10 * std::max(z_norm, std::numeric_limits<double>::min())) {
    // Nothing left for latent inputs to explain.
    m.A = A_ols;
    m.B = B;
    m.U = Eigen::MatrixXd::Zero(P, T);
    m.inputs_negligible = true;
    m.converged = true;
    m.residual_trace.push_back(rms(Z - A_ols * X));
    m.residual_rms = m.residual_trace.back();
    return m;
  }

  Eigen::MatrixXd best_A = A, best_B = B, best_U = U;
  int increases = 0;
  for (std::size_t iter = 1; iter <= opts.max_iter; ++iter) {
    Eigen::MatrixXd theta_prev(n, n + P);
    theta_prev << A, B;

    if (p > 0) {
      // E-step and gauge fix.
      U = (B.transpose() * B).ldlt().solve(B.transpose() * (Z - A * X));
      const Eigen::MatrixXd Cg = g_ldlt.solve(X * U.transpose()).transpose();  // p x n
      U -= Cg * X;
      A += B * Cg;
    }

    // M-step on the stacked regressors.
    Eigen::MatrixXd Phi(n + P, T);
    Phi << X, U;
    const Eigen::MatrixXd gram = Phi * Phi.transpose();
    const double cond = condition(gram);
    if (cond > 1e14) {
      std::ostringstream os;
      os << "rank-deficient M-step (condition number " << cond << ")";
      throw NumericError(os.str());
    }
    const Eigen::MatrixXd theta = gram.ldlt().solve(Phi * Z.transpose()).transpose();
    A = theta.leftCols(n);
    B = theta.rightCols(P);
    normalize_inputs(B, U);

    const double r = rms(Z - A * X - B * U);
    const double prev = m.residual_trace.back();
    m.residual_trace.push_back(r);
    m.iterations = iter;
    if (r > prev * (1.0 + 1e-12)) {
      if (++increases >= 2) {
        A = best_A;
        B = best_B;
        U = best_U;
        m.residual_trace.pop_back();
        break;
      }
    } else {
      increases = 0;
      best_A = A;
      best_B = B;
      best_U = U;
    }

    Eigen::MatrixXd theta_now(n, n + P);
    theta_now << A, B;
    const double change = (theta_now - theta_prev).norm() / std::max(theta_prev.norm(), 1e-300);
    if (change < opts.tol) {
      m.converged = true;
      break;
    }
  }
  m.A = A;
  m.B = B;
  m.U = U;
  m.residual_rms = rms(Z - A * X - B * U);
  return m;
}

// ---------------------------------------------------------------------------

std::size_t CouplingTrajectory::invalid_count() const {
  return static_cast<std::size_t>(std::count_if(fits.begin(), fits.end(), [](const WindowFit& f) { return !f.valid; }));
}

Eigen::MatrixXd CouplingTrajectory::coupling(std::size_t w) const {
  const auto n = static_cast<Eigen::Index>(n_channels);
  Eigen::MatrixXd A(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) A(r, c) = matrices(static_cast<Eigen::Index>(w), r * n + c);
  }
  return A;
}

Eigen::MatrixXd CouplingTrajectory::valid_matrices() const {
  std::vector<Eigen::Index> rows;
  for (std::size_t w = 0; w < fits.size(); ++w) {
    if (fits[w].valid) rows.push_back(static_cast<Eigen::Index>(w));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), matrices.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = matrices.row(rows[i]);
  return out;
}

CouplingTrajectory coupling_trajectory(const ingest::WindowedSeries& series, const Eigen::VectorXd& alpha,
                                       std::size_t p, const EmOptions& opts) {
  if (series.windows.empty()) throw DataError("coupling trajectory needs at least one window");
  const auto n = series.windows.front().rows();
  CouplingTrajectory traj;
  traj.n_channels = static_cast<std::size_t>(n);
  traj.trial_id = series.trial_id;
  traj.fatigue_level = series.label;
  traj.matrices = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(series.size()), n * n);
  traj.fits.resize(series.size());

  parallel_for(series.size(), [&](std::size_t w) {
    WindowFit wf;
    try {
      const FractionalModel m = fit(series.windows[w], alpha, p, opts);
      if (!m.A.allFinite()) throw NumericError("non-finite coupling matrix");
      for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) traj.matrices(static_cast<Eigen::Index>(w), r * n + c) = m.A(r, c);
      }
      wf.valid = true;
      wf.residual_rms = m.residual_rms;
      wf.iterations = m.iterations;
      wf.converged = m.converged;
    } catch (const NumericError& e) {
      wf.error = e.what();
    } catch (const DataError& e) {
      wf.error = e.what();
    }
    traj.fits[w] = wf;
  });

  const std::size_t bad = traj.invalid_count();
  if (5 * bad > series.size()) {
    throw NumericError("trial " + series.trial_id + ": " + std::to_string(bad) + " of " +
                       std::to_string(series.size()) + " window fits failed");
  }
  return traj;
}

void write_trajectories_csv(const fs::path& path, const std::vector<CouplingTrajectory>& trajs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t n = trajs.empty() ? 0 : trajs.front().n_channels;
  out << "trial_id,label,window_index,valid";
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) out << ",a_" << r << '_' << c;
  }
  out << ",residual_rms,iterations,converged\n";
  for (const auto& t : trajs) {
    if (t.n_channels != n) throw DataError("trajectories with different channel counts");
    for (std::size_t w = 0; w < t.windows(); ++w) {
      const auto& f = t.fits[w];
      out << t.trial_id << ',' << t.fatigue_level << ',' << w << ',' << (f.valid ? 1 : 0);
      for (Eigen::Index k = 0; k < t.matrices.cols(); ++k) {
        out << ',' << ingest::format_double(t.matrices(static_cast<Eigen::Index>(w), k));
      }
      out << ',' << ingest::format_double(f.residual_rms) << ',' << f.iterations << ',' << (f.converged ? 1 : 0)
          << '\n';
    }
  }
}

std::vector<CouplingTrajectory> read_trajectories_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty trajectory file");
  const auto header = ingest::split_line(line, ',');
  if (header.size() < 8 || header[0] != "trial_id") throw DataError(path.string() + ": not a trajectory CSV");
  const std::size_t n_coef = header.size() - 7;
  const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n_coef))));
  if (n * n != n_coef) throw DataError(path.string() + ": coupling columns do not form a square matrix");

  struct Rows {
    CouplingTrajectory traj;
    std::vector<std::vector<double>> coef;
  };
  std::vector<Rows> acc;
  std::map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  auto to_double = [&](const std::string& s) {
    double v = 0.0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (ingest::trim(line).empty()) continue;
    const auto cells = ingest::split_line(line, ',');
    if (cells.size() != header.size()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    auto it = index.find(cells[0]);
    if (it == index.end()) {
      it = index.emplace(cells[0], acc.size()).first;
      acc.emplace_back();
      acc.back().traj.trial_id = cells[0];
      acc.back().traj.fatigue_level = static_cast<int>(to_double(cells[1]));
      acc.back().traj.n_channels = n;
    }
    Rows& r = acc[it->second];
    WindowFit f;
    f.valid = cells[3] == "1";
    std::vector<double> coef(n_coef);
    for (std::size_t k = 0; k < n_coef; ++k) coef[k] = to_double(cells[4 + k]);
    f.residual_rms = to_double(cells[4 + n_coef]);
    f.iterations = static_cast<std::size_t>(to_double(cells[5 + n_coef]));
    f.converged = cells[6 + n_coef] == "1";
    r.traj.fits.push_back(f);
    r.coef.push_back(std::move(coef));
  }
  std::vector<CouplingTrajectory> out;
  for (auto& r : acc) {
    r.traj.matrices.resize(static_cast<Eigen::Index>(r.coef.size()), static_cast<Eigen::Index>(n_coef));
    for (std::size_t w = 0; w < r.coef.size(); ++w) {
      for (std::size_t k = 0; k < n_coef; ++k) {
        r.traj.matrices(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(k)) = r.coef[w][k];
      }
    }
    out.push_back(std::move(r.traj));
  }
  return out;
}

}  // namespace fdnml::fracnet
