#include "fdnml/nn.hpp"

#include "fdnml/common.hpp"

#include <cmath>

namespace fdnml::nn {

Param::Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool wd)
    : name(std::move(n)),
      value(Eigen::MatrixXd::Zero(rows, cols)),
      grad(Eigen::MatrixXd::Zero(rows, cols)),
      m(Eigen::MatrixXd::Zero(rows, cols)),
      v(Eigen::MatrixXd::Zero(rows, cols)),
      decay(wd) {}

namespace {

void uniform_fill(Eigen::MatrixXd& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Conv1d::Conv1d(int in, int out, int kernel, int stride, int padding)
    : in_(in),
      out_(out),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      w_("conv.w", out, in * kernel),
      b_("conv.b", out, 1, false) {
  if (in < 1 || out < 1 || kernel < 1 || stride < 1 || padding < 0) throw ConfigError("invalid conv1d shape");
}

void Conv1d::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ * k_));
  uniform_fill(w_.value, bound, rng);
  uniform_fill(b_.value, bound, rng);
}

Batch Conv1d::forward(const Batch& x, const Context&) {
  Batch out(x.size());
  cols_.resize(x.size());
  lengths_.resize(x.size());
  for (std::size_t s = 0; s < x.size(); ++s) {
    const auto& xs = x[s];
    if (xs.rows() != in_) throw DataError("conv1d: expected " + std::to_string(in_) + " input channels");
    const auto L = static_cast<int>(xs.cols());
    const int lo = output_length(L);
    if (lo < 1) throw DataError("conv1d: input shorter than the kernel");
    lengths_[s] = L;
    Eigen::MatrixXd& col = cols_[s];
    col.setZero(in_ * k_, lo);
    for (int o = 0; o < lo; ++o) {
      for (int t = 0; t < k_; ++t) {
        const int pos = o * stride_ + t - pad_;
        if (pos < 0 || pos >= L) continue;
        for (int c = 0; c < in_; ++c) col(c * k_ + t, o) = xs(c, pos);
      }
    }
    out[s] = w_.value * col;
    out[s].colwise() += b_.value.col(0);
  }
  return out;
}

Batch Conv1d::backward(const Batch& grad) {
  Batch dx(grad.size());
  for (std::size_t s = 0; s < grad.size(); ++s) {
    const auto& g = grad[s];
    w_.grad.noalias() += g * cols_[s].transpose();
    b_.grad.col(0) += g.rowwise().sum();
    const Eigen::MatrixXd dcol = w_.value.transpose() * g;
    const auto L = static_cast<int>(lengths_[s]);
    dx[s].setZero(in_, L);
    for (Eigen::Index o = 0; o < g.cols(); ++o) {
      for (int t = 0; t < k_; ++t) {
        const int pos = static_cast<int>(o) * stride_ + t - pad_;
        if (pos < 0 || pos >= L) continue;
        for (int c = 0; c < in_; ++c) dx[s](c, pos) += dcol(c * k_ + t, o);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

BatchNorm1d::BatchNorm1d(int channels, double momentum, double eps)
    : c_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_("bn.gamma", channels, 1, false),
      beta_("bn.beta", channels, 1, false),
      running_mean_(Eigen::MatrixXd::Zero(channels, 1)),
      running_var_(Eigen::MatrixXd::Ones(channels, 1)) {
  gamma_.value.setOnes();
}

Batch BatchNorm1d::forward(const Batch& x, const Context& ctx) {
  Batch out(x.size());
  for (const auto& xs : x) {
    if (xs.rows() != c_) throw DataError("batchnorm: channel mismatch");
  }
  used_batch_stats_ = ctx.training;
  Eigen::VectorXd mean = running_mean_.col(0);
  Eigen::VectorXd var = running_var_.col(0);
  if (ctx.training) {
    double m = 0.0;
    mean.setZero(c_);
    for (const auto& xs : x) {
      mean += xs.rowwise().sum();
      m += static_cast<double>(xs.cols());
    }
    mean /= m;
    var.setZero(c_);
    for (const auto& xs : x) var += (xs.colwise() - mean).array().square().matrix().rowwise().sum();
    var /= m;
    const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
    running_mean_.col(0) = (1.0 - momentum_) * running_mean_.col(0) + momentum_ * mean;
    running_var_.col(0) = (1.0 - momentum_) * running_var_.col(0) + momentum_ * unbias * var;
  }
  inv_std_ = (var.array() + eps_).rsqrt().matrix();
  xhat_.resize(x.size());
  for (std::size_t s = 0; s < x.size(); ++s) {
    xhat_[s] = inv_std_.asDiagonal() * (x[s].colwise() - mean);
    out[s] = gamma_.value.col(0).asDiagonal() * xhat_[s];
    out[s].colwise() += beta_.value.col(0);
  }
  return out;
}

Batch BatchNorm1d::backward(const Batch& grad) {
  Batch dx(grad.size());
  Eigen::VectorXd sum_dxhat = Eigen::VectorXd::Zero(c_);
  Eigen::VectorXd sum_dxhat_xhat = Eigen::VectorXd::Zero(c_);
  double m = 0.0;
  for (std::size_t s = 0; s < grad.size(); ++s) {
    gamma_.grad.col(0) += grad[s].cwiseProduct(xhat_[s]).rowwise().sum();
    beta_.grad.col(0) += grad[s].rowwise().sum();
    const Eigen::MatrixXd dxhat = gamma_.value.col(0).asDiagonal() * grad[s];
    sum_dxhat += dxhat.rowwise().sum();
    sum_dxhat_xhat += dxhat.cwiseProduct(xhat_[s]).rowwise().sum();
    m += static_cast<double>(grad[s].cols());
  }
  for (std::size_t s = 0; s < grad.size(); ++s) {
    const Eigen::MatrixXd dxhat = gamma_.value.col(0).asDiagonal() * grad[s];
    if (!used_batch_stats_) {
      dx[s] = inv_std_.asDiagonal() * dxhat;
      continue;
    }
    Eigen::MatrixXd t = m * dxhat;
    t.colwise() -= sum_dxhat;
    t -= sum_dxhat_xhat.asDiagonal() * xhat_[s];
    dx[s] = (inv_std_ / m).asDiagonal() * t;
  }
  return dx;
}

// ---------------------------------------------------------------------------

Batch Relu::forward(const Batch& x, const Context&) {
  Batch out(x.size());
  mask_.resize(x.size());
  for (std::size_t s = 0; s < x.size(); ++s) {
    mask_[s] = (x[s].array() > 0.0).cast<double>().matrix();
    out[s] = x[s].cwiseProduct(mask_[s]);
  }
  return out;
}

Batch Relu::backward(const Batch& grad) {
  Batch dx(grad.size());
  for (std::size_t s = 0; s < grad.size(); ++s) dx[s] = grad[s].cwiseProduct(mask_[s]);
  return dx;
}

Batch GlobalAvgPool::forward(const Batch& x, const Context&) {
  Batch out(x.size());
  lengths_.resize(x.size());
  for (std::size_t s = 0; s < x.size(); ++s) {
    lengths_[s] = x[s].cols();
    out[s] = x[s].rowwise().mean();
  }
  return out;
}

Batch GlobalAvgPool::backward(const Batch& grad) {
  Batch dx(grad.size());
  for (std::size_t s = 0; s < grad.size(); ++s) {
    dx[s] = grad[s].col(0).replicate(1, lengths_[s]) / static_cast<double>(lengths_[s]);
  }
  return dx;
}

// ---------------------------------------------------------------------------

Linear::Linear(int in, int out) : in_(in), out_(out), w_("linear.w", out, in), b_("linear.b", out, 1, false) {
  if (in < 1 || out < 1) throw ConfigError("invalid linear shape");
}

void Linear::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  uniform_fill(w_.value, bound, rng);
  uniform_fill(b_.value, bound, rng);
}

Batch Linear::forward(const Batch& x, const Context&) {
  Batch out(x.size());
  x_.resize(x.size());
  shapes_.resize(x.size());
  for (std::size_t s = 0; s < x.size(); ++s) {
    if (x[s].size() != in_) {
      throw DataError("linear: expected " + std::to_string(in_) + " inputs, got " + std::to_string(x[s].size()));
    }
    shapes_[s] = {x[s].rows(), x[s].cols()};
    x_[s] = x[s].reshaped(in_, 1);
    out[s] = w_.value * x_[s] + b_.value;
  }
  return out;
}

Batch Linear::backward(const Batch& grad) {
  Batch dx(grad.size());
  for (std::size_t s = 0; s < grad.size(); ++s) {
    w_.grad.noalias() += grad[s] * x_[s].transpose();
    b_.grad += grad[s];
    const Eigen::MatrixXd d = w_.value.transpose() * grad[s];
    dx[s] = d.reshaped(shapes_[s].first, shapes_[s].second);
  }
  return dx;
}

// ---------------------------------------------------------------------------

Batch Dropout::forward(const Batch& x, const Context& ctx) {
  if (!ctx.training || rate_ <= 0.0) {
    mask_.clear();
    return x;
  }
  if (ctx.rng == nullptr) throw ConfigError("dropout in training mode needs a random generator");
  std::bernoulli_distribution keep(1.0 - rate_);
  const double scale = 1.0 / (1.0 - rate_);
  Batch out(x.size());
  mask_.resize(x.size());
  for (std::size_t s = 0; s < x.size(); ++s) {
    mask_[s].resize(x[s].rows(), x[s].cols());
    for (Eigen::Index j = 0; j < x[s].cols(); ++j) {
      for (Eigen::Index i = 0; i < x[s].rows(); ++i) mask_[s](i, j) = keep(*ctx.rng) ? scale : 0.0;
    }
    out[s] = x[s].cwiseProduct(mask_[s]);
  }
  return out;
}

Batch Dropout::backward(const Batch& grad) {
  if (mask_.empty()) return grad;
  Batch dx(grad.size());
  for (std::size_t s = 0; s < grad.size(); ++s) dx[s] = grad[s].cwiseProduct(mask_[s]);
  return dx;
}

// ---------------------------------------------------------------------------

Batch Sequential::forward(const Batch& x, const Context& ctx) {
  Batch h = x;
  for (auto& l : layers_) h = l->forward(h, ctx);
  return h;
}

Batch Sequential::backward(const Batch& grad) {
  Batch g = grad;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    for (auto* p : l->params()) out.push_back(p);
  }
  return out;
}

std::vector<Eigen::MatrixXd*> Sequential::buffers() {
  std::vector<Eigen::MatrixXd*> out;
  for (auto& l : layers_) {
    for (auto* b : l->buffers()) out.push_back(b);
  }
  return out;
}

void Sequential::init(std::mt19937_64& rng) {
  for (auto& l : layers_) l->init(rng);
}

std::size_t Sequential::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

Eigen::MatrixXd stack_rows(const Batch& b) {
  if (b.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(b.size()), b.front().size());
  for (std::size_t s = 0; s < b.size(); ++s) m.row(static_cast<Eigen::Index>(s)) = b[s].reshaped(1, b[s].size());
  return m;
}

Batch unstack_rows(const Eigen::MatrixXd& m) {
  Batch b(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) b[static_cast<std::size_t>(r)] = m.row(r).transpose();
  return b;
}

// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<Param*> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {}

void AdamW::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (auto* p : params_) {
    if (p->decay && opts_.weight_decay > 0.0) p->value *= 1.0 - lr * opts_.weight_decay;
    p->m = opts_.beta1 * p->m + (1.0 - opts_.beta1) * p->grad;
    p->v = opts_.beta2 * p->v + (1.0 - opts_.beta2) * p->grad.cwiseAbs2();
    p->value.array() -= lr * (p->m.array() / bc1) / ((p->v.array() / bc2).sqrt() + opts_.eps);
  }
}

}  // namespace fdnml::nn
