#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

// Minimal double-precision layers with explicit backward passes. A sample is
// a [channels x length] matrix; vector-valued activations are [d x 1].
namespace fdnml::nn {

using Batch = std::vector<Eigen::MatrixXd>;

struct Param {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd m;  // AdamW moments
  Eigen::MatrixXd v;
  bool decay{true};

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool wd = true);
  void zero_grad() { grad.setZero(); }
};

struct Context {
  bool training{false};
  std::mt19937_64* rng{nullptr};  // dropout masks; required when training
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Batch forward(const Batch& x, const Context& ctx) = 0;
  // Accumulates parameter gradients and returns the input gradient.
  virtual Batch backward(const Batch& grad) = 0;
  virtual std::vector<Param*> params() { return {}; }
  // Non-trainable state saved with the model (batch-norm running statistics).
  virtual std::vector<Eigen::MatrixXd*> buffers() { return {}; }
  virtual void init(std::mt19937_64& /*rng*/) {}
  virtual std::string name() const = 0;
};

class Conv1d : public Layer {
 public:
  Conv1d(int in, int out, int kernel, int stride, int padding);
  Batch forward(const Batch& x, const Context& ctx) override;
  Batch backward(const Batch& grad) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  void init(std::mt19937_64& rng) override;
  std::string name() const override { return "conv1d"; }
  int output_length(int length) const { return (length + 2 * pad_ - k_) / stride_ + 1; }

 private:
  int in_, out_, k_, stride_, pad_;
  Param w_, b_;
  std::vector<Eigen::MatrixXd> cols_;
  std::vector<Eigen::Index> lengths_;
};

class BatchNorm1d : public Layer {
 public:
  explicit BatchNorm1d(int channels, double momentum = 0.1, double eps = 1e-5);
  Batch forward(const Batch& x, const Context& ctx) override;
  Batch backward(const Batch& grad) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<Eigen::MatrixXd*> buffers() override { return {&running_mean_, &running_var_}; }
  std::string name() const override { return "batchnorm1d"; }

 private:
  int c_;
  double momentum_, eps_;
  Param gamma_, beta_;
  Eigen::MatrixXd running_mean_, running_var_;  // [c x 1]
  Batch xhat_;
  Eigen::VectorXd inv_std_;
  bool used_batch_stats_{false};
};

class Relu : public Layer {
 public:
  Batch forward(const Batch& x, const Context& ctx) override;
  Batch backward(const Batch& grad) override;
  std::string name() const override { return "relu"; }

 private:
  Batch mask_;
};

// [c x L] -> [c x 1]
class GlobalAvgPool : public Layer {
 public:
  Batch forward(const Batch& x, const Context& ctx) override;
  Batch backward(const Batch& grad) override;
  std::string name() const override { return "gap"; }

 private:
  std::vector<Eigen::Index> lengths_;
};

// Flattens each sample column-major and applies y = W x + b, output [out x 1].
class Linear : public Layer {
 public:
  Linear(int in, int out);
  Batch forward(const Batch& x, const Context& ctx) override;
  Batch backward(const Batch& grad) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  void init(std::mt19937_64& rng) override;
  std::string name() const override { return "linear"; }

 private:
  int in_, out_;
  Param w_, b_;
  Batch x_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes_;
};

// Inverted dropout; identity outside training.
class Dropout : public Layer {
 public:
  explicit Dropout(double rate) : rate_(rate) {}
  Batch forward(const Batch& x, const Context& ctx) override;
  Batch backward(const Batch& grad) override;
  std::string name() const override { return "dropout"; }

 private:
  double rate_;
  Batch mask_;
};

class Sequential {
 public:
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  Batch forward(const Batch& x, const Context& ctx);
  Batch backward(const Batch& grad);
  std::vector<Param*> params();
  std::vector<Eigen::MatrixXd*> buffers();
  void init(std::mt19937_64& rng);
  std::size_t parameter_count();
  Layer& back() { return *layers_.back(); }
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Stacks [d x 1] samples into rows of a [B x d] matrix and back.
Eigen::MatrixXd stack_rows(const Batch& b);
Batch unstack_rows(const Eigen::MatrixXd& m);

struct AdamWOptions {
  double lr{1e-3};
  double weight_decay{1e-5};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

class AdamW {
 public:
  AdamW(std::vector<Param*> params, AdamWOptions opts);
  void zero_grad();
  void step(double lr);

 private:
  std::vector<Param*> params_;
  AdamWOptions opts_;
  std::size_t t_{0};
};

}  // namespace fdnml::nn
