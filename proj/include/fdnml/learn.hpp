#pragma once

#include "fdnml/nn.hpp"

#include <Eigen/Dense>

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fdnml::learn {

struct EncoderConfig {
  int embedding_dim{32};
  std::vector<int> raw_widths{8, 16};
  std::vector<int> raw_kernels{7, 5};
  int raw_stride{2};
  bool batch_norm{true};
  int feature_channels{2};
  int feature_kernel{3};
  double dropout{0.3};
  int n_classes{3};

  void validate() const;
};

enum class EvalUnit { window, trial };
EvalUnit parse_eval_unit(const std::string& name);
std::string eval_unit_name(EvalUnit u);

struct TrainConfig {
  double temperature{0.2};
  double lr{1e-3};
  double weight_decay{1e-5};
  std::size_t batch_size{32};
  std::size_t pretrain_epochs{100};
  std::size_t max_epochs{300};
  std::size_t patience{20};
  bool cosine_schedule{true};
  double val_fraction{0.2};
  bool pretrain{true};
  bool freeze_encoders{false};
  std::size_t folds{5};
  EvalUnit unit{EvalUnit::window};
  std::uint64_t seed{0};

  void validate() const;
};

// Matched (raw window, feature vector) pairs. raw[i] is [channels x length].
struct Dataset {
  std::vector<Eigen::MatrixXd> raw;
  Eigen::MatrixXd features;          // [N x F]
  std::vector<int> labels;           // 0 .. n_classes-1
  std::vector<std::string> groups;   // trial id of each window
  std::vector<std::size_t> window_index;

  std::size_t size() const { return labels.size(); }
  void validate() const;
  Dataset subset(const std::vector<std::size_t>& idx) const;
};

// Joins a windows CSV and a features CSV on (trial_id, window_index); windows
// without a feature row (dropped fits) are skipped.
Dataset load_dataset(const std::filesystem::path& windows_csv, const std::filesystem::path& features_csv);

// ---------------------------------------------------------------------------
// Contrastive objective
// ---------------------------------------------------------------------------

struct ContrastiveLoss {
  double loss{0.0};
  Eigen::MatrixXd grad_r;  // dL/dz_r, [N x k]
  Eigen::MatrixXd grad_f;
  bool zero_norm{false};   // some embedding had norm below 1e-12
};

// Symmetric normalized-temperature cross-entropy over L2-normalized
// embeddings. Row i of z_r and z_f is a positive pair; the other rows of the
// batch are negatives. The positive stays in the softmax denominator, so equal
// similarities give ln N per anchor.
ContrastiveLoss contrastive_loss(const Eigen::MatrixXd& z_r, const Eigen::MatrixXd& z_f, double tau,
                                 bool with_grad = true);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Normalizer {
  Eigen::VectorXd raw_mean, raw_std;    // per raw channel
  Eigen::VectorXd feat_mean, feat_std;  // per feature column
};

class Model {
 public:
  Model(EncoderConfig cfg, int raw_channels, int raw_length, int n_features);

  void init(std::uint64_t seed);
  void fit_normalizer(const Dataset& ds, const std::vector<std::size_t>& idx);

  nn::Batch raw_batch(const Dataset& ds, const std::vector<std::size_t>& idx) const;
  nn::Batch feature_batch(const Dataset& ds, const std::vector<std::size_t>& idx) const;

  // [B x k] embeddings of already-normalized batches.
  Eigen::MatrixXd encode_raw(const nn::Batch& x, const nn::Context& ctx);
  Eigen::MatrixXd encode_features(const nn::Batch& x, const nn::Context& ctx);
  // [B x classes] logits.
  Eigen::MatrixXd logits(const nn::Batch& raw, const nn::Batch& feat, const nn::Context& ctx);

  // Forward + backward; gradients accumulate into the parameters.
  double contrastive_step(const nn::Batch& raw, const nn::Batch& feat, double tau, const nn::Context& ctx);
  double classification_step(const nn::Batch& raw, const nn::Batch& feat, const std::vector<int>& labels,
                             const nn::Context& ctx);

  Eigen::MatrixXd predict_proba(const Dataset& ds, const std::vector<std::size_t>& idx);

  std::vector<nn::Param*> encoder_params();
  std::vector<nn::Param*> head_params();
  std::vector<nn::Param*> params();
  std::vector<Eigen::MatrixXd*> buffers();
  std::size_t parameter_count();

  const EncoderConfig& config() const { return cfg_; }
  int raw_channels() const { return raw_channels_; }
  int raw_length() const { return raw_length_; }
  int n_features() const { return n_features_; }
  Normalizer& normalizer() { return norm_; }

  nn::Sequential raw_encoder;
  nn::Sequential feature_encoder;
  nn::Sequential head;

 private:
  EncoderConfig cfg_;
  int raw_channels_, raw_length_, n_features_;
  Normalizer norm_;
  Eigen::MatrixXd emb_r_, emb_f_;
};

// Self-describing binary container: "FDNMLCK1", uint32 format version,
// uint64 JSON length, JSON (architecture, shapes, normalizer, feature layout
// version), uint64 value count, raw little-endian doubles (parameters then
// buffers).
void save_checkpoint(const std::filesystem::path& path, Model& model, int feature_layout_version,
                     const nlohmann::json& extra = {});
struct LoadedModel {
  std::unique_ptr<Model> model;
  int feature_layout_version{0};
  nlohmann::json extra;
};
LoadedModel load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct Curves {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;  // classifier stage only
  std::size_t best_epoch{0};
  double best_val_loss{0.0};
};

Curves pretrain(Model& model, const Dataset& ds, const std::vector<std::size_t>& train_idx,
                const std::vector<std::size_t>& val_idx, const TrainConfig& cfg);

Curves train_classifier(Model& model, const Dataset& ds, const std::vector<std::size_t>& train_idx,
                        const std::vector<std::size_t>& val_idx, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ClassMetrics {
  std::optional<double> precision;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> f1;
  std::optional<double> auroc;
  std::size_t support{0};
};

struct MetricSet {
  Eigen::MatrixXi confusion;  // rows true class, columns predicted
  std::vector<ClassMetrics> per_class;
  double accuracy{0.0};
  std::optional<double> macro_precision, macro_sensitivity, macro_specificity, macro_f1, macro_auroc;
  std::vector<std::string> undefined;  // e.g. "precision[2]"
};

Eigen::MatrixXi confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted, int classes);

// scores: [N x classes] probabilities; labels: true classes.
MetricSet metrics(const Eigen::MatrixXi& confusion, const Eigen::MatrixXd& scores, const std::vector<int>& labels);
MetricSet metrics_from_scores(const Eigen::MatrixXd& scores, const std::vector<int>& labels);

// ROC area by trapezoidal integration over the sorted scores (ties form a
// single diagonal step).
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<bool>& positive);
// Mann-Whitney U / (n_pos n_neg) with average ranks.
std::optional<double> auroc_rank(const std::vector<double>& scores, const std::vector<bool>& positive);

// Fold id per unit, stratified by label: per-fold class counts differ from
// the proportional share by at most one.
std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t k, std::uint64_t seed);

struct FoldResult {
  std::size_t fold{0};
  std::size_t n_train{0};
  std::size_t n_test{0};
  Curves pretrain_curves;
  Curves classifier_curves;
  MetricSet test;
  std::vector<std::size_t> test_units;  // window or trial indices
  Eigen::MatrixXd test_scores;
  std::vector<int> test_labels;
};

struct Aggregate {
  double mean{0.0};
  double sd{0.0};
};

struct CvReport {
  std::string model;  // "fdnml" or "majority"
  EvalUnit unit{EvalUnit::window};
  std::vector<FoldResult> folds;
  std::size_t parameter_count{0};
  Aggregate accuracy, macro_auroc, macro_f1;
  MetricSet pooled;  // all held-out predictions together
};

CvReport crossvalidate(const Dataset& ds, const EncoderConfig& enc, const TrainConfig& cfg);
CvReport majority_baseline(const Dataset& ds, const TrainConfig& cfg);

// Trains one model on the whole dataset (minus a stratified validation split
// used for early stopping).
struct TrainedModel {
  std::unique_ptr<Model> model;
  Curves pretrain_curves;
  Curves classifier_curves;
};
TrainedModel train_full(const Dataset& ds, const EncoderConfig& enc, const TrainConfig& cfg);

// Scores a trained model on every unit of `ds`; trial units average the
// window probabilities.
struct Evaluation {
  MetricSet metrics;
  Eigen::MatrixXd scores;  // [units x classes]
  std::vector<int> labels;
  std::vector<std::string> unit_names;
};
Evaluation evaluate(Model& model, const Dataset& ds, EvalUnit unit);

nlohmann::json to_json(const MetricSet& m);
nlohmann::json to_json(const CvReport& r, bool include_curves = true);

}  // namespace fdnml::learn
