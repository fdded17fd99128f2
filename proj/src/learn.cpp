#include "fdnml/learn.hpp"

#include "fdnml/common.hpp"
#include "fdnml/distance.hpp"
#include "fdnml/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace fdnml::learn {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (embedding_dim < 8) throw ConfigError("embedding_dim must be >= 8");
  if (raw_widths.empty() || raw_widths.size() != raw_kernels.size()) {
    throw ConfigError("raw_widths and raw_kernels must be nonempty and equally long");
  }
  for (int w : raw_widths) {
    if (w < 1) throw ConfigError("raw conv widths must be positive");
  }
  for (int k : raw_kernels) {
    if (k < 1) throw ConfigError("raw conv kernels must be positive");
  }
  if (raw_stride < 1) throw ConfigError("raw_stride must be >= 1");
  if (feature_channels < 1 || feature_kernel < 1) throw ConfigError("feature conv shape must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (n_classes < 2) throw ConfigError("need at least two classes");
}

EvalUnit parse_eval_unit(const std::string& name) {
  if (name == "window") return EvalUnit::window;
  if (name == "trial") return EvalUnit::trial;
  throw ConfigError("unknown evaluation unit '" + name + "' (window|trial)");
}

std::string eval_unit_name(EvalUnit u) { return u == EvalUnit::window ? "window" : "trial"; }

void TrainConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 0.5)) throw ConfigError("val_fraction must lie in [0, 0.5)");
}

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (n == 0) throw DataError("empty dataset");
  if (raw.size() != n || static_cast<std::size_t>(features.rows()) != n || groups.size() != n) {
    throw DataError("dataset arrays are not aligned");
  }
  for (const auto& r : raw) {
    if (r.rows() != raw.front().rows() || r.cols() != raw.front().cols()) throw DataError("raw windows differ in shape");
    if (!r.allFinite()) throw DataError("non-finite raw window");
  }
  if (!features.allFinite()) throw DataError("non-finite feature entry");
  for (int l : labels) {
    if (l < 0) throw DataError("negative class label");
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.raw.push_back(raw[idx[i]]);
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
    out.labels.push_back(labels[idx[i]]);
    out.groups.push_back(groups[idx[i]]);
    if (!window_index.empty()) out.window_index.push_back(window_index[idx[i]]);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& windows_csv, const std::filesystem::path& features_csv) {
  const auto series = ingest::read_windows_csv(windows_csv);
  const auto fs = distance::read_features_csv(features_csv);
  std::map<std::pair<std::string, std::size_t>, const Eigen::MatrixXd*> raw;
  for (const auto& s : series) {
    for (std::size_t w = 0; w < s.windows.size(); ++w) raw[{s.trial_id, w}] = &s.windows[w];
  }
  Dataset ds;
  std::vector<Eigen::Index> rows;
  for (std::size_t r = 0; r < fs.rows(); ++r) {
    const auto it = raw.find({fs.trial_ids[r], fs.window_index[r]});
    if (it == raw.end()) {
      throw DataError("feature row " + fs.trial_ids[r] + "#" + std::to_string(fs.window_index[r]) +
                      " has no raw window");
    }
    ds.raw.push_back(*it->second);
    ds.labels.push_back(fs.labels[r]);
    ds.groups.push_back(fs.trial_ids[r]);
    ds.window_index.push_back(fs.window_index[r]);
    rows.push_back(static_cast<Eigen::Index>(r));
  }
  ds.features = fs.x(rows, Eigen::all);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

ContrastiveLoss contrastive_loss(const Eigen::MatrixXd& z_r, const Eigen::MatrixXd& z_f, double tau, bool with_grad) {
  const Eigen::Index n = z_r.rows();
  if (n < 2) throw DataError("contrastive loss needs N >= 2 pairs");
  if (z_f.rows() != n || z_f.cols() != z_r.cols()) throw DataError("embedding batches differ in shape");
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
  constexpr double eps = 1e-12;
  ContrastiveLoss out;
  const Eigen::VectorXd nr = z_r.rowwise().norm().cwiseMax(eps);
  const Eigen::VectorXd nf = z_f.rowwise().norm().cwiseMax(eps);
  out.zero_norm = (z_r.rowwise().norm().array() < eps).any() || (z_f.rowwise().norm().array() < eps).any();
  const Eigen::MatrixXd hr = nr.cwiseInverse().asDiagonal() * z_r;
  const Eigen::MatrixXd hf = nf.cwiseInverse().asDiagonal() * z_f;
  const Eigen::MatrixXd s = hr * hf.transpose() / tau;

  const Eigen::MatrixXd p_row = softmax_rows(s);                           // anchor r_i over f_j
  const Eigen::MatrixXd p_col = softmax_rows(s.transpose()).transpose();   // anchor f_j over r_i
  double l_rf = 0.0, l_fr = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    l_rf -= std::log(p_row(i, i));
    l_fr -= std::log(p_col(i, i));
  }
  const auto nd = static_cast<double>(n);
  out.loss = 0.5 * (l_rf + l_fr) / nd;
  if (!with_grad) return out;

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd ds = 0.5 / nd * ((p_row - eye) + (p_col - eye));
  const Eigen::MatrixXd dhr = ds * hf / tau;
  const Eigen::MatrixXd dhf = ds.transpose() * hr / tau;
  auto through_norm = [](const Eigen::MatrixXd& h, const Eigen::MatrixXd& dh, const Eigen::VectorXd& norm) {
    Eigen::MatrixXd dz(h.rows(), h.cols());
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      const double proj = h.row(i).dot(dh.row(i));
      dz.row(i) = (dh.row(i) - proj * h.row(i)) / norm(i);
    }
    return dz;
  };
  out.grad_r = through_norm(hr, dhr, nr);
  out.grad_f = through_norm(hf, dhf, nf);
  return out;
}

// ---------------------------------------------------------------------------

Model::Model(EncoderConfig cfg, int raw_channels, int raw_length, int n_features)
    : cfg_(std::move(cfg)), raw_channels_(raw_channels), raw_length_(raw_length), n_features_(n_features) {
  cfg_.validate();
  if (raw_channels < 1 || raw_length < 1 || n_features < 1) throw ConfigError("model input shape must be positive");
  int in = raw_channels;
  int length = raw_length;
  for (std::size_t i = 0; i < cfg_.raw_widths.size(); ++i) {
    const int k = cfg_.raw_kernels[i];
    auto conv = std::make_unique<nn::Conv1d>(in, cfg_.raw_widths[i], k, cfg_.raw_stride, k / 2);
    length = conv->output_length(length);
    if (length < 1) throw ConfigError("raw window too short for the encoder");
    raw_encoder.add(std::move(conv));
    if (cfg_.batch_norm) raw_encoder.add(std::make_unique<nn::BatchNorm1d>(cfg_.raw_widths[i]));
    raw_encoder.add(std::make_unique<nn::Relu>());
    in = cfg_.raw_widths[i];
  }
  raw_encoder.add(std::make_unique<nn::GlobalAvgPool>());
  raw_encoder.add(std::make_unique<nn::Linear>(in, cfg_.embedding_dim));

  const int fk = cfg_.feature_kernel;
  auto fconv = std::make_unique<nn::Conv1d>(1, cfg_.feature_channels, fk, 1, fk / 2);
  const int flen = fconv->output_length(n_features);
  feature_encoder.add(std::move(fconv));
  feature_encoder.add(std::make_unique<nn::Relu>());
  feature_encoder.add(std::make_unique<nn::Linear>(cfg_.feature_channels * flen, cfg_.embedding_dim));

  head.add(std::make_unique<nn::Dropout>(cfg_.dropout));
  head.add(std::make_unique<nn::Linear>(2 * cfg_.embedding_dim, cfg_.n_classes));

  norm_.raw_mean = Eigen::VectorXd::Zero(raw_channels);
  norm_.raw_std = Eigen::VectorXd::Ones(raw_channels);
  norm_.feat_mean = Eigen::VectorXd::Zero(n_features);
  norm_.feat_std = Eigen::VectorXd::Ones(n_features);
}

void Model::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  raw_encoder.init(rng);
  feature_encoder.init(rng);
  head.init(rng);
}

void Model::fit_normalizer(const Dataset& ds, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw DataError("cannot fit normalizer on an empty split");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(raw_channels_), sq = Eigen::VectorXd::Zero(raw_channels_);
  double count = 0.0;
  for (std::size_t i : idx) {
    sum += ds.raw[i].rowwise().sum();
    sq += ds.raw[i].array().square().matrix().rowwise().sum();
    count += static_cast<double>(ds.raw[i].cols());
  }
  norm_.raw_mean = sum / count;
  norm_.raw_std = (sq / count - norm_.raw_mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd f = ds.features(std::vector<Eigen::Index>(idx.begin(), idx.end()), Eigen::all);
  norm_.feat_mean = f.colwise().mean().transpose();
  norm_.feat_std = ((f.rowwise() - norm_.feat_mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index c = 0; c < norm_.raw_std.size(); ++c) {
    if (!(norm_.raw_std(c) > 1e-12)) norm_.raw_std(c) = 1.0;
  }
  for (Eigen::Index c = 0; c < norm_.feat_std.size(); ++c) {
    if (!(norm_.feat_std(c) > 1e-12)) norm_.feat_std(c) = 1.0;
  }
}

nn::Batch Model::raw_batch(const Dataset& ds, const std::vector<std::size_t>& idx) const {
  nn::Batch b;
  b.reserve(idx.size());
  for (std::size_t i : idx) {
    const auto& r = ds.raw[i];
    if (r.rows() != raw_channels_ || r.cols() != raw_length_) throw DataError("raw window shape does not match the model");
    b.push_back(norm_.raw_std.cwiseInverse().asDiagonal() * (r.colwise() - norm_.raw_mean));
  }
  return b;
}

nn::Batch Model::feature_batch(const Dataset& ds, const std::vector<std::size_t>& idx) const {
  if (ds.features.cols() != n_features_) throw DataError("feature width does not match the model");
  nn::Batch b;
  b.reserve(idx.size());
  for (std::size_t i : idx) {
    const Eigen::RowVectorXd f = ds.features.row(static_cast<Eigen::Index>(i));
    b.push_back(((f - norm_.feat_mean.transpose()).array() / norm_.feat_std.transpose().array()).matrix());
  }
  return b;
}

Eigen::MatrixXd Model::encode_raw(const nn::Batch& x, const nn::Context& ctx) {
  return nn::stack_rows(raw_encoder.forward(x, ctx));
}

Eigen::MatrixXd Model::encode_features(const nn::Batch& x, const nn::Context& ctx) {
  return nn::stack_rows(feature_encoder.forward(x, ctx));
}

Eigen::MatrixXd Model::logits(const nn::Batch& raw, const nn::Batch& feat, const nn::Context& ctx) {
  emb_r_ = encode_raw(raw, ctx);
  emb_f_ = encode_features(feat, ctx);
  Eigen::MatrixXd joint(emb_r_.rows(), emb_r_.cols() + emb_f_.cols());
  joint << emb_r_, emb_f_;
  return nn::stack_rows(head.forward(nn::unstack_rows(joint), ctx));
}

double Model::contrastive_step(const nn::Batch& raw, const nn::Batch& feat, double tau, const nn::Context& ctx) {
  const Eigen::MatrixXd zr = encode_raw(raw, ctx);
  const Eigen::MatrixXd zf = encode_features(feat, ctx);
  const auto cl = contrastive_loss(zr, zf, tau, true);
  raw_encoder.backward(nn::unstack_rows(cl.grad_r));
  feature_encoder.backward(nn::unstack_rows(cl.grad_f));
  return cl.loss;
}

double Model::classification_step(const nn::Batch& raw, const nn::Batch& feat, const std::vector<int>& labels,
                                  const nn::Context& ctx) {
  const Eigen::MatrixXd lg = logits(raw, feat, ctx);
  const Eigen::MatrixXd p = softmax_rows(lg);
  const auto n = static_cast<double>(labels.size());
  double loss = 0.0;
  Eigen::MatrixXd d = p;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    loss -= std::log(std::max(p(r, labels[i]), 1e-300));
    d(r, labels[i]) -= 1.0;
  }
  d /= n;
  const Eigen::MatrixXd dj = nn::stack_rows(head.backward(nn::unstack_rows(d)));
  const Eigen::Index k = emb_r_.cols();
  raw_encoder.backward(nn::unstack_rows(dj.leftCols(k)));
  feature_encoder.backward(nn::unstack_rows(dj.rightCols(dj.cols() - k)));
  return loss / n;
}

Eigen::MatrixXd Model::predict_proba(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), cfg_.n_classes);
  const nn::Context ctx{false, nullptr};
  constexpr std::size_t chunk = 64;
  for (std::size_t s = 0; s < idx.size(); s += chunk) {
    const std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(s),
                                        idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + chunk)));
    const Eigen::MatrixXd p = softmax_rows(logits(raw_batch(ds, part), feature_batch(ds, part), ctx));
    out.middleRows(static_cast<Eigen::Index>(s), p.rows()) = p;
  }
  return out;
}

std::vector<nn::Param*> Model::encoder_params() {
  auto out = raw_encoder.params();
  for (auto* p : feature_encoder.params()) out.push_back(p);
  return out;
}

std::vector<nn::Param*> Model::head_params() { return head.params(); }

std::vector<nn::Param*> Model::params() {
  auto out = encoder_params();
  for (auto* p : head_params()) out.push_back(p);
  return out;
}

std::vector<Eigen::MatrixXd*> Model::buffers() {
  auto out = raw_encoder.buffers();
  for (auto* b : feature_encoder.buffers()) out.push_back(b);
  for (auto* b : head.buffers()) out.push_back(b);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'F', 'D', 'N', 'M', 'L', 'C', 'K', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, int feature_layout_version, const json& extra) {
  const auto& c = model.config();
  json meta;
  meta["architecture"] = {{"embedding_dim", c.embedding_dim},       {"raw_widths", c.raw_widths},
                          {"raw_kernels", c.raw_kernels},           {"raw_stride", c.raw_stride},
                          {"batch_norm", c.batch_norm},             {"feature_channels", c.feature_channels},
                          {"feature_kernel", c.feature_kernel},     {"dropout", c.dropout},
                          {"n_classes", c.n_classes}};
  meta["raw_channels"] = model.raw_channels();
  meta["raw_length"] = model.raw_length();
  meta["n_features"] = model.n_features();
  meta["feature_layout_version"] = feature_layout_version;
  auto& nz = model.normalizer();
  meta["normalizer"] = {{"raw_mean", vec_json(nz.raw_mean)},
                        {"raw_std", vec_json(nz.raw_std)},
                        {"feat_mean", vec_json(nz.feat_mean)},
                        {"feat_std", vec_json(nz.feat_std)}};
  std::vector<double> values;
  json shapes = json::array();
  for (auto* p : model.params()) {
    shapes.push_back({p->name, p->value.rows(), p->value.cols()});
    values.insert(values.end(), p->value.data(), p->value.data() + p->value.size());
  }
  for (auto* b : model.buffers()) {
    shapes.push_back({"buffer", b->rows(), b->cols()});
    values.insert(values.end(), b->data(), b->data() + b->size());
  }
  meta["shapes"] = shapes;
  meta["extra"] = extra;
  const std::string text = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const std::uint64_t count = values.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(path.string() + ": not an fdnml checkpoint");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion) throw DataError(path.string() + ": unsupported checkpoint version");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 26)) throw DataError(path.string() + ": corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const json meta = json::parse(text);
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw DataError(path.string() + ": truncated checkpoint");

  const auto& a = meta.at("architecture");
  EncoderConfig c;
  c.embedding_dim = a.at("embedding_dim");
  c.raw_widths = a.at("raw_widths").get<std::vector<int>>();
  c.raw_kernels = a.at("raw_kernels").get<std::vector<int>>();
  c.raw_stride = a.at("raw_stride");
  c.batch_norm = a.at("batch_norm");
  c.feature_channels = a.at("feature_channels");
  c.feature_kernel = a.at("feature_kernel");
  c.dropout = a.at("dropout");
  c.n_classes = a.at("n_classes");
  LoadedModel out;
  out.model = std::make_unique<Model>(c, meta.at("raw_channels").get<int>(), meta.at("raw_length").get<int>(),
                                      meta.at("n_features").get<int>());
  out.feature_layout_version = meta.at("feature_layout_version");
  out.extra = meta.value("extra", json{});
  auto& nz = out.model->normalizer();
  const auto& jn = meta.at("normalizer");
  nz.raw_mean = json_vec(jn.at("raw_mean"));
  nz.raw_std = json_vec(jn.at("raw_std"));
  nz.feat_mean = json_vec(jn.at("feat_mean"));
  nz.feat_std = json_vec(jn.at("feat_std"));
  std::size_t pos = 0;
  auto take = [&](Eigen::MatrixXd& m) {
    if (pos + static_cast<std::size_t>(m.size()) > values.size()) throw DataError(path.string() + ": parameter count mismatch");
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(pos),
              values.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(m.size())), m.data());
    pos += static_cast<std::size_t>(m.size());
  };
  for (auto* p : out.model->params()) take(p->value);
  for (auto* b : out.model->buffers()) take(*b);
  if (pos != values.size()) throw DataError(path.string() + ": parameter count mismatch");
  return out;
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

struct Snapshot {
  std::vector<Eigen::MatrixXd> params, buffers;

  void take(Model& m) {
    params.clear();
    buffers.clear();
    for (auto* p : m.params()) params.push_back(p->value);
    for (auto* b : m.buffers()) buffers.push_back(*b);
  }
  void restore(Model& m) const {
    auto ps = m.params();
    auto bs = m.buffers();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = params[i];
    for (std::size_t i = 0; i < bs.size(); ++i) *bs[i] = buffers[i];
  }
};

// Consecutive batches of the given order; a trailing batch with fewer than
// two items joins the previous one.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t bs) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += bs) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + bs)));
  }
  if (out.size() > 1 && out.back().size() < 2) {
    auto tail = out.back();
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

double epoch_lr(const TrainConfig& cfg, std::size_t epoch, std::size_t total) {
  if (!cfg.cosine_schedule || total <= 1) return cfg.lr;
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(total)));
}

double contrastive_eval(Model& model, const Dataset& ds, const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
  const nn::Context ctx{false, nullptr};
  double total = 0.0, weight = 0.0;
  for (const auto& b : make_batches(idx, cfg.batch_size)) {
    if (b.size() < 2) continue;
    const auto zr = model.encode_raw(model.raw_batch(ds, b), ctx);
    const auto zf = model.encode_features(model.feature_batch(ds, b), ctx);
    total += contrastive_loss(zr, zf, cfg.temperature, false).loss * static_cast<double>(b.size());
    weight += static_cast<double>(b.size());
  }
  return weight > 0.0 ? total / weight : std::numeric_limits<double>::quiet_NaN();
}

std::pair<double, double> classifier_eval(Model& model, const Dataset& ds, const std::vector<std::size_t>& idx) {
  const Eigen::MatrixXd p = model.predict_proba(ds, idx);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int y = ds.labels[idx[i]];
    loss -= std::log(std::max(p(r, y), 1e-300));
    Eigen::Index arg = 0;
    p.row(r).maxCoeff(&arg);
    if (arg == y) ++correct;
  }
  const auto n = static_cast<double>(idx.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

Curves pretrain(Model& model, const Dataset& ds, const std::vector<std::size_t>& train_idx,
                const std::vector<std::size_t>& val_idx, const TrainConfig& cfg) {
  cfg.validate();
  if (train_idx.size() < 2 * cfg.batch_size) {
    throw DataError("pretraining needs at least 2 x batch_size = " + std::to_string(2 * cfg.batch_size) +
                    " training pairs, got " + std::to_string(train_idx.size()));
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, "pretrain"));
  nn::AdamW opt(model.encoder_params(), {cfg.lr, cfg.weight_decay});
  const nn::Context ctx{true, &rng};
  Curves curves;
  curves.best_val_loss = std::numeric_limits<double>::infinity();
  Snapshot best;
  best.take(model);
  std::size_t bad = 0;
  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = epoch_lr(cfg, epoch, cfg.pretrain_epochs);
    double total = 0.0;
    const auto batches = make_batches(order, cfg.batch_size);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      opt.zero_grad();
      const double loss =
          model.contrastive_step(model.raw_batch(ds, batches[b]), model.feature_batch(ds, batches[b]), cfg.temperature, ctx);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite contrastive loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      opt.step(lr);
      total += loss * static_cast<double>(batches[b].size());
    }
    curves.train_loss.push_back(total / static_cast<double>(order.size()));
    const double val = val_idx.size() >= 2 ? contrastive_eval(model, ds, val_idx, cfg) : curves.train_loss.back();
    curves.val_loss.push_back(val);
    if (val < curves.best_val_loss) {
      curves.best_val_loss = val;
      curves.best_epoch = epoch;
      best.take(model);
      bad = 0;
    } else if (++bad >= cfg.patience) {
      break;
    }
  }
  best.restore(model);
  return curves;
}

Curves train_classifier(Model& model, const Dataset& ds, const std::vector<std::size_t>& train_idx,
                        const std::vector<std::size_t>& val_idx, const TrainConfig& cfg) {
  cfg.validate();
  if (train_idx.size() < 2) throw DataError("classifier training needs at least two windows");
  std::vector<bool> seen(static_cast<std::size_t>(model.config().n_classes), false);
  for (std::size_t i : train_idx) {
    const int y = ds.labels[i];
    if (y < 0 || y >= model.config().n_classes) throw DataError("label outside the model's class range");
    seen[static_cast<std::size_t>(y)] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 3 && model.config().n_classes >= 3) {
    throw DataError("training split is missing a class");
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, "classifier"));
  nn::AdamW opt(cfg.freeze_encoders ? model.head_params() : model.params(), {cfg.lr, cfg.weight_decay});
  const nn::Context ctx{true, &rng};
  Curves curves;
  curves.best_val_loss = std::numeric_limits<double>::infinity();
  Snapshot best;
  best.take(model);
  std::size_t bad = 0;
  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = epoch_lr(cfg, epoch, cfg.max_epochs);
    double total = 0.0;
    for (const auto& b : make_batches(order, cfg.batch_size)) {
      std::vector<int> y;
      for (std::size_t i : b) y.push_back(ds.labels[i]);
      opt.zero_grad();
      // Frozen encoders still run backward; their gradients are simply not applied.
      const double loss = model.classification_step(model.raw_batch(ds, b), model.feature_batch(ds, b), y, ctx);
      if (!std::isfinite(loss)) throw NumericError("non-finite classification loss at epoch " + std::to_string(epoch));
      opt.step(lr);
      total += loss * static_cast<double>(b.size());
    }
    curves.train_loss.push_back(total / static_cast<double>(order.size()));
    double val = curves.train_loss.back();
    double acc = std::numeric_limits<double>::quiet_NaN();
    if (!val_idx.empty()) std::tie(val, acc) = classifier_eval(model, ds, val_idx);
    curves.val_loss.push_back(val);
    curves.val_accuracy.push_back(acc);
    if (val < curves.best_val_loss) {
      curves.best_val_loss = val;
      curves.best_epoch = epoch;
      best.take(model);
      bad = 0;
    } else if (++bad >= cfg.patience) {
      break;
    }
  }
  best.restore(model);
  return curves;
}

// ---------------------------------------------------------------------------
// Metrics

Eigen::MatrixXi confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted, int classes) {
  if (truth.size() != predicted.size()) throw DataError("truth and predictions differ in length");
  Eigen::MatrixXi c = Eigen::MatrixXi::Zero(classes, classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 || predicted[i] >= classes) {
      throw DataError("class index out of range");
    }
    ++c(truth[i], predicted[i]);
  }
  return c;
}

std::optional<double> auroc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw DataError("scores and labels differ in length");
  const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double n_neg = static_cast<double>(positive.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0.0, fp = 0.0, area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    double dtp = 0.0, dfp = 0.0;
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (positive[order[j]] ? dtp : dfp) += 1.0;
      ++j;
    }
    area += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area / (n_pos * n_neg);
}

std::optional<double> auroc_rank(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw DataError("scores and labels differ in length");
  const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double n_neg = static_cast<double>(positive.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) rank_sum += avg;
    }
    i = j;
  }
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

MetricSet metrics(const Eigen::MatrixXi& confusion, const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  const Eigen::Index k = confusion.rows();
  if (confusion.cols() != k) throw DataError("confusion matrix must be square");
  if (static_cast<std::size_t>(confusion.sum()) != labels.size()) throw DataError("confusion matrix does not match labels");
  if (scores.rows() != static_cast<Eigen::Index>(labels.size()) || scores.cols() != k) {
    throw DataError("score matrix does not match labels");
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto support = std::count(labels.begin(), labels.end(), static_cast<int>(c));
    if (support != confusion.row(c).sum()) throw DataError("confusion matrix rows do not match class supports");
  }
  MetricSet m;
  m.confusion = confusion;
  const double total = confusion.sum();
  m.accuracy = total > 0 ? confusion.trace() / total : 0.0;
  auto ratio = [](double num, double den) -> std::optional<double> {
    if (den <= 0.0) return std::nullopt;
    return num / den;
  };
  std::vector<double> sums(5, 0.0);
  std::vector<int> defined(5, 0);
  auto add = [&](int slot, const std::optional<double>& v, const std::string& label, Eigen::Index c) {
    if (v) {
      sums[static_cast<std::size_t>(slot)] += *v;
      ++defined[static_cast<std::size_t>(slot)];
    } else {
      m.undefined.push_back(label + "[" + std::to_string(c) + "]");
    }
  };
  for (Eigen::Index c = 0; c < k; ++c) {
    const double tp = confusion(c, c);
    const double fp = confusion.col(c).sum() - tp;
    const double fn = confusion.row(c).sum() - tp;
    const double tn = total - tp - fp - fn;
    ClassMetrics cm;
    cm.support = static_cast<std::size_t>(confusion.row(c).sum());
    cm.precision = ratio(tp, tp + fp);
    cm.sensitivity = ratio(tp, tp + fn);
    cm.specificity = ratio(tn, tn + fp);
    if (cm.precision && cm.sensitivity) {
      const double s = *cm.precision + *cm.sensitivity;
      cm.f1 = s > 0.0 ? 2.0 * *cm.precision * *cm.sensitivity / s : 0.0;
    }
    std::vector<double> sc(labels.size());
    std::vector<bool> pos(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      sc[i] = scores(static_cast<Eigen::Index>(i), c);
      pos[i] = labels[i] == static_cast<int>(c);
    }
    cm.auroc = auroc(sc, pos);
    add(0, cm.precision, "precision", c);
    add(1, cm.sensitivity, "sensitivity", c);
    add(2, cm.specificity, "specificity", c);
    add(3, cm.f1, "f1", c);
    add(4, cm.auroc, "auroc", c);
    m.per_class.push_back(cm);
  }
  auto mean = [&](int slot) -> std::optional<double> {
    if (defined[static_cast<std::size_t>(slot)] == 0) return std::nullopt;
    return sums[static_cast<std::size_t>(slot)] / defined[static_cast<std::size_t>(slot)];
  };
  m.macro_precision = mean(0);
  m.macro_sensitivity = mean(1);
  m.macro_specificity = mean(2);
  m.macro_f1 = mean(3);
  m.macro_auroc = mean(4);
  return m;
}

MetricSet metrics_from_scores(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  std::vector<int> pred(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Eigen::Index arg = 0;
    scores.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    pred[i] = static_cast<int>(arg);
  }
  return metrics(confusion_matrix(labels, pred, static_cast<int>(scores.cols())), scores, labels);
}

std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("folds must be >= 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> fold(labels.size(), 0);
  std::mt19937_64 rng(derive_seed(seed, "folds"));
  std::size_t offset = 0;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < k) {
      throw ConfigError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                        " units, fewer than the " + std::to_string(k) + " folds");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i) fold[idx[i]] = (offset + i) % k;
    offset = (offset + idx.size()) % k;
  }
  return fold;
}

// ---------------------------------------------------------------------------
// Cross-validation

namespace {

struct Units {
  std::vector<std::size_t> unit_of;           // per window
  std::vector<int> labels;                    // per unit
  std::vector<std::vector<std::size_t>> members;
};

Units make_units(const Dataset& ds, EvalUnit unit) {
  Units u;
  u.unit_of.resize(ds.size());
  if (unit == EvalUnit::window) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      u.unit_of[i] = i;
      u.labels.push_back(ds.labels[i]);
      u.members.push_back({i});
    }
    return u;
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto [it, fresh] = index.emplace(ds.groups[i], u.labels.size());
    if (fresh) {
      u.labels.push_back(ds.labels[i]);
      u.members.emplace_back();
    } else if (u.labels[it->second] != ds.labels[i]) {
      throw DataError("trial " + ds.groups[i] + " has windows with different labels");
    }
    u.unit_of[i] = it->second;
    u.members[it->second].push_back(i);
  }
  return u;
}

// Stratified hold-out of roughly `fraction` of the given units.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_units(const std::vector<std::size_t>& units,
                                                                          const std::vector<int>& labels,
                                                                          double fraction, std::mt19937_64& rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t u : units) by_class[labels[u]].push_back(u);
  std::vector<std::size_t> train, val;
  for (auto& [label, v] : by_class) {
    std::shuffle(v.begin(), v.end(), rng);
    std::size_t n_val = 0;
    if (fraction > 0.0 && v.size() >= 3) {
      n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(v.size()))));
    }
    val.insert(val.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), v.begin() + static_cast<std::ptrdiff_t>(n_val), v.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

std::vector<std::size_t> expand(const Units& u, const std::vector<std::size_t>& units) {
  std::vector<std::size_t> out;
  for (std::size_t x : units) out.insert(out.end(), u.members[x].begin(), u.members[x].end());
  std::sort(out.begin(), out.end());
  return out;
}

Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  if (v.empty()) return a;
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return a;
}

void finish_report(CvReport& r, int classes) {
  std::vector<double> acc, auc, f1;
  Eigen::MatrixXd all_scores(0, classes);
  std::vector<int> all_labels;
  for (const auto& f : r.folds) {
    acc.push_back(f.test.accuracy);
    if (f.test.macro_auroc) auc.push_back(*f.test.macro_auroc);
    if (f.test.macro_f1) f1.push_back(*f.test.macro_f1);
    Eigen::MatrixXd merged(all_scores.rows() + f.test_scores.rows(), classes);
    merged << all_scores, f.test_scores;
    all_scores = std::move(merged);
    all_labels.insert(all_labels.end(), f.test_labels.begin(), f.test_labels.end());
  }
  r.accuracy = aggregate(acc);
  r.macro_auroc = aggregate(auc);
  r.macro_f1 = aggregate(f1);
  r.pooled = metrics_from_scores(all_scores, all_labels);
}

int class_count(const Dataset& ds) { return *std::max_element(ds.labels.begin(), ds.labels.end()) + 1; }

}  // namespace

TrainedModel train_full(const Dataset& ds, const EncoderConfig& enc, const TrainConfig& cfg) {
  ds.validate();
  enc.validate();
  cfg.validate();
  if (class_count(ds) > enc.n_classes) throw ConfigError("dataset has more classes than the classifier head");
  const Units units = make_units(ds, cfg.unit);
  std::vector<std::size_t> all(units.labels.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(cfg.seed, "split"));
  const auto [fit_units, val_units] = split_units(all, units.labels, cfg.val_fraction, rng);
  const auto train_idx = expand(units, fit_units);
  const auto val_idx = expand(units, val_units);
  TrainedModel out;
  out.model = std::make_unique<Model>(enc, static_cast<int>(ds.raw.front().rows()),
                                      static_cast<int>(ds.raw.front().cols()), static_cast<int>(ds.features.cols()));
  out.model->init(derive_seed(cfg.seed, "init"));
  out.model->fit_normalizer(ds, train_idx);
  if (cfg.pretrain) out.pretrain_curves = pretrain(*out.model, ds, train_idx, val_idx, cfg);
  out.classifier_curves = train_classifier(*out.model, ds, train_idx, val_idx, cfg);
  return out;
}

Evaluation evaluate(Model& model, const Dataset& ds, EvalUnit unit) {
  ds.validate();
  if (ds.raw.front().rows() != model.raw_channels() || ds.raw.front().cols() != model.raw_length() ||
      ds.features.cols() != model.n_features()) {
    throw DataError("dataset shape does not match the checkpoint");
  }
  const Units units = make_units(ds, unit);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Eigen::MatrixXd p = model.predict_proba(ds, idx);
  Evaluation ev;
  ev.scores.setZero(static_cast<Eigen::Index>(units.labels.size()), p.cols());
  std::vector<double> count(units.labels.size(), 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    ev.scores.row(static_cast<Eigen::Index>(units.unit_of[i])) += p.row(static_cast<Eigen::Index>(i));
    count[units.unit_of[i]] += 1.0;
  }
  for (std::size_t u = 0; u < units.labels.size(); ++u) {
    ev.scores.row(static_cast<Eigen::Index>(u)) /= count[u];
    const std::size_t first = units.members[u].front();
    ev.unit_names.push_back(unit == EvalUnit::trial ? ds.groups[first]
                                                     : ds.groups[first] + "#" + std::to_string(ds.window_index[first]));
  }
  ev.labels = units.labels;
  ev.metrics = metrics_from_scores(ev.scores, ev.labels);
  return ev;
}

CvReport crossvalidate(const Dataset& ds, const EncoderConfig& enc, const TrainConfig& cfg) {
  ds.validate();
  enc.validate();
  cfg.validate();
  const int classes = class_count(ds);
  if (classes > enc.n_classes) throw ConfigError("dataset has more classes than the classifier head");
  const Units units = make_units(ds, cfg.unit);
  const auto fold_of = stratified_folds(units.labels, cfg.folds, cfg.seed);

  CvReport rep;
  rep.model = "fdnml";
  rep.unit = cfg.unit;
  rep.folds.resize(cfg.folds);
  {
    Model probe(enc, static_cast<int>(ds.raw.front().rows()), static_cast<int>(ds.raw.front().cols()),
                static_cast<int>(ds.features.cols()));
    rep.parameter_count = probe.parameter_count();
  }

  parallel_for(cfg.folds, [&](std::size_t f) {
    TrainConfig fc = cfg;
    fc.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(f));
    std::mt19937_64 rng(derive_seed(fc.seed, "split"));
    std::vector<std::size_t> train_units, test_units;
    for (std::size_t u = 0; u < fold_of.size(); ++u) (fold_of[u] == f ? test_units : train_units).push_back(u);
    const auto [fit_units, val_units] = split_units(train_units, units.labels, cfg.val_fraction, rng);
    const auto train_idx = expand(units, fit_units);
    const auto val_idx = expand(units, val_units);

    Model model(enc, static_cast<int>(ds.raw.front().rows()), static_cast<int>(ds.raw.front().cols()),
                static_cast<int>(ds.features.cols()));
    model.init(derive_seed(fc.seed, "init"));
    model.fit_normalizer(ds, train_idx);
    FoldResult& fr = rep.folds[f];
    fr.fold = f;
    if (cfg.pretrain) fr.pretrain_curves = pretrain(model, ds, train_idx, val_idx, fc);
    fr.classifier_curves = train_classifier(model, ds, train_idx, val_idx, fc);

    const auto test_idx = expand(units, test_units);
    const Eigen::MatrixXd p = model.predict_proba(ds, test_idx);
    fr.n_train = train_idx.size() + val_idx.size();
    fr.n_test = test_idx.size();
    fr.test_units = test_units;
    fr.test_scores.setZero(static_cast<Eigen::Index>(test_units.size()), enc.n_classes);
    std::map<std::size_t, std::size_t> row_of;
    for (std::size_t i = 0; i < test_units.size(); ++i) row_of[test_units[i]] = i;
    std::vector<double> count(test_units.size(), 0.0);
    for (std::size_t i = 0; i < test_idx.size(); ++i) {
      const std::size_t r = row_of.at(units.unit_of[test_idx[i]]);
      fr.test_scores.row(static_cast<Eigen::Index>(r)) += p.row(static_cast<Eigen::Index>(i));
      count[r] += 1.0;
    }
    for (std::size_t r = 0; r < test_units.size(); ++r) {
      fr.test_scores.row(static_cast<Eigen::Index>(r)) /= count[r];
      fr.test_labels.push_back(units.labels[test_units[r]]);
    }
    fr.test = metrics_from_scores(fr.test_scores, fr.test_labels);
  });
  finish_report(rep, enc.n_classes);
  return rep;
}

CvReport majority_baseline(const Dataset& ds, const TrainConfig& cfg) {
  if (ds.size() == 0) throw DataError("majority baseline of an empty dataset");
  const int classes = std::max(class_count(ds), 2);
  const Units units = make_units(ds, cfg.unit);
  const auto fold_of = stratified_folds(units.labels, cfg.folds, cfg.seed);
  CvReport rep;
  rep.model = "majority";
  rep.unit = cfg.unit;
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<int> counts(static_cast<std::size_t>(classes), 0);
    FoldResult fr;
    fr.fold = f;
    for (std::size_t u = 0; u < fold_of.size(); ++u) {
      if (fold_of[u] == f) {
        fr.test_units.push_back(u);
        fr.test_labels.push_back(units.labels[u]);
      } else {
        ++counts[static_cast<std::size_t>(units.labels[u])];
        fr.n_train += units.members[u].size();
      }
    }
    const auto majority = std::max_element(counts.begin(), counts.end()) - counts.begin();
    fr.test_scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(fr.test_units.size()), classes);
    fr.test_scores.col(majority).setOnes();
    for (std::size_t u : fr.test_units) fr.n_test += units.members[u].size();
    fr.test = metrics_from_scores(fr.test_scores, fr.test_labels);
    rep.folds.push_back(std::move(fr));
  }
  finish_report(rep, classes);
  return rep;
}

// ---------------------------------------------------------------------------

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json curves_json(const Curves& c) {
  json j;
  j["train_loss"] = c.train_loss;
  j["val_loss"] = c.val_loss;
  json acc = json::array();
  for (double a : c.val_accuracy) acc.push_back(std::isfinite(a) ? json(a) : json(nullptr));
  j["val_accuracy"] = acc;
  j["best_epoch"] = c.best_epoch;
  j["best_val_loss"] = std::isfinite(c.best_val_loss) ? json(c.best_val_loss) : json(nullptr);
  return j;
}

}  // namespace

json to_json(const MetricSet& m) {
  json j;
  json conf = json::array();
  for (Eigen::Index r = 0; r < m.confusion.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.confusion.cols(); ++c) row.push_back(m.confusion(r, c));
    conf.push_back(row);
  }
  j["confusion"] = conf;
  j["accuracy"] = m.accuracy;
  json pc = json::array();
  for (const auto& c : m.per_class) {
    pc.push_back({{"precision", opt_json(c.precision)},
                  {"sensitivity", opt_json(c.sensitivity)},
                  {"specificity", opt_json(c.specificity)},
                  {"f1", opt_json(c.f1)},
                  {"auroc", opt_json(c.auroc)},
                  {"support", c.support}});
  }
  j["per_class"] = pc;
  j["macro"] = {{"precision", opt_json(m.macro_precision)},
                {"sensitivity", opt_json(m.macro_sensitivity)},
                {"specificity", opt_json(m.macro_specificity)},
                {"f1", opt_json(m.macro_f1)},
                {"auroc", opt_json(m.macro_auroc)}};
  j["undefined"] = m.undefined;
  return j;
}

json to_json(const CvReport& r, bool include_curves) {
  json j;
  j["model"] = r.model;
  j["unit"] = eval_unit_name(r.unit);
  j["parameter_count"] = r.parameter_count;
  j["accuracy"] = {{"mean", r.accuracy.mean}, {"sd", r.accuracy.sd}};
  j["macro_auroc"] = {{"mean", r.macro_auroc.mean}, {"sd", r.macro_auroc.sd}};
  j["macro_f1"] = {{"mean", r.macro_f1.mean}, {"sd", r.macro_f1.sd}};
  j["pooled"] = to_json(r.pooled);
  json folds = json::array();
  for (const auto& f : r.folds) {
    json jf;
    jf["fold"] = f.fold;
    jf["n_train"] = f.n_train;
    jf["n_test"] = f.n_test;
    jf["test"] = to_json(f.test);
    if (include_curves) {
      jf["pretrain"] = curves_json(f.pretrain_curves);
      jf["classifier"] = curves_json(f.classifier_curves);
    }
    folds.push_back(jf);
  }
  j["folds"] = folds;
  return j;
}

}  // namespace fdnml::learn
