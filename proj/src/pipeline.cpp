#include "fdnml/pipeline.hpp"

#include "fdnml/common.hpp"
#include "fdnml/complexity.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace fdnml::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

void expect_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  expect_object(j, where);
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::string at(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

double get_num(const json& j, const std::string& key, double def, const std::string& where) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number()) throw ConfigError(at(where, key) + ": expected a number");
  return j[key].get<double>();
}

long long get_int(const json& j, const std::string& key, long long def, const std::string& where) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number_integer()) throw ConfigError(at(where, key) + ": expected an integer");
  return j[key].get<long long>();
}

std::size_t get_size(const json& j, const std::string& key, std::size_t def, const std::string& where) {
  const long long v = get_int(j, key, static_cast<long long>(def), where);
  if (v < 0) throw ConfigError(at(where, key) + ": must be >= 0");
  return static_cast<std::size_t>(v);
}

bool get_bool(const json& j, const std::string& key, bool def, const std::string& where) {
  if (!j.contains(key)) return def;
  if (!j[key].is_boolean()) throw ConfigError(at(where, key) + ": expected true or false");
  return j[key].get<bool>();
}

std::string get_str(const json& j, const std::string& key, const std::string& def, const std::string& where) {
  if (!j.contains(key)) return def;
  if (!j[key].is_string()) throw ConfigError(at(where, key) + ": expected a string");
  return j[key].get<std::string>();
}

std::vector<double> get_nums(const json& j, const std::string& key, std::vector<double> def, const std::string& where) {
  if (!j.contains(key)) return def;
  if (!j[key].is_array()) throw ConfigError(at(where, key) + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : j[key]) {
    if (!v.is_number()) throw ConfigError(at(where, key) + ": expected an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<int> get_ints(const json& j, const std::string& key, std::vector<int> def, const std::string& where) {
  if (!j.contains(key)) return def;
  if (!j[key].is_array()) throw ConfigError(at(where, key) + ": expected an array of integers");
  std::vector<int> out;
  for (const auto& v : j[key]) {
    if (!v.is_number_integer()) throw ConfigError(at(where, key) + ": expected an array of integers");
    out.push_back(v.get<int>());
  }
  return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::pair<int, int> get_scales(const json& j, const std::string& key, std::pair<int, int> def, const std::string& where) {
  const auto v = get_ints(j, key, {def.first, def.second}, where);
  if (v.size() != 2) throw ConfigError(at(where, key) + ": expected [j1, j2]");
  return {v[0], v[1]};
}

}  // namespace

PipelineConfig parse_config(const json& doc, const fs::path& base_dir) {
  PipelineConfig cfg;
  check_keys(doc, "config",
             {"seed", "output_dir", "threads", "dataset", "window", "multifractal", "bootstrap", "fracnet", "distance",
              "learn"});
  const long long seed = get_int(doc, "seed", 0, "");
  if (seed < 0) throw ConfigError("seed must be >= 0");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.output_dir = resolve(base_dir, get_str(doc, "output_dir", "fdnml-out", ""));
  cfg.threads = get_size(doc, "threads", 0, "");

  if (doc.contains("dataset")) {
    const auto& d = doc["dataset"];
    check_keys(d, "dataset", {"source", "synthetic", "files", "directory", "extension", "column_map"});
    cfg.dataset.source = get_str(d, "source", "synthetic", "dataset");
    if (cfg.dataset.source != "synthetic" && cfg.dataset.source != "files") {
      throw ConfigError("dataset.source must be 'synthetic' or 'files'");
    }
    if (d.contains("synthetic")) {
      const auto& s = d["synthetic"];
      check_keys(s, "dataset.synthetic", {"trials_per_level", "samples_per_trial", "sample_rate_hz"});
      cfg.dataset.synthetic.trials_per_level = get_size(s, "trials_per_level", 6, "dataset.synthetic");
      cfg.dataset.synthetic.samples_per_trial = get_size(s, "samples_per_trial", 4096, "dataset.synthetic");
      cfg.dataset.synthetic.sample_rate_hz = get_num(s, "sample_rate_hz", 256.0, "dataset.synthetic");
      if (cfg.dataset.synthetic.trials_per_level < 1) throw ConfigError("dataset.synthetic.trials_per_level must be >= 1");
      if (cfg.dataset.synthetic.samples_per_trial < 512) throw ConfigError("dataset.synthetic.samples_per_trial must be >= 512");
      if (!(cfg.dataset.synthetic.sample_rate_hz > 0.0)) throw ConfigError("dataset.synthetic.sample_rate_hz must be > 0");
    }
    if (d.contains("files")) {
      if (!d["files"].is_array()) throw ConfigError("dataset.files: expected an array");
      for (std::size_t i = 0; i < d["files"].size(); ++i) {
        const auto& f = d["files"][i];
        const std::string where = "dataset.files[" + std::to_string(i) + "]";
        FileEntry e;
        if (f.is_string()) {
          e.path = resolve(base_dir, f.get<std::string>());
        } else {
          check_keys(f, where, {"path", "label", "trial_id"});
          if (!f.contains("path")) throw ConfigError(where + ": missing 'path'");
          e.path = resolve(base_dir, get_str(f, "path", "", where));
          if (f.contains("label")) {
            const auto l = get_int(f, "label", 0, where);
            if (l < 0 || l > 2) throw ConfigError(where + ".label must be 0, 1 or 2");
            e.label = static_cast<int>(l);
          }
          if (f.contains("trial_id")) e.trial_id = get_str(f, "trial_id", "", where);
        }
        cfg.dataset.files.push_back(e);
      }
    }
    if (d.contains("directory")) cfg.dataset.directory = resolve(base_dir, get_str(d, "directory", "", "dataset"));
    cfg.dataset.extension = get_str(d, "extension", ".csv", "dataset");
    if (d.contains("column_map")) cfg.dataset.column_map = resolve(base_dir, get_str(d, "column_map", "", "dataset"));
    if (cfg.dataset.source == "files" && cfg.dataset.files.empty() && !cfg.dataset.directory) {
      throw ConfigError("dataset.source = files needs dataset.files or dataset.directory");
    }
  }

  if (doc.contains("window")) {
    const auto& w = doc["window"];
    check_keys(w, "window", {"length", "stride", "channels"});
    cfg.window.length_samples = get_size(w, "length", 512, "window");
    cfg.window.stride_samples = get_size(w, "stride", 256, "window");
    if (w.contains("channels")) {
      if (!w["channels"].is_array()) throw ConfigError("window.channels: expected an array of names");
      for (const auto& c : w["channels"]) {
        if (!c.is_string()) throw ConfigError("window.channels: expected an array of names");
        cfg.window.channel_subset.push_back(c.get<std::string>());
      }
    }
  }
  try {
    ingest::validate(cfg.window);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("window: ") + e.what());
  }

  auto& m = cfg.multifractal;
  if (doc.contains("multifractal")) {
    const auto& j = doc["multifractal"];
    check_keys(j, "multifractal",
               {"family", "q", "trial_scales", "window_scales", "weighted", "dq_convention", "feature_q"});
    m.family = mf::parse_family(get_str(j, "family", "db3", "multifractal"));
    if (j.contains("q")) {
      const auto& q = j["q"];
      if (q.is_array()) {
        m.qs.q = get_nums(j, "q", {}, "multifractal");
      } else {
        check_keys(q, "multifractal.q", {"min", "max", "step"});
        m.qs = mf::QGrid::range(get_num(q, "min", -5.0, "multifractal.q"), get_num(q, "max", 5.0, "multifractal.q"),
                                get_num(q, "step", 0.5, "multifractal.q"));
      }
    }
    std::tie(m.trial_j1, m.trial_j2) = get_scales(j, "trial_scales", {0, -2}, "multifractal");
    std::tie(m.window_j1, m.window_j2) = get_scales(j, "window_scales", {1, 0}, "multifractal");
    m.weighted = get_bool(j, "weighted", true, "multifractal");
    m.convention = mf::parse_dq_convention(get_str(j, "dq_convention", "partition", "multifractal"));
    m.feature_q = get_nums(j, "feature_q", m.feature_q, "multifractal");
  }
  m.qs.validate();
  if (m.feature_q.empty()) throw ConfigError("multifractal.feature_q must not be empty");
  for (double q : m.feature_q) {
    if (q < m.qs.q.front() || q > m.qs.q.back()) throw ConfigError("multifractal.feature_q outside the q grid");
  }
  if (mf::make_wavelet(m.family).vanishing_moments < 2) {
    throw ConfigError("multifractal.family needs at least two vanishing moments");
  }
  if (doc.contains("bootstrap")) {
    const auto& b = doc["bootstrap"];
    check_keys(b, "bootstrap", {"resamples", "level"});
    m.bootstrap_resamples = get_size(b, "resamples", 100, "bootstrap");
    m.bootstrap_level = get_num(b, "level", 0.95, "bootstrap");
    if (!(m.bootstrap_level > 0.0 && m.bootstrap_level < 1.0)) throw ConfigError("bootstrap.level must lie in (0, 1)");
  }

  if (doc.contains("fracnet")) {
    const auto& f = doc["fracnet"];
    check_keys(f, "fracnet", {"p", "tol", "max_iter", "j_mem", "ridge", "skip_warmup"});
    cfg.fracnet.p = get_size(f, "p", 1, "fracnet");
    cfg.fracnet.em.tol = get_num(f, "tol", 1e-6, "fracnet");
    cfg.fracnet.em.max_iter = get_size(f, "max_iter", 200, "fracnet");
    cfg.fracnet.em.j_mem = get_size(f, "j_mem", 0, "fracnet");
    cfg.fracnet.em.ridge = get_num(f, "ridge", 1e-6, "fracnet");
    cfg.fracnet.em.skip_warmup = get_bool(f, "skip_warmup", true, "fracnet");
  }
  if (!(cfg.fracnet.em.tol > 0.0)) throw ConfigError("fracnet.tol must be > 0");
  if (cfg.fracnet.em.max_iter < 1) throw ConfigError("fracnet.max_iter must be >= 1");
  if (cfg.fracnet.em.ridge < 0.0) throw ConfigError("fracnet.ridge must be >= 0");

  if (doc.contains("distance")) {
    const auto& d = doc["distance"];
    check_keys(d, "distance", {"granularity", "reduction", "scalar_q"});
    cfg.distance.granularity = get_str(d, "granularity", "trial", "distance");
    if (cfg.distance.granularity != "trial" && cfg.distance.granularity != "window") {
      throw ConfigError("distance.granularity must be 'trial' or 'window'");
    }
    cfg.distance.reduction = distance::parse_reduction(get_str(d, "reduction", "curve", "distance"));
    cfg.distance.scalar_q = get_num(d, "scalar_q", 2.0, "distance");
  }
  {
    const auto& q = m.qs.q;
    if (std::none_of(q.begin(), q.end(), [&](double v) { return std::abs(v - cfg.distance.scalar_q) < 1e-9; })) {
      throw ConfigError("distance.scalar_q must lie on the multifractal q grid");
    }
  }

  auto& l = cfg.learn;
  if (doc.contains("learn")) {
    const auto& j = doc["learn"];
    check_keys(j, "learn", {"enabled", "baseline", "encoder", "train"});
    l.enabled = get_bool(j, "enabled", true, "learn");
    l.baseline = get_bool(j, "baseline", true, "learn");
    if (j.contains("encoder")) {
      const auto& e = j["encoder"];
      check_keys(e, "learn.encoder",
                 {"embedding_dim", "raw_widths", "raw_kernels", "raw_stride", "batch_norm", "feature_channels",
                  "feature_kernel", "dropout"});
      l.encoder.embedding_dim = static_cast<int>(get_int(e, "embedding_dim", 32, "learn.encoder"));
      l.encoder.raw_widths = get_ints(e, "raw_widths", l.encoder.raw_widths, "learn.encoder");
      l.encoder.raw_kernels = get_ints(e, "raw_kernels", l.encoder.raw_kernels, "learn.encoder");
      l.encoder.raw_stride = static_cast<int>(get_int(e, "raw_stride", 2, "learn.encoder"));
      l.encoder.batch_norm = get_bool(e, "batch_norm", true, "learn.encoder");
      l.encoder.feature_channels = static_cast<int>(get_int(e, "feature_channels", 2, "learn.encoder"));
      l.encoder.feature_kernel = static_cast<int>(get_int(e, "feature_kernel", 3, "learn.encoder"));
      l.encoder.dropout = get_num(e, "dropout", 0.3, "learn.encoder");
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, "learn.train",
                 {"temperature", "lr", "weight_decay", "batch_size", "pretrain_epochs", "max_epochs", "patience",
                  "lr_schedule", "val_fraction", "pretrain", "freeze_encoders", "folds", "unit"});
      auto& tc = l.train;
      tc.temperature = get_num(t, "temperature", 0.2, "learn.train");
      tc.lr = get_num(t, "lr", 1e-3, "learn.train");
      tc.weight_decay = get_num(t, "weight_decay", 1e-5, "learn.train");
      tc.batch_size = get_size(t, "batch_size", 32, "learn.train");
      tc.pretrain_epochs = get_size(t, "pretrain_epochs", 100, "learn.train");
      tc.max_epochs = get_size(t, "max_epochs", 300, "learn.train");
      tc.patience = get_size(t, "patience", 20, "learn.train");
      const std::string sched = get_str(t, "lr_schedule", "cosine", "learn.train");
      if (sched != "cosine" && sched != "constant") throw ConfigError("learn.train.lr_schedule must be cosine or constant");
      tc.cosine_schedule = sched == "cosine";
      tc.val_fraction = get_num(t, "val_fraction", 0.2, "learn.train");
      tc.pretrain = get_bool(t, "pretrain", true, "learn.train");
      tc.freeze_encoders = get_bool(t, "freeze_encoders", false, "learn.train");
      tc.folds = get_size(t, "folds", 5, "learn.train");
      tc.unit = learn::parse_eval_unit(get_str(t, "unit", "window", "learn.train"));
    }
  }
  l.encoder.validate();
  l.train.validate();
  l.train.seed = derive_seed(cfg.seed, "learn");
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

json PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir.string();
  json d;
  d["source"] = dataset.source;
  d["synthetic"] = {{"trials_per_level", dataset.synthetic.trials_per_level},
                    {"samples_per_trial", dataset.synthetic.samples_per_trial},
                    {"sample_rate_hz", dataset.synthetic.sample_rate_hz}};
  json files = json::array();
  for (const auto& f : dataset.files) {
    json e{{"path", f.path.string()}};
    if (f.label) e["label"] = *f.label;
    if (f.trial_id) e["trial_id"] = *f.trial_id;
    files.push_back(e);
  }
  d["files"] = files;
  if (dataset.directory) d["directory"] = dataset.directory->string();
  d["extension"] = dataset.extension;
  if (dataset.column_map) d["column_map"] = dataset.column_map->string();
  j["dataset"] = d;
  j["window"] = {{"length", window.length_samples}, {"stride", window.stride_samples}, {"channels", window.channel_subset}};
  j["multifractal"] = {{"family", mf::family_name(multifractal.family)},
                       {"q", multifractal.qs.q},
                       {"trial_scales", {multifractal.trial_j1, multifractal.trial_j2}},
                       {"window_scales", {multifractal.window_j1, multifractal.window_j2}},
                       {"weighted", multifractal.weighted},
                       {"dq_convention", multifractal.convention == mf::DqConvention::partition ? "partition" : "hurst"},
                       {"feature_q", multifractal.feature_q}};
  j["bootstrap"] = {{"resamples", multifractal.bootstrap_resamples}, {"level", multifractal.bootstrap_level}};
  j["fracnet"] = {{"p", fracnet.p},         {"tol", fracnet.em.tol},     {"max_iter", fracnet.em.max_iter},
                  {"j_mem", fracnet.em.j_mem}, {"ridge", fracnet.em.ridge}, {"skip_warmup", fracnet.em.skip_warmup}};
  j["distance"] = {{"granularity", distance.granularity},
                   {"reduction", distance::reduction_name(distance.reduction)},
                   {"scalar_q", distance.scalar_q}};
  const auto& e = learn.encoder;
  const auto& t = learn.train;
  j["learn"] = {{"enabled", learn.enabled},
                {"baseline", learn.baseline},
                {"encoder",
                 {{"embedding_dim", e.embedding_dim},
                  {"raw_widths", e.raw_widths},
                  {"raw_kernels", e.raw_kernels},
                  {"raw_stride", e.raw_stride},
                  {"batch_norm", e.batch_norm},
                  {"feature_channels", e.feature_channels},
                  {"feature_kernel", e.feature_kernel},
                  {"dropout", e.dropout}}},
                {"train",
                 {{"temperature", t.temperature},
                  {"lr", t.lr},
                  {"weight_decay", t.weight_decay},
                  {"batch_size", t.batch_size},
                  {"pretrain_epochs", t.pretrain_epochs},
                  {"max_epochs", t.max_epochs},
                  {"patience", t.patience},
                  {"lr_schedule", t.cosine_schedule ? "cosine" : "constant"},
                  {"val_fraction", t.val_fraction},
                  {"pretrain", t.pretrain},
                  {"freeze_encoders", t.freeze_encoders},
                  {"folds", t.folds},
                  {"unit", learn::eval_unit_name(t.unit)}}}};
  return j;
}

// ---------------------------------------------------------------------------
// Data loading and fail-fast checks
// ---------------------------------------------------------------------------

std::vector<ingest::EegRecording> load_recordings(const PipelineConfig& cfg, std::vector<std::string>* warnings) {
  if (cfg.dataset.source == "synthetic") {
    synth::DatasetSpec spec = cfg.dataset.synthetic;
    spec.seed = derive_seed(cfg.seed, "synth");
    return synth::gen_fatigue_dataset(spec);
  }
  std::vector<FileEntry> entries = cfg.dataset.files;
  if (cfg.dataset.directory) {
    if (!fs::is_directory(*cfg.dataset.directory)) {
      throw DataError("dataset directory not found: " + cfg.dataset.directory->string());
    }
    std::vector<fs::path> found;
    for (const auto& e : fs::recursive_directory_iterator(*cfg.dataset.directory)) {
      if (e.is_regular_file() && e.path().extension() == cfg.dataset.extension) found.push_back(e.path());
    }
    std::sort(found.begin(), found.end());
    for (const auto& p : found) entries.push_back({p, std::nullopt, std::nullopt});
  }
  if (entries.empty()) throw DataError("dataset contains no recordings");
  ingest::ColumnMap map;
  if (cfg.dataset.column_map) map = ingest::load_column_map(*cfg.dataset.column_map);
  std::vector<ingest::EegRecording> out;
  std::set<std::string> ids;
  for (const auto& e : entries) {
    ingest::ColumnMap m = map;
    if (e.label && cfg.dataset.column_map) {
      m.label_column.reset();
      m.label_file.reset();
      m.label_value = *e.label;
    }
    auto loaded = ingest::load_recording(e.path, m);
    if (e.label) loaded.recording.fatigue_level = *e.label;
    if (e.trial_id) loaded.recording.trial_id = *e.trial_id;
    if (loaded.diagnostics.rows_dropped > 0 && warnings) {
      warnings->push_back(e.path.string() + ": dropped " + std::to_string(loaded.diagnostics.rows_dropped) +
                          " rows with missing values");
    }
    if (!ids.insert(loaded.recording.trial_id).second) {
      throw DataError("duplicate trial id '" + loaded.recording.trial_id + "'");
    }
    out.push_back(std::move(loaded.recording));
  }
  return out;
}

void check_folds(const PipelineConfig& cfg, const std::vector<ingest::EegRecording>& recs) {
  if (!cfg.learn.enabled) return;
  std::map<int, std::size_t> units;
  std::size_t total = 0;
  for (const auto& r : recs) {
    const std::size_t w = ingest::window_count(r.n_samples(), cfg.window.length_samples, cfg.window.stride_samples);
    const std::size_t u = cfg.learn.train.unit == learn::EvalUnit::window ? w : (w > 0 ? 1 : 0);
    units[r.fatigue_level] += u;
    total += w;
  }
  if (units.size() < 3) throw ConfigError("learning needs all three fatigue levels in the dataset");
  for (const auto& [level, n] : units) {
    if (n < cfg.learn.train.folds) {
      throw ConfigError("learn.train.folds = " + std::to_string(cfg.learn.train.folds) + " exceeds the " +
                        std::to_string(n) + " " + learn::eval_unit_name(cfg.learn.train.unit) + "s of level " +
                        std::to_string(level));
    }
  }
  if (cfg.learn.train.pretrain) {
    const double k = static_cast<double>(cfg.learn.train.folds);
    const double fit = static_cast<double>(total) * (1.0 - 1.0 / k) * (1.0 - cfg.learn.train.val_fraction);
    if (fit < 2.0 * static_cast<double>(cfg.learn.train.batch_size)) {
      throw ConfigError("about " + std::to_string(static_cast<long>(fit)) +
                        " training windows per fold is below 2 x learn.train.batch_size");
    }
  }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericError("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

json RunManifest::to_json() const {
  json j;
  j["tool"] = "fdnml";
  j["version"] = version;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  json st = json::array();
  for (const auto& s : stages) {
    auto digests = [](const std::vector<FileDigest>& v) {
      json a = json::array();
      for (const auto& d : v) a.push_back({{"path", d.path}, {"sha256", d.sha256}});
      return a;
    };
    st.push_back({{"name", s.name}, {"inputs", digests(s.inputs)}, {"outputs", digests(s.outputs)}, {"warnings", s.warnings}});
  }
  j["stages"] = st;
  j["warnings"] = warnings;
  return j;
}

RunManifest RunManifest::from_json(const json& j) {
  if (!j.is_object() || !j.contains("stages") || !j["stages"].is_array()) throw DataError("manifest has no stages");
  RunManifest m;
  m.version = j.value("version", "");
  m.config_hash = j.value("config_hash", "");
  m.seed = j.value("seed", std::uint64_t{0});
  for (const auto& s : j["stages"]) {
    StageRecord r;
    r.name = s.at("name");
    for (const auto& d : s.value("inputs", json::array())) r.inputs.push_back({d.at("path"), d.at("sha256")});
    for (const auto& d : s.value("outputs", json::array())) r.outputs.push_back({d.at("path"), d.at("sha256")});
    r.warnings = s.value("warnings", std::vector<std::string>{});
    m.stages.push_back(r);
  }
  m.warnings = j.value("warnings", std::vector<std::string>{});
  return m;
}

const StageRecord* RunManifest::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Stage outputs
// ---------------------------------------------------------------------------

namespace {

json interval_json(const mf::Interval& i) { return json::array({i.low, i.high}); }

std::string opt_str(const std::optional<double>& v) { return v ? ingest::format_double(*v) : std::string("NA"); }

}  // namespace

json summary_json(const mf::MultifractalSummary& s, const std::string& channel) {
  json jc{{"channel", channel},
          {"c1", s.cumulants.c1},
          {"c2", s.cumulants.c2},
          {"c3", s.cumulants.c3},
          {"zeta", s.zeta},
          {"dq", s.dq.dq},
          {"delta_dq", s.dq.delta_dq},
          {"spectrum_width", s.spectrum.width()},
          {"scales", {s.j1, s.j2}},
          {"warnings", s.warnings}};
  if (s.bootstrap) {
    jc["c1_ci"] = interval_json(s.bootstrap->c1);
    jc["c2_ci"] = interval_json(s.bootstrap->c2);
    jc["c2_p_value"] = s.bootstrap->c2_p_value;
    json dq = json::array();
    for (const auto& i : s.bootstrap->dq) dq.push_back(interval_json(i));
    jc["dq_ci"] = dq;
  }
  return jc;
}

json distance_json(const distance::DistanceTable& t) {
  json pairs = json::array();
  for (std::size_t a = 0; a < t.levels.size(); ++a) {
    for (std::size_t b = a + 1; b < t.levels.size(); ++b) {
      pairs.push_back({{"a", t.levels[a]},
                       {"b", t.levels[b]},
                       {"w1", t.w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))}});
    }
  }
  json j{{"reduction", distance::reduction_name(t.reduction)}, {"levels", t.levels}, {"pairs", pairs}};
  if (t.reduction == distance::Reduction::scalar) j["q"] = t.scalar_q;
  return j;
}

void write_confusion_csv(const fs::path& path, const Eigen::MatrixXi& confusion) {
  std::ostringstream conf;
  conf << "true,predicted,count\n";
  for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
    for (Eigen::Index c = 0; c < confusion.cols(); ++c) conf << r << ',' << c << ',' << confusion(r, c) << '\n';
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << conf.str();
}

void write_curves_csv(const fs::path& path, const std::vector<std::pair<std::string, const learn::Curves*>>& curves) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "fold,stage,epoch,train_loss,val_loss,val_accuracy\n";
  // Pretraining curves carry no accuracy column.
  for (const auto& [fold, c] : curves) {
    const bool classifier = !c->val_accuracy.empty();
    for (std::size_t e = 0; e < c->train_loss.size(); ++e) {
      out << fold << ',' << (classifier ? "classifier" : "pretrain") << ',' << e << ','
          << ingest::format_double(c->train_loss[e]) << ',' << ingest::format_double(c->val_loss[e]) << ',';
      const double acc = classifier ? c->val_accuracy[e] : std::nan("");
      out << (std::isfinite(acc) ? ingest::format_double(acc) : "NA") << '\n';
    }
  }
}

void write_metrics_csv(const fs::path& path, const learn::MetricSet& m) {
  std::ofstream met(path);
  if (!met) throw DataError("cannot write " + path.string());
  met << "class,precision,sensitivity,specificity,f1,auroc,support\n";
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& k = m.per_class[c];
    met << c << ',' << opt_str(k.precision) << ',' << opt_str(k.sensitivity) << ',' << opt_str(k.specificity) << ','
        << opt_str(k.f1) << ',' << opt_str(k.auroc) << ',' << k.support << '\n';
  }
  met << "macro," << opt_str(m.macro_precision) << ',' << opt_str(m.macro_sensitivity) << ','
      << opt_str(m.macro_specificity) << ',' << opt_str(m.macro_f1) << ',' << opt_str(m.macro_auroc) << ','
      << m.confusion.sum() << '\n';
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

struct State {
  std::vector<ingest::EegRecording> recs;
  std::vector<ingest::WindowedSeries> series;
  std::vector<Eigen::MatrixXd> trial_signals;  // channel subset of each recording
  std::vector<std::vector<mf::MultifractalSummary>> trial_mfa;
  std::vector<std::vector<std::optional<std::vector<distance::ChannelDescriptor>>>> window_desc;
  std::vector<std::vector<std::optional<std::vector<double>>>> window_dq;  // channel-mean D_q curve
  std::vector<std::vector<fracnet::AlphaEstimate>> alphas;
  std::vector<fracnet::CouplingTrajectory> trajs;
  std::vector<complexity::TrajectoryComplexity> lzc;
  distance::FeatureSet features;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string fmt(double v) { return ingest::format_double(v); }

Eigen::MatrixXd channel_rows(const ingest::EegRecording& rec, const std::vector<std::string>& names) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(names.size()), rec.samples.cols());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto it = std::find(rec.channels.begin(), rec.channels.end(), names[i]);
    if (it == rec.channels.end()) throw DataError(rec.trial_id + ": missing channel " + names[i]);
    out.row(static_cast<Eigen::Index>(i)) = rec.samples.row(it - rec.channels.begin());
  }
  return out;
}

void stage_ingest(const PipelineConfig& cfg, State& st, StageRecord& rec, const fs::path& out) {
  if (cfg.dataset.source == "synthetic") {
    fs::create_directories(out / "data");
    for (const auto& r : st.recs) {
      const std::string rel = "data/" + r.trial_id + ".csv";
      ingest::write_recording_csv(out / rel, r);
      rec.outputs.push_back({rel, sha256_file(out / rel)});
    }
  } else {
    for (const auto& f : cfg.dataset.files) rec.inputs.push_back({f.path.string(), sha256_file(f.path)});
    if (cfg.dataset.column_map) {
      rec.inputs.push_back({cfg.dataset.column_map->string(), sha256_file(*cfg.dataset.column_map)});
    }
  }
  json diag = json::array();
  for (const auto& r : st.recs) {
    auto s = ingest::window(r, cfg.window);
    if (s.size() == 0) throw DataError(r.trial_id + ": recording shorter than one window");
    st.trial_signals.push_back(channel_rows(r, s.channels));
    diag.push_back({{"trial_id", r.trial_id},
                    {"label", r.fatigue_level},
                    {"samples", r.n_samples()},
                    {"channels", s.channels},
                    {"windows", s.size()}});
    st.series.push_back(std::move(s));
  }
  ingest::write_windows_csv(out / "windows.csv", st.series);
  write_json(out / "ingest.json", {{"trials", diag}});
  rec.outputs.push_back({"windows.csv", sha256_file(out / "windows.csv")});
  rec.outputs.push_back({"ingest.json", sha256_file(out / "ingest.json")});
}

void stage_multifractal(const PipelineConfig& cfg, State& st, StageRecord& rec, const fs::path& out) {
  const auto& mc = cfg.multifractal;
  const std::size_t T = st.series.size();
  const std::size_t C = st.series.front().channels.size();
  for (const auto& s : st.series) {
    if (s.channels.size() != C) throw DataError("recordings differ in channel count");
  }
  // Whole-trial analyses with bootstrap intervals.
  st.trial_mfa.assign(T, std::vector<mf::MultifractalSummary>(C));
  const std::uint64_t boot_seed = derive_seed(cfg.seed, "bootstrap");
  parallel_for(T * C, [&](std::size_t task) {
    const std::size_t t = task / C, c = task % C;
    mf::MfaOptions o;
    o.family = mc.family;
    o.qs = mc.qs;
    o.j1 = mc.trial_j1;
    o.j2 = mc.trial_j2;
    o.weighted = mc.weighted;
    o.convention = mc.convention;
    o.bootstrap_resamples = mc.bootstrap_resamples;
    o.bootstrap_level = mc.bootstrap_level;
    o.seed = derive_seed(boot_seed, static_cast<std::uint64_t>(task));
    const Eigen::VectorXd x = st.trial_signals[t].row(static_cast<Eigen::Index>(c)).transpose();
    st.trial_mfa[t][c] = mf::analyze(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), o);
  });

  // Per-window analyses feed the feature vectors and the D_q distributions.
  std::vector<std::pair<std::size_t, std::size_t>> tasks;
  st.window_desc.resize(T);
  st.window_dq.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    st.window_desc[t].assign(st.series[t].size(), std::nullopt);
    st.window_dq[t].assign(st.series[t].size(), std::nullopt);
    for (std::size_t w = 0; w < st.series[t].size(); ++w) tasks.emplace_back(t, w);
  }
  std::vector<std::string> failures(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    const auto [t, w] = tasks[i];
    mf::MfaOptions o;
    o.family = mc.family;
    o.qs = mc.qs;
    o.j1 = mc.window_j1;
    o.j2 = mc.window_j2;
    o.weighted = mc.weighted;
    o.convention = mc.convention;
    std::vector<distance::ChannelDescriptor> desc;
    std::vector<double> mean_dq(mc.qs.size(), 0.0);
    try {
      for (std::size_t c = 0; c < C; ++c) {
        const Eigen::VectorXd x = st.series[t].windows[w].row(static_cast<Eigen::Index>(c)).transpose();
        const auto s = mf::analyze(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), o);
        desc.push_back(distance::describe(s, mc.feature_q));
        for (std::size_t iq = 0; iq < mean_dq.size(); ++iq) mean_dq[iq] += s.dq.dq[iq] / static_cast<double>(C);
      }
      st.window_desc[t][w] = std::move(desc);
      st.window_dq[t][w] = std::move(mean_dq);
    } catch (const DataError& e) {
      failures[i] = e.what();
    } catch (const NumericError& e) {
      failures[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!failures[i].empty()) {
      rec.warnings.push_back(st.series[tasks[i].first].trial_id + " window " + std::to_string(tasks[i].second) +
                             ": " + failures[i]);
    }
  }

  json trials = json::array();
  for (std::size_t t = 0; t < T; ++t) {
    json chans = json::array();
    for (std::size_t c = 0; c < C; ++c) {
      chans.push_back(summary_json(st.trial_mfa[t][c], st.series[t].channels[c]));
    }
    std::size_t ok = 0;
    for (const auto& d : st.window_dq[t]) ok += d ? 1 : 0;
    trials.push_back({{"trial_id", st.series[t].trial_id},
                      {"label", st.series[t].label},
                      {"channels", chans},
                      {"windows_analyzed", ok},
                      {"windows_failed", st.series[t].size() - ok}});
  }
  write_json(out / "mfa_trials.json", {{"q", mc.qs.q}, {"feature_q", mc.feature_q}, {"trials", trials}});

  std::ostringstream wcsv;
  wcsv << "trial_id,label,window_index,channel,c1,c2,c3,delta_dq";
  for (double q : mc.feature_q) wcsv << ",dq_" << fmt(q);
  wcsv << '\n';
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t w = 0; w < st.series[t].size(); ++w) {
      if (!st.window_desc[t][w]) continue;
      for (std::size_t c = 0; c < C; ++c) {
        const auto& d = (*st.window_desc[t][w])[c];
        wcsv << st.series[t].trial_id << ',' << st.series[t].label << ',' << w << ',' << st.series[t].channels[c] << ','
             << fmt(d.c1) << ',' << fmt(d.c2) << ',' << fmt(d.c3) << ',' << fmt(d.delta_dq);
        for (double v : d.dq) wcsv << ',' << fmt(v);
        wcsv << '\n';
      }
    }
  }
  write_text(out / "mfa_windows.csv", wcsv.str());
  for (const char* f : {"mfa_trials.json", "mfa_windows.csv"}) rec.outputs.push_back({f, sha256_file(out / f)});
}

void stage_fracnet(const PipelineConfig& cfg, State& st, StageRecord& rec, const fs::path& out) {
  const std::size_t T = st.series.size();
  st.alphas.resize(T);
  st.trajs.resize(T);
  json trials = json::array();
  for (std::size_t t = 0; t < T; ++t) {
    st.alphas[t] = fracnet::estimate_alphas(st.trial_signals[t]);
    Eigen::VectorXd alpha(static_cast<Eigen::Index>(st.alphas[t].size()));
    json ja = json::array();
    for (std::size_t c = 0; c < st.alphas[t].size(); ++c) {
      alpha(static_cast<Eigen::Index>(c)) = st.alphas[t][c].alpha;
      ja.push_back({{"channel", st.series[t].channels[c]},
                    {"alpha", st.alphas[t][c].alpha},
                    {"raw_slope", st.alphas[t][c].raw_slope},
                    {"r2", st.alphas[t][c].r2},
                    {"clamped", st.alphas[t][c].clamped}});
    }
    st.trajs[t] = fracnet::coupling_trajectory(st.series[t], alpha, cfg.fracnet.p, cfg.fracnet.em);
    const auto& tr = st.trajs[t];
    double iters = 0.0, resid = 0.0, conv = 0.0;
    std::size_t valid = 0;
    for (const auto& f : tr.fits) {
      if (!f.valid) continue;
      ++valid;
      iters += static_cast<double>(f.iterations);
      resid += f.residual_rms;
      conv += f.converged ? 1.0 : 0.0;
    }
    const double nv = std::max<double>(1.0, static_cast<double>(valid));
    if (tr.invalid_count() > 0) {
      rec.warnings.push_back(tr.trial_id + ": " + std::to_string(tr.invalid_count()) + " window fits failed");
    }
    trials.push_back({{"trial_id", tr.trial_id},
                      {"label", tr.fatigue_level},
                      {"alpha", ja},
                      {"windows", tr.windows()},
                      {"invalid_windows", tr.invalid_count()},
                      {"mean_iterations", iters / nv},
                      {"converged_fraction", conv / nv},
                      {"mean_residual_rms", resid / nv}});
  }
  fracnet::write_trajectories_csv(out / "trajectories.csv", st.trajs);
  write_json(out / "fracnet.json", {{"p", cfg.fracnet.p}, {"trials", trials}});
  for (const char* f : {"trajectories.csv", "fracnet.json"}) rec.outputs.push_back({f, sha256_file(out / f)});
}

void stage_complexity(const PipelineConfig&, State& st, StageRecord& rec, const fs::path& out) {
  std::map<int, std::vector<double>> by_level;
  for (const auto& tr : st.trajs) {
    complexity::TrajectoryComplexity r;
    r.trial_id = tr.trial_id;
    r.fatigue_level = tr.fatigue_level;
    const auto bits = complexity::binarize(tr);
    r.result = complexity::lz76(bits);
    r.degenerate = bits.degenerate;
    by_level[r.fatigue_level].push_back(r.result.ci);
    st.lzc.push_back(r);
  }
  complexity::write_complexity_csv(out / "complexity.csv", st.lzc);
  rec.outputs.push_back({"complexity.csv", sha256_file(out / "complexity.csv")});
  json groups;
  try {
    const auto g = complexity::group_compare(by_level);
    json means, counts;
    for (const auto& [l, m] : g.means) means[std::to_string(l)] = m;
    for (const auto& [l, n] : g.counts) counts[std::to_string(l)] = n;
    groups = {{"test", "kruskal-wallis"}, {"h", g.h}, {"p_value", g.p_value}, {"dof", g.dof}, {"means", means}, {"counts", counts}};
    std::ostringstream dens;
    dens << "level,x,density,bandwidth\n";
    for (const auto& [l, d] : g.densities) {
      for (std::size_t i = 0; i < d.grid.size(); ++i) {
        dens << l << ',' << fmt(d.grid[i]) << ',' << fmt(d.values[i]) << ',' << fmt(d.bandwidth) << '\n';
      }
    }
    write_text(out / "lzci_density.csv", dens.str());
    rec.outputs.push_back({"lzci_density.csv", sha256_file(out / "lzci_density.csv")});
  } catch (const DataError& e) {
    groups = {{"test", "kruskal-wallis"}, {"error", e.what()}};
    rec.warnings.push_back(std::string("group comparison skipped: ") + e.what());
  }
  write_json(out / "complexity_groups.json", groups);
  rec.outputs.push_back({"complexity_groups.json", sha256_file(out / "complexity_groups.json")});
}

void stage_distance(const PipelineConfig& cfg, State& st, StageRecord& rec, const fs::path& out) {
  const auto& q = cfg.multifractal.qs.q;
  distance::CurveSamples samples;
  for (std::size_t t = 0; t < st.series.size(); ++t) {
    std::vector<double> mean(q.size(), 0.0);
    std::size_t n = 0;
    for (const auto& d : st.window_dq[t]) {
      if (!d) continue;
      if (cfg.distance.granularity == "window") {
        samples[st.series[t].label].push_back(*d);
      } else {
        for (std::size_t i = 0; i < q.size(); ++i) mean[i] += (*d)[i];
        ++n;
      }
    }
    if (cfg.distance.granularity == "trial" && n > 0) {
      for (double& v : mean) v /= static_cast<double>(n);
      samples[st.series[t].label].push_back(mean);
    }
  }

  // D_q curves per level, mean with a normal-approximation 95% interval.
  std::ostringstream dq;
  dq << "level,q,mean,ci_low,ci_high,n\n";
  for (const auto& [level, curves] : samples) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      double m = 0.0, ss = 0.0;
      for (const auto& c : curves) m += c[i];
      m /= static_cast<double>(curves.size());
      for (const auto& c : curves) ss += (c[i] - m) * (c[i] - m);
      const double se = curves.size() > 1 ? std::sqrt(ss / static_cast<double>(curves.size() - 1) /
                                                      static_cast<double>(curves.size()))
                                          : 0.0;
      dq << level << ',' << fmt(q[i]) << ',' << fmt(m) << ',' << fmt(m - 1.96 * se) << ',' << fmt(m + 1.96 * se) << ','
         << curves.size() << '\n';
    }
  }
  write_text(out / "dq_curves.csv", dq.str());
  rec.outputs.push_back({"dq_curves.csv", sha256_file(out / "dq_curves.csv")});

  json wj{{"granularity", cfg.distance.granularity},
          {"primary", distance::reduction_name(cfg.distance.reduction)}};
  std::ostringstream wcsv;
  wcsv << "a,b,reduction,q,w1\n";
  try {
    const auto curve = distance::pairwise_level_distances(samples, q, distance::Reduction::curve);
    const auto scalar =
        distance::pairwise_level_distances(samples, q, distance::Reduction::scalar, cfg.distance.scalar_q);
    wj["curve"] = distance_json(curve);
    wj["scalar"] = distance_json(scalar);
    for (const auto* t : {&curve, &scalar}) {
      for (std::size_t a = 0; a < t->levels.size(); ++a) {
        for (std::size_t b = a + 1; b < t->levels.size(); ++b) {
          wcsv << t->levels[a] << ',' << t->levels[b] << ',' << distance::reduction_name(t->reduction) << ','
               << (t->reduction == distance::Reduction::scalar ? fmt(t->scalar_q) : std::string("all")) << ','
               << fmt(t->w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))) << '\n';
        }
      }
    }
  } catch (const DataError& e) {
    wj["error"] = e.what();
    rec.warnings.push_back(std::string("Wasserstein distances skipped: ") + e.what());
  }
  write_json(out / "wasserstein.json", wj);
  write_text(out / "wasserstein.csv", wcsv.str());

  distance::FeatureLayout layout;
  layout.feature_q = cfg.multifractal.feature_q;
  layout.channels = st.series.front().channels;
  st.features = distance::FeatureSet{};
  st.features.layout = layout;
  st.features.x.resize(0, static_cast<Eigen::Index>(layout.length()));
  for (std::size_t t = 0; t < st.series.size(); ++t) {
    std::vector<double> alphas;
    for (const auto& a : st.alphas[t]) alphas.push_back(a.alpha);
    std::vector<double> lzc;
    for (std::size_t w = 0; w < st.trajs[t].windows(); ++w) {
      lzc.push_back(st.trajs[t].fits[w].valid ? distance::window_lzc(st.trajs[t].coupling(w)) : 0.0);
    }
    st.features.append(distance::assemble_features(st.window_desc[t], st.trajs[t], alphas, lzc, layout));
  }
  if (st.features.dropped > 0) {
    rec.warnings.push_back(std::to_string(st.features.dropped) + " windows dropped from the feature matrix");
  }
  distance::write_features_csv(out / "features.csv", st.features);
  for (const char* f : {"wasserstein.json", "wasserstein.csv", "features.csv"}) {
    rec.outputs.push_back({f, sha256_file(out / f)});
  }
}

learn::Dataset dataset_from(const State& st) {
  learn::Dataset ds;
  std::map<std::string, std::size_t> trial;
  for (std::size_t t = 0; t < st.series.size(); ++t) trial[st.series[t].trial_id] = t;
  for (std::size_t r = 0; r < st.features.rows(); ++r) {
    const std::size_t t = trial.at(st.features.trial_ids[r]);
    ds.raw.push_back(st.series[t].windows[st.features.window_index[r]]);
    ds.labels.push_back(st.features.labels[r]);
    ds.groups.push_back(st.features.trial_ids[r]);
    ds.window_index.push_back(st.features.window_index[r]);
  }
  ds.features = st.features.x;
  return ds;
}

void stage_learn(const PipelineConfig& cfg, State& st, StageRecord& rec, const fs::path& out) {
  const learn::Dataset ds = dataset_from(st);
  const auto report = learn::crossvalidate(ds, cfg.learn.encoder, cfg.learn.train);
  json j{{"fdnml", learn::to_json(report)}, {"windows", ds.size()}};
  if (cfg.learn.baseline) j["majority"] = learn::to_json(learn::majority_baseline(ds, cfg.learn.train), false);
  write_json(out / "learn_report.json", j);

  write_confusion_csv(out / "confusion.csv", report.pooled.confusion);
  std::vector<std::pair<std::string, const learn::Curves*>> curves;
  for (const auto& f : report.folds) {
    curves.emplace_back(std::to_string(f.fold), &f.pretrain_curves);
    curves.emplace_back(std::to_string(f.fold), &f.classifier_curves);
  }
  write_curves_csv(out / "loss_curves.csv", curves);
  write_metrics_csv(out / "metrics.csv", report.pooled);
  if (!report.pooled.undefined.empty()) {
    std::string u;
    for (const auto& s : report.pooled.undefined) u += (u.empty() ? "" : ", ") + s;
    rec.warnings.push_back("undefined metrics: " + u);
  }
  for (const char* f : {"learn_report.json", "confusion.csv", "loss_curves.csv", "metrics.csv"}) {
    rec.outputs.push_back({f, sha256_file(out / f)});
  }
}

}  // namespace

RunManifest run_pipeline(const PipelineConfig& cfg) {
  if (cfg.threads > 0) set_thread_count(cfg.threads);
  std::vector<std::string> load_warnings;
  State st;
  // Validation and loading write nothing; the output directory is created
  // only once they pass.
  st.recs = load_recordings(cfg, &load_warnings);
  check_folds(cfg, st.recs);

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  const json resolved = cfg.to_json();
  write_json(out / "config.resolved.json", resolved);

  RunManifest manifest;
  manifest.seed = cfg.seed;
  // The output location does not affect any result, so it stays out of the hash.
  json hashed = resolved;
  hashed.erase("output_dir");
  manifest.config_hash = sha256_hex(hashed.dump());
  manifest.warnings = load_warnings;
  json timings = json::object();

  auto flush = [&] {
    write_json(out / "manifest.json", manifest.to_json());
    write_json(out / "timings.json", timings);
  };
  auto run = [&](const std::string& name, const std::function<void(StageRecord&)>& fn) {
    StageRecord rec;
    rec.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(rec);
    } catch (const std::exception& e) {
      timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      flush();
      throw StageError(name, e.what());
    }
    timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    manifest.stages.push_back(std::move(rec));
    flush();
  };

  run("ingest", [&](StageRecord& r) { stage_ingest(cfg, st, r, out); });
  run("multifractal", [&](StageRecord& r) { stage_multifractal(cfg, st, r, out); });
  run("fracnet", [&](StageRecord& r) { stage_fracnet(cfg, st, r, out); });
  run("complexity", [&](StageRecord& r) { stage_complexity(cfg, st, r, out); });
  run("distance", [&](StageRecord& r) { stage_distance(cfg, st, r, out); });
  if (cfg.learn.enabled) run("learn", [&](StageRecord& r) { stage_learn(cfg, st, r, out); });
  return manifest;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("missing stage output " + p.string());
  return json::parse(in);
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v << "%";
  return os.str();
}

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string jnum(const json& v, int digits = 4) { return v.is_number() ? num(v.get<double>(), digits) : "n/a"; }
std::string jpct(const json& v) { return v.is_number() ? pct(v.get<double>()) : "n/a"; }

void require(const StageRecord* s, const std::string& name) {
  if (s == nullptr) throw DataError("manifest has no '" + name + "' stage");
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("missing stage output " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(ingest::split_line(line, ','));
  }
  return rows;
}

}  // namespace

std::string render_report(const RunManifest& m, const fs::path& dir) {
  if (m.stages.empty()) throw DataError("manifest is empty");
  for (const char* name : {"ingest", "multifractal", "fracnet", "complexity", "distance"}) require(m.stage(name), name);
  for (const auto& s : m.stages) {
    for (const auto& o : s.outputs) {
      if (!fs::exists(dir / o.path)) throw DataError("stage output listed in the manifest is missing: " + o.path);
    }
  }
  std::ostringstream r;
  r << "# FDNML run report\n\n";

  const json ingest = read_json(dir / "ingest.json");
  std::map<int, std::size_t> trials_per_level, windows_per_level;
  for (const auto& t : ingest["trials"]) {
    ++trials_per_level[t["label"].get<int>()];
    windows_per_level[t["label"].get<int>()] += t["windows"].get<std::size_t>();
  }
  r << "## 1. Run summary\n\n";
  r << "- version: " << m.version << "\n- config hash: `" << m.config_hash << "`\n- seed: " << m.seed << "\n";
  r << "- stages: ";
  for (std::size_t i = 0; i < m.stages.size(); ++i) r << (i ? ", " : "") << m.stages[i].name;
  r << "\n\n| level | trials | windows |\n|---|---|---|\n";
  for (const auto& [l, n] : trials_per_level) r << "| " << l << " | " << n << " | " << windows_per_level[l] << " |\n";
  std::vector<std::string> warnings = m.warnings;
  for (const auto& s : m.stages) {
    for (const auto& w : s.warnings) warnings.push_back(s.name + ": " + w);
  }
  if (!warnings.empty()) {
    r << "\nWarnings:\n\n";
    const std::size_t shown = std::min<std::size_t>(warnings.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) r << "- " << warnings[i] << "\n";
    if (warnings.size() > shown) r << "- ... " << warnings.size() - shown << " more in manifest.json\n";
  }
  r << "\nSource: `ingest.json`, `manifest.json`.\n\n";

  // Multifractal.
  r << "## 2. Multifractal analysis\n\n";
  const json mfa = read_json(dir / "mfa_trials.json");
  std::map<int, std::vector<double>> c1, c2;
  std::map<int, std::size_t> c2_reject, c2_total;
  for (const auto& t : mfa["trials"]) {
    const int l = t["label"];
    for (const auto& c : t["channels"]) {
      c1[l].push_back(c["c1"]);
      c2[l].push_back(c["c2"]);
      if (c.contains("c2_p_value")) {
        ++c2_total[l];
        if (c["c2_p_value"].get<double>() < 0.05) ++c2_reject[l];
      }
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  r << "Whole-trial log-cumulants (mean over trials and channels):\n\n";
  r << "| level | c1 | c2 | channels with c2 != 0 (p < 0.05) |\n|---|---|---|---|\n";
  for (const auto& [l, v] : c1) {
    r << "| " << l << " | " << num(mean(v)) << " | " << num(mean(c2[l])) << " | ";
    if (c2_total[l] > 0) {
      r << c2_reject[l] << " / " << c2_total[l];
    } else {
      r << "bootstrap off";
    }
    r << " |\n";
  }
  const auto dq = read_csv(dir / "dq_curves.csv");
  r << "\nD_q per level at selected q (mean [95% CI]):\n\n| level | q | D_q |\n|---|---|---|\n";
  for (std::size_t i = 1; i < dq.size(); ++i) {
    const double q = std::stod(dq[i][1]);
    if (std::abs(q - std::round(q)) > 1e-9 || std::fmod(std::abs(q), 2.0) > 1e-9) continue;
    r << "| " << dq[i][0] << " | " << dq[i][1] << " | " << num(std::stod(dq[i][2])) << " [" << num(std::stod(dq[i][3]))
      << ", " << num(std::stod(dq[i][4])) << "] |\n";
  }
  r << "\nSource: `mfa_trials.json`, `mfa_windows.csv`, `dq_curves.csv` (full curves for plotting).\n\n";

  // Wasserstein.
  r << "## 3. Wasserstein distances between D_q distributions\n\n";
  const json wj = read_json(dir / "wasserstein.json");
  if (wj.contains("error")) {
    r << "Not computed: " << wj["error"].get<std::string>() << "\n\n";
  } else {
    const std::map<std::pair<int, int>, std::string> reference{{{0, 1}, "0.10"}, {{1, 2}, "0.13"}, {{0, 2}, "0.08"}};
    r << "Granularity: " << wj["granularity"].get<std::string>() << " samples; primary reduction: "
      << wj["primary"].get<std::string>() << ".\n\n";
    r << "| pair | W1 (curve mean over q) | W1 (q = " << jnum(wj["scalar"]["q"], 1)
      << ") | reference target |\n|---|---|---|---|\n";
    const auto& cp = wj["curve"]["pairs"];
    const auto& sp = wj["scalar"]["pairs"];
    for (std::size_t i = 0; i < cp.size(); ++i) {
      const std::pair<int, int> key{cp[i]["a"].get<int>(), cp[i]["b"].get<int>()};
      const auto ref = reference.find(key);
      r << "| " << key.first << "-" << key.second << " | " << jnum(cp[i]["w1"]) << " | " << jnum(sp[i]["w1"]) << " | "
        << (ref != reference.end() ? ref->second : "-") << " |\n";
    }
    r << "\n";
  }
  r << "Source: `wasserstein.json`, `wasserstein.csv` (bar data).\n\n";

  // Complexity.
  r << "## 4. Complexity of coupling trajectories\n\n";
  const json groups = read_json(dir / "complexity_groups.json");
  const auto lz = read_csv(dir / "complexity.csv");
  std::map<int, std::vector<double>> ci;
  for (std::size_t i = 1; i < lz.size(); ++i) ci[std::stoi(lz[i][1])].push_back(std::stod(lz[i][3]));
  const std::map<int, std::string> lz_ref{{0, "1.1703"}, {1, "1.2142"}, {2, "1.2320"}};
  r << "| level | trials | mean LZCI | reference target |\n|---|---|---|---|\n";
  for (const auto& [l, v] : ci) {
    const auto ref = lz_ref.find(l);
    r << "| " << l << " | " << v.size() << " | " << num(mean(v)) << " | "
      << (ref != lz_ref.end() ? ref->second : "-") << " |\n";
  }
  if (groups.contains("h")) {
    r << "\nKruskal-Wallis H = " << jnum(groups["h"]) << ", p = " << jnum(groups["p_value"])
      << " (reference target p = 0.0671).\n";
  } else if (groups.contains("error")) {
    r << "\nGroup test not computed: " << groups["error"].get<std::string>() << "\n";
  }
  r << "\nSource: `complexity.csv`, `complexity_groups.json`, `lzci_density.csv` (density/violin data).\n\n";

  // Fractional network.
  r << "## 5. Fractional dynamical network\n\n";
  const json fj = read_json(dir / "fracnet.json");
  std::map<int, std::vector<double>> alpha, conv, iters;
  std::size_t invalid = 0, windows = 0;
  for (const auto& t : fj["trials"]) {
    const int l = t["label"];
    for (const auto& a : t["alpha"]) alpha[l].push_back(a["alpha"]);
    conv[l].push_back(t["converged_fraction"]);
    iters[l].push_back(t["mean_iterations"]);
    invalid += t["invalid_windows"].get<std::size_t>();
    windows += t["windows"].get<std::size_t>();
  }
  r << "Latent inputs p = " << fj["p"] << "; " << windows - invalid << " of " << windows << " window fits valid.\n\n";
  r << "| level | mean alpha | converged fraction | mean EM iterations |\n|---|---|---|---|\n";
  for (const auto& [l, v] : alpha) {
    r << "| " << l << " | " << num(mean(v), 3) << " | " << num(mean(conv[l]), 3) << " | " << num(mean(iters[l]), 1)
      << " |\n";
  }
  r << "\nSource: `fracnet.json`, `trajectories.csv` (one row per window, coupling entries a_r_c row-major).\n\n";

  // Classification.
  if (const StageRecord* ls = m.stage("learn")) {
    (void)ls;
    const json lj = read_json(dir / "learn_report.json");
    const json& f = lj["fdnml"];
    r << "## 6. Classification\n\n";
    r << "Stratified " << f["folds"].size() << "-fold cross-validation, evaluation unit: "
      << f["unit"].get<std::string>() << ", " << lj["windows"] << " windows. Trainable parameters: "
      << f["parameter_count"] << " (reference target 6.24K).\n\n";
    r << "| model | accuracy (mean +- sd) | macro AUROC (mean +- sd) | macro F1 |\n|---|---|---|---|\n";
    r << "| FDNML | " << jpct(f["accuracy"]["mean"]) << " +- " << jpct(f["accuracy"]["sd"]) << " | "
      << jpct(f["macro_auroc"]["mean"]) << " +- " << jpct(f["macro_auroc"]["sd"]) << " | "
      << jpct(f["macro_f1"]["mean"]) << " |\n";
    if (lj.contains("majority")) {
      const json& b = lj["majority"];
      r << "| majority class | " << jpct(b["accuracy"]["mean"]) << " +- " << jpct(b["accuracy"]["sd"]) << " | "
        << jpct(b["macro_auroc"]["mean"]) << " | " << jpct(b["macro_f1"]["mean"]) << " |\n";
    }
    r << "| reference target | 93.33% | 95.00% | 93.46% |\n\n";
    const json& pooled = f["pooled"];
    r << "Per-class metrics over all held-out predictions:\n\n";
    r << "| level | precision | sensitivity | specificity | F1 | AUROC |\n|---|---|---|---|---|---|\n";
    for (std::size_t c = 0; c < pooled["per_class"].size(); ++c) {
      const auto& pc = pooled["per_class"][c];
      r << "| " << c << " | " << jpct(pc["precision"]) << " | " << jpct(pc["sensitivity"]) << " | "
        << jpct(pc["specificity"]) << " | " << jpct(pc["f1"]) << " | " << jpct(pc["auroc"]) << " |\n";
    }
    r << "\nConfusion matrix (rows true level, columns predicted):\n\n| | 0 | 1 | 2 |\n|---|---|---|---|\n";
    for (std::size_t i = 0; i < pooled["confusion"].size(); ++i) {
      r << "| " << i;
      for (const auto& v : pooled["confusion"][i]) r << " | " << v;
      r << " |\n";
    }
    r << "\nSource: `learn_report.json`, `metrics.csv`, `confusion.csv`, `loss_curves.csv`.\n";
  } else {
    r << "Notice: the learn stage did not run, so there is no classification section.\n";
  }
  return r.str();
}

fs::path write_report(const fs::path& manifest_path) {
  const json j = read_json(manifest_path);
  const RunManifest m = RunManifest::from_json(j);
  const fs::path dir = manifest_path.parent_path();
  const std::string text = render_report(m, dir);
  const fs::path out = dir / "report.md";
  write_text(out, text);
  return out;
}

}  // namespace fdnml::pipeline
