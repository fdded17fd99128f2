#pragma once

#include "fdnml/distance.hpp"
#include "fdnml/fracnet.hpp"
#include "fdnml/ingest.hpp"
#include "fdnml/learn.hpp"
#include "fdnml/multifractal.hpp"
#include "fdnml/synth.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fdnml::pipeline {

inline constexpr const char* kVersion = "0.1.0";

struct FileEntry {
  std::filesystem::path path;
  std::optional<int> label;
  std::optional<std::string> trial_id;
};

struct DatasetConfig {
  std::string source{"synthetic"};  // synthetic | files
  synth::DatasetSpec synthetic;
  std::vector<FileEntry> files;
  std::optional<std::filesystem::path> directory;
  std::string extension{".csv"};
  std::optional<std::filesystem::path> column_map;
};

struct MultifractalConfig {
  mf::WaveletFamily family{mf::WaveletFamily::db3};
  mf::QGrid qs{mf::QGrid::standard()};
  int trial_j1{0}, trial_j2{-2};  // j1 = 0: automatic, see mf::resolve_scale_range
  int window_j1{1}, window_j2{0};
  bool weighted{true};
  mf::DqConvention convention{mf::DqConvention::partition};
  std::vector<double> feature_q{-4.0, -2.0, 2.0, 4.0};
  std::size_t bootstrap_resamples{100};
  double bootstrap_level{0.95};
};

struct FracnetConfig {
  std::size_t p{1};
  fracnet::EmOptions em;
};

struct DistanceConfig {
  std::string granularity{"trial"};  // trial | window
  distance::Reduction reduction{distance::Reduction::curve};
  double scalar_q{2.0};
};

struct LearnConfig {
  bool enabled{true};
  bool baseline{true};
  learn::EncoderConfig encoder;
  learn::TrainConfig train;
};

struct PipelineConfig {
  DatasetConfig dataset;
  ingest::WindowSpec window;
  MultifractalConfig multifractal;
  FracnetConfig fracnet;
  DistanceConfig distance;
  LearnConfig learn;
  std::uint64_t seed{0};
  std::filesystem::path output_dir{"fdnml-out"};
  std::size_t threads{0};

  nlohmann::json to_json() const;
};

// Parses and schema-checks a config document. Unknown keys, wrong types and
// out-of-range values raise ConfigError. Relative paths resolve against
// base_dir.
PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

// Loads (or synthesizes) every recording named by the dataset config.
std::vector<ingest::EegRecording> load_recordings(const PipelineConfig& cfg, std::vector<std::string>* warnings = nullptr);

// Checks fold counts against the class supports the config will produce.
void check_folds(const PipelineConfig& cfg, const std::vector<ingest::EegRecording>& recs);

struct FileDigest {
  std::string path;
  std::string sha256;
};

struct StageRecord {
  std::string name;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  std::vector<std::string> warnings;
};

struct RunManifest {
  std::string version{kVersion};
  std::string config_hash;
  std::uint64_t seed{0};
  std::vector<StageRecord> stages;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  const StageRecord* stage(const std::string& name) const;
};

// Output helpers shared by the pipeline and the per-stage CLI commands.
nlohmann::json summary_json(const mf::MultifractalSummary& s, const std::string& channel);
nlohmann::json distance_json(const distance::DistanceTable& t);
void write_confusion_csv(const std::filesystem::path& path, const Eigen::MatrixXi& confusion);
// (fold label, curves) pairs; curves with validation accuracy are tagged as classifier stages.
void write_curves_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, const learn::Curves*>>& curves);
void write_metrics_csv(const std::filesystem::path& path, const learn::MetricSet& m);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// Runs ingest -> multifractal -> fracnet -> complexity -> distance -> learn.
// Each stage's failure is rethrown as StageError after the manifest of the
// completed stages has been written. Wall-clock times go to timings.json so
// that manifest.json is reproducible byte for byte.
RunManifest run_pipeline(const PipelineConfig& cfg);

// Writes report.md next to the manifest and returns its path. Section count:
// 6 with the learn stage, otherwise 5 plus a notice.
std::filesystem::path write_report(const std::filesystem::path& manifest_path);
std::string render_report(const RunManifest& manifest, const std::filesystem::path& dir);

}  // namespace fdnml::pipeline
