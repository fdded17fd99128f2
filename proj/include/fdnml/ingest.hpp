#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fdnml::ingest {

struct EegRecording {
  std::vector<std::string> channels;  // size = n_channels
  Eigen::MatrixXd samples;            // [n_channels x n_samples], raw source units
  double sample_rate_hz{0.0};
  std::string trial_id;
  int fatigue_level{0};  // 0, 1 or 2

  std::size_t n_channels() const { return static_cast<std::size_t>(samples.rows()); }
  std::size_t n_samples() const { return static_cast<std::size_t>(samples.cols()); }
};

// Throws DataError when an invariant does not hold.
void validate(const EegRecording& rec);

struct IngestDiagnostics {
  std::size_t rows_read{0};
  std::size_t rows_dropped{0};
  std::size_t channels{0};
};

// Column-map config. Plain `key = value` lines, '#' comments:
//
//   delimiter = auto          # auto | comma | tab | semicolon
//   header = auto             # auto | true | false
//   sample_rate_hz = 256
//   trial_id = subject01_v1
//   channel.TP9 = 1           # 0-based column index or header name
//   channel.AF7 = AF7
//   label_column = 5          # or: label = 0 / label_file = labels.txt
//
// Channels keep the order in which they appear in the file.
struct ColumnMap {
  char delimiter{0};              // 0 = autodetect
  std::optional<bool> header;     // nullopt = autodetect
  std::optional<double> sample_rate_hz;
  std::optional<std::string> trial_id;
  std::vector<std::pair<std::string, std::string>> channels;  // name -> column spec
  std::optional<std::string> label_column;
  std::optional<int> label_value;
  std::optional<std::filesystem::path> label_file;
};

ColumnMap parse_column_map(const std::string& text, const std::filesystem::path& base_dir = {});
ColumnMap load_column_map(const std::filesystem::path& path);

struct LoadResult {
  EegRecording recording;
  IngestDiagnostics diagnostics;
};

// Loads a delimited text recording. With an empty ColumnMap the file is read
// in canonical layout: every column is a channel named by the header, and
// metadata comes from leading `# key=value` comment lines.
LoadResult load_recording(const std::filesystem::path& path, const ColumnMap& mapping = {});

// Canonical CSV writer. Values are written in shortest round-trip form, so a
// reload reproduces samples bit-exactly.
void write_recording_csv(const std::filesystem::path& path, const EegRecording& rec);

struct WindowSpec {
  std::size_t length_samples{512};
  std::size_t stride_samples{256};
  std::vector<std::string> channel_subset;  // empty = all channels
};

void validate(const WindowSpec& spec);

struct WindowedSeries {
  std::vector<Eigen::MatrixXd> windows;  // each [n_channels x length]
  std::vector<std::size_t> window_starts;
  std::vector<std::string> channels;
  std::string trial_id;
  int label{0};
  double sample_rate_hz{0.0};

  std::size_t size() const { return windows.size(); }
};

std::size_t window_count(std::size_t n_samples, std::size_t length, std::size_t stride);

WindowedSeries window(const EegRecording& rec, const WindowSpec& spec);

// Windows CSV: one row per (window, channel).
//   trial_id,label,window_index,start,channel,s0,...,s{L-1}
void write_windows_csv(const std::filesystem::path& path, const std::vector<WindowedSeries>& series);
std::vector<WindowedSeries> read_windows_csv(const std::filesystem::path& path);

// Shared delimited-text helpers.
std::string format_double(double v);
std::vector<std::string> split_line(const std::string& line, char delim);
char detect_delimiter(const std::string& line);
std::string trim(const std::string& s);

}  // namespace fdnml::ingest
