#include "fdnml/ingest.hpp"

#include "fdnml/common.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace fdnml::ingest {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

char detect_delimiter(const std::string& line) {
  const auto n_comma = std::count(line.begin(), line.end(), ',');
  const auto n_tab = std::count(line.begin(), line.end(), '\t');
  const auto n_semi = std::count(line.begin(), line.end(), ';');
  if (n_tab > n_comma && n_tab >= n_semi) return '\t';
  if (n_semi > n_comma) return ';';
  return ',';
}

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Parses a numeric cell. Empty cells and nan/inf spellings yield a non-finite
// value; anything else unparsable is a data error.
double parse_cell(const std::string& cell, std::size_t line_no) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec == std::errc() && res.ptr == last) return v;
  const std::string l = lower(cell);
  if (l == "nan" || l == "-nan" || l == "na" || l == "null") return std::numeric_limits<double>::quiet_NaN();
  if (l == "inf" || l == "+inf" || l == "infinity") return std::numeric_limits<double>::infinity();
  if (l == "-inf" || l == "-infinity") return -std::numeric_limits<double>::infinity();
  if (res.ec == std::errc::result_out_of_range) return std::numeric_limits<double>::infinity();
  throw DataError("line " + std::to_string(line_no) + ": cannot parse numeric cell '" + cell + "'");
}

bool looks_like_header(const std::vector<std::string>& cells) {
  for (const auto& c : cells) {
    const std::string l = lower(c);
    if (l == "nan" || l == "inf" || l == "-inf" || l == "infinity" || l == "na") continue;
    for (unsigned char ch : c) {
      if (std::isalpha(ch) && ch != 'e' && ch != 'E') return true;
    }
  }
  return false;
}

bool is_comment_or_blank(const std::string& line) {
  const std::string t = trim(line);
  return t.empty() || t[0] == '#';
}

int parse_label(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  int v = -1;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    // Tolerate labels stored as floats ("1.0").
    double d = 0.0;
    auto r2 = std::from_chars(t.data(), t.data() + t.size(), d);
    if (r2.ec != std::errc() || d != std::floor(d)) throw DataError(where + ": invalid label '" + t + "'");
    v = static_cast<int>(d);
  }
  if (v < 0 || v > 2) throw DataError(where + ": label " + std::to_string(v) + " outside {0,1,2}");
  return v;
}

std::optional<bool> parse_bool_auto(const std::string& v, const std::string& key) {
  const std::string l = lower(v);
  if (l == "auto") return std::nullopt;
  if (l == "true" || l == "yes" || l == "1") return true;
  if (l == "false" || l == "no" || l == "0") return false;
  throw ConfigError("column map: invalid value for " + key + ": '" + v + "'");
}

}  // namespace

void validate(const EegRecording& rec) {
  if (rec.samples.rows() < 1) throw DataError("recording has no channels");
  if (rec.samples.cols() < 1) throw DataError("recording has no samples");
  if (rec.channels.size() != rec.n_channels()) throw DataError("channel names do not match sample rows");
  if (!(rec.sample_rate_hz > 0.0) || !std::isfinite(rec.sample_rate_hz)) throw DataError("sample rate must be positive");
  if (rec.fatigue_level < 0 || rec.fatigue_level > 2) throw DataError("fatigue level outside {0,1,2}");
  if (!rec.samples.allFinite()) throw DataError("recording contains non-finite samples");
}

ColumnMap parse_column_map(const std::string& text, const fs::path& base_dir) {
  ColumnMap m;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("column map line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.rfind("channel.", 0) == 0) {
      const std::string name = key.substr(8);
      if (name.empty()) throw ConfigError("column map: empty channel name");
      m.channels.emplace_back(name, value);
    } else if (key == "delimiter") {
      const std::string l = lower(value);
      if (l == "auto") m.delimiter = 0;
      else if (l == "comma" || l == ",") m.delimiter = ',';
      else if (l == "tab" || l == "\\t") m.delimiter = '\t';
      else if (l == "semicolon" || l == ";") m.delimiter = ';';
      else throw ConfigError("column map: unknown delimiter '" + value + "'");
    } else if (key == "header") {
      m.header = parse_bool_auto(value, key);
    } else if (key == "sample_rate_hz") {
      double v = 0.0;
      auto res = std::from_chars(value.data(), value.data() + value.size(), v);
      if (res.ec != std::errc() || !(v > 0.0)) throw ConfigError("column map: invalid sample_rate_hz '" + value + "'");
      m.sample_rate_hz = v;
    } else if (key == "trial_id") {
      m.trial_id = value;
    } else if (key == "label_column") {
      m.label_column = value;
    } else if (key == "label") {
      try {
        m.label_value = parse_label(value, "column map");
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
    } else if (key == "label_file") {
      fs::path p(value);
      m.label_file = p.is_absolute() ? p : base_dir / p;
    } else {
      throw ConfigError("column map: unknown key '" + key + "'");
    }
  }
  if (m.channels.empty()) throw ConfigError("column map names no channels");
  const int label_sources = int(m.label_column.has_value()) + int(m.label_value.has_value()) + int(m.label_file.has_value());
  if (label_sources != 1) throw ConfigError("column map needs exactly one of label_column, label, label_file");
  return m;
}

ColumnMap load_column_map(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open column map: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_column_map(ss.str(), path.parent_path());
}

LoadResult load_recording(const fs::path& path, const ColumnMap& mapping) {
  std::ifstream in(path);
  if (!fs::exists(path) || !in) throw DataError("cannot open recording: " + path.string());

  const bool canonical = mapping.channels.empty();
  std::map<std::string, std::string> meta;
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (is_comment_or_blank(line)) {
      const std::string t = trim(line);
      if (lines.empty() && t.size() > 1 && t[0] == '#') {
        const auto eq = t.find('=');
        if (eq != std::string::npos) meta[trim(t.substr(1, eq - 1))] = trim(t.substr(eq + 1));
      }
      continue;
    }
    lines.push_back(line);
  }
  if (lines.empty()) throw DataError("recording is empty: " + path.string());

  const char delim = mapping.delimiter != 0 ? mapping.delimiter : detect_delimiter(lines.front());
  std::vector<std::string> first = split_line(lines.front(), delim);
  const bool has_header = mapping.header.value_or(looks_like_header(first));
  const std::vector<std::string> header = has_header ? first : std::vector<std::string>{};

  auto resolve_column = [&](const std::string& spec, const std::string& what) -> std::size_t {
    std::size_t idx = 0;
    auto res = std::from_chars(spec.data(), spec.data() + spec.size(), idx);
    if (res.ec == std::errc() && res.ptr == spec.data() + spec.size()) {
      if (idx >= first.size()) throw DataError(what + ": column " + spec + " absent (file has " + std::to_string(first.size()) + " columns)");
      return idx;
    }
    auto it = std::find(header.begin(), header.end(), spec);
    if (it == header.end()) throw DataError(what + ": column '" + spec + "' absent");
    return static_cast<std::size_t>(it - header.begin());
  };

  std::vector<std::string> names;
  std::vector<std::size_t> cols;
  std::optional<std::size_t> label_col;
  if (canonical) {
    for (std::size_t c = 0; c < first.size(); ++c) {
      names.push_back(has_header ? first[c] : "ch" + std::to_string(c));
      cols.push_back(c);
    }
  } else {
    for (const auto& [name, spec] : mapping.channels) {
      names.push_back(name);
      cols.push_back(resolve_column(spec, "channel " + name));
    }
    if (mapping.label_column) label_col = resolve_column(*mapping.label_column, "label");
  }

  IngestDiagnostics diag;
  diag.channels = names.size();
  std::vector<std::vector<double>> rows;
  rows.reserve(lines.size());
  std::optional<int> label_from_column;
  for (std::size_t li = has_header ? 1 : 0; li < lines.size(); ++li) {
    const auto cells = split_line(lines[li], delim);
    ++diag.rows_read;
    std::vector<double> row(cols.size());
    bool finite = true;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const double v = cols[c] < cells.size() ? parse_cell(cells[cols[c]], li + 1)
                                              : std::numeric_limits<double>::quiet_NaN();
      row[c] = v;
      finite = finite && std::isfinite(v);
    }
    if (label_col) {
      if (*label_col >= cells.size() || cells[*label_col].empty()) {
        finite = false;
      } else if (finite) {
        const int lab = parse_label(cells[*label_col], path.string() + ":" + std::to_string(li + 1));
        if (label_from_column && *label_from_column != lab) {
          throw DataError(path.string() + ": label column changes within one trial");
        }
        label_from_column = lab;
      }
    }
    if (!finite) {
      ++diag.rows_dropped;
      continue;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("recording empty after cleaning: " + path.string());

  EegRecording rec;
  rec.channels = names;
  rec.samples.resize(static_cast<Eigen::Index>(names.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t c = 0; c < names.size(); ++c) rec.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) = rows[t][c];
  }

  auto meta_or = [&](const std::string& key) -> std::optional<std::string> {
    auto it = meta.find(key);
    if (it == meta.end()) return std::nullopt;
    return it->second;
  };

  if (mapping.sample_rate_hz) {
    rec.sample_rate_hz = *mapping.sample_rate_hz;
  } else if (auto s = meta_or("sample_rate_hz")) {
    auto res = std::from_chars(s->data(), s->data() + s->size(), rec.sample_rate_hz);
    if (res.ec != std::errc()) throw DataError("invalid sample_rate_hz metadata");
  } else {
    rec.sample_rate_hz = 256.0;
  }
  rec.trial_id = mapping.trial_id.value_or(meta_or("trial_id").value_or(path.stem().string()));

  if (mapping.label_value) {
    rec.fatigue_level = *mapping.label_value;
  } else if (mapping.label_file) {
    std::ifstream lf(*mapping.label_file);
    if (!lf) throw DataError("cannot open label file: " + mapping.label_file->string());
    std::string text;
    std::getline(lf, text);
    rec.fatigue_level = parse_label(text, mapping.label_file->string());
  } else if (label_col) {
    if (!label_from_column) throw DataError("no label values found in label column");
    rec.fatigue_level = *label_from_column;
  } else if (auto s = meta_or("fatigue_level")) {
    rec.fatigue_level = parse_label(*s, path.string());
  } else {
    throw DataError("no fatigue label for " + path.string());
  }

  validate(rec);
  return {std::move(rec), diag};
}

void write_recording_csv(const fs::path& path, const EegRecording& rec) {
  validate(rec);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# sample_rate_hz=" << format_double(rec.sample_rate_hz) << '\n';
  out << "# trial_id=" << rec.trial_id << '\n';
  out << "# fatigue_level=" << rec.fatigue_level << '\n';
  for (std::size_t c = 0; c < rec.channels.size(); ++c) out << (c ? "," : "") << rec.channels[c];
  out << '\n';
  for (Eigen::Index t = 0; t < rec.samples.cols(); ++t) {
    for (Eigen::Index c = 0; c < rec.samples.rows(); ++c) out << (c ? "," : "") << format_double(rec.samples(c, t));
    out << '\n';
  }
}

void validate(const WindowSpec& spec) {
  if (spec.length_samples < 64) throw ConfigError("window length must be >= 64 samples");
  if (spec.stride_samples < 1) throw ConfigError("window stride must be >= 1");
}

std::size_t window_count(std::size_t n_samples, std::size_t length, std::size_t stride) {
  if (length == 0 || stride == 0 || n_samples < length) return 0;
  return (n_samples - length) / stride + 1;
}

WindowedSeries window(const EegRecording& rec, const WindowSpec& spec) {
  validate(spec);
  if (rec.n_samples() < spec.length_samples) {
    throw DataError("recording " + rec.trial_id + " has " + std::to_string(rec.n_samples()) +
                    " samples, shorter than one window of " + std::to_string(spec.length_samples));
  }
  std::vector<Eigen::Index> rows;
  WindowedSeries ws;
  if (spec.channel_subset.empty()) {
    for (std::size_t c = 0; c < rec.n_channels(); ++c) rows.push_back(static_cast<Eigen::Index>(c));
    ws.channels = rec.channels;
  } else {
    for (const auto& name : spec.channel_subset) {
      auto it = std::find(rec.channels.begin(), rec.channels.end(), name);
      if (it == rec.channels.end()) throw DataError("channel '" + name + "' not in recording " + rec.trial_id);
      rows.push_back(static_cast<Eigen::Index>(it - rec.channels.begin()));
      ws.channels.push_back(name);
    }
  }
  ws.trial_id = rec.trial_id;
  ws.label = rec.fatigue_level;
  ws.sample_rate_hz = rec.sample_rate_hz;
  const std::size_t count = window_count(rec.n_samples(), spec.length_samples, spec.stride_samples);
  const auto len = static_cast<Eigen::Index>(spec.length_samples);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = w * spec.stride_samples;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), len);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      m.row(static_cast<Eigen::Index>(r)) = rec.samples.row(rows[r]).segment(static_cast<Eigen::Index>(start), len);
    }
    ws.windows.push_back(std::move(m));
    ws.window_starts.push_back(start);
  }
  return ws;
}

void write_windows_csv(const fs::path& path, const std::vector<WindowedSeries>& series) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  std::size_t len = 0;
  for (const auto& s : series) {
    for (const auto& w : s.windows) {
      if (len == 0) len = static_cast<std::size_t>(w.cols());
      if (static_cast<std::size_t>(w.cols()) != len) throw DataError("windows CSV requires equal window lengths");
    }
  }
  if (!series.empty()) out << "# sample_rate_hz=" << format_double(series.front().sample_rate_hz) << '\n';
  out << "trial_id,label,window_index,start,channel";
  for (std::size_t i = 0; i < len; ++i) out << ",s" << i;
  out << '\n';
  for (const auto& s : series) {
    for (std::size_t w = 0; w < s.windows.size(); ++w) {
      for (Eigen::Index c = 0; c < s.windows[w].rows(); ++c) {
        out << s.trial_id << ',' << s.label << ',' << w << ',' << s.window_starts[w] << ','
            << s.channels[static_cast<std::size_t>(c)];
        for (Eigen::Index t = 0; t < s.windows[w].cols(); ++t) out << ',' << format_double(s.windows[w](c, t));
        out << '\n';
      }
    }
  }
}

std::vector<WindowedSeries> read_windows_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open windows file: " + path.string());
  std::string line;
  double fs_hz = 256.0;
  bool have_header = false;
  std::size_t len = 0;
  std::size_t line_no = 0;

  struct Pending {
    WindowedSeries series;
    std::vector<std::vector<std::vector<double>>> rows;  // window -> channel rows
  };
  std::vector<Pending> out;
  std::map<std::string, std::size_t> index;

  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto eq = t.find('=');
      if (eq != std::string::npos && trim(t.substr(1, eq - 1)) == "sample_rate_hz") {
        const std::string v = trim(t.substr(eq + 1));
        std::from_chars(v.data(), v.data() + v.size(), fs_hz);
      }
      continue;
    }
    const auto cells = split_line(t, ',');
    if (!have_header) {
      if (cells.size() < 6 || cells[0] != "trial_id") throw DataError(path.string() + ": not a windows CSV");
      len = cells.size() - 5;
      have_header = true;
      continue;
    }
    if (cells.size() != len + 5) throw DataError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    const std::string& trial = cells[0];
    auto it = index.find(trial);
    if (it == index.end()) {
      it = index.emplace(trial, out.size()).first;
      out.emplace_back();
      out.back().series.trial_id = trial;
      out.back().series.label = parse_label(cells[1], path.string());
      out.back().series.sample_rate_hz = fs_hz;
    }
    Pending& p = out[it->second];
    std::size_t widx = 0;
    std::size_t start = 0;
    std::from_chars(cells[2].data(), cells[2].data() + cells[2].size(), widx);
    std::from_chars(cells[3].data(), cells[3].data() + cells[3].size(), start);
    if (widx == p.rows.size()) {
      p.rows.emplace_back();
      p.series.window_starts.push_back(start);
    } else if (widx + 1 != p.rows.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": windows out of order");
    }
    if (widx == 0) {
      p.series.channels.push_back(cells[4]);
    } else if (p.rows[widx].size() >= p.series.channels.size() || p.series.channels[p.rows[widx].size()] != cells[4]) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": inconsistent channel order");
    }
    std::vector<double> vals(len);
    for (std::size_t i = 0; i < len; ++i) {
      vals[i] = parse_cell(cells[5 + i], line_no);
      if (!std::isfinite(vals[i])) throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-finite sample");
    }
    p.rows[widx].push_back(std::move(vals));
  }

  std::vector<WindowedSeries> result;
  for (auto& p : out) {
    const auto nch = static_cast<Eigen::Index>(p.series.channels.size());
    for (auto& w : p.rows) {
      if (static_cast<Eigen::Index>(w.size()) != nch) throw DataError(path.string() + ": incomplete window in " + p.series.trial_id);
      Eigen::MatrixXd m(nch, static_cast<Eigen::Index>(len));
      for (Eigen::Index c = 0; c < nch; ++c) {
        for (std::size_t t = 0; t < len; ++t) m(c, static_cast<Eigen::Index>(t)) = w[static_cast<std::size_t>(c)][t];
      }
      p.series.windows.push_back(std::move(m));
    }
    result.push_back(std::move(p.series));
  }
  return result;
}

}  // namespace fdnml::ingest
