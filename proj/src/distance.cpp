#include "fdnml/distance.hpp"

#include "fdnml/common.hpp"
#include "fdnml/complexity.hpp"
#include "fdnml/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace fdnml::distance {

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("wasserstein1 needs two nonempty samples");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  for (double v : sa) {
    if (!std::isfinite(v)) throw DataError("wasserstein1: non-finite sample");
  }
  for (double v : sb) {
    if (!std::isfinite(v)) throw DataError("wasserstein1: non-finite sample");
  }
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const auto na = static_cast<double>(sa.size());
  const auto nb = static_cast<double>(sb.size());
  // Sweep the merged support; between consecutive breakpoints both CDFs are flat.
  std::size_t i = 0, j = 0;
  double prev = std::min(sa.front(), sb.front());
  double total = 0.0;
  while (i < sa.size() || j < sb.size()) {
    double next;
    if (j == sb.size() || (i < sa.size() && sa[i] <= sb[j])) {
      next = sa[i];
    } else {
      next = sb[j];
    }
    const double fa = static_cast<double>(i) / na;
    const double fb = static_cast<double>(j) / nb;
    total += std::abs(fa - fb) * (next - prev);
    while (i < sa.size() && sa[i] == next) ++i;
    while (j < sb.size() && sb[j] == next) ++j;
    prev = next;
  }
  return total;
}

Reduction parse_reduction(const std::string& name) {
  if (name == "curve") return Reduction::curve;
  if (name == "scalar") return Reduction::scalar;
  throw ConfigError("unknown distance reduction '" + name + "' (curve|scalar)");
}

std::string reduction_name(Reduction r) { return r == Reduction::curve ? "curve" : "scalar"; }

double DistanceTable::at(int a, int b) const {
  const auto ia = std::find(levels.begin(), levels.end(), a);
  const auto ib = std::find(levels.begin(), levels.end(), b);
  if (ia == levels.end() || ib == levels.end()) throw DataError("level not in distance table");
  return w(ia - levels.begin(), ib - levels.begin());
}

namespace {

DistanceTable table_from(const std::vector<int>& levels,
                         const std::function<double(std::size_t, std::size_t)>& dist) {
  DistanceTable t;
  t.levels = levels;
  const auto n = static_cast<Eigen::Index>(levels.size());
  t.w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      t.w(a, b) = t.w(b, a) = dist(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
    }
  }
  return t;
}

}  // namespace

DistanceTable pairwise_level_distances(const std::map<int, std::vector<double>>& samples) {
  if (samples.size() < 2) throw DataError("pairwise distances need at least two levels");
  std::vector<int> levels;
  std::vector<const std::vector<double>*> data;
  for (const auto& [level, v] : samples) {
    if (v.size() < 2) throw DataError("level " + std::to_string(level) + " has fewer than two samples");
    levels.push_back(level);
    data.push_back(&v);
  }
  auto t = table_from(levels, [&](std::size_t a, std::size_t b) { return wasserstein1(*data[a], *data[b]); });
  t.reduction = Reduction::scalar;
  return t;
}

DistanceTable pairwise_level_distances(const CurveSamples& curves, std::span<const double> q, Reduction reduction,
                                       double scalar_q) {
  if (curves.size() < 2) throw DataError("pairwise distances need at least two levels");
  if (q.empty()) throw ConfigError("empty q grid");
  std::vector<int> levels;
  std::vector<const std::vector<std::vector<double>>*> data;
  for (const auto& [level, v] : curves) {
    if (v.size() < 2) throw DataError("level " + std::to_string(level) + " has fewer than two samples");
    for (const auto& c : v) {
      if (c.size() != q.size()) throw DataError("D_q curve length does not match the q grid");
    }
    levels.push_back(level);
    data.push_back(&v);
  }
  auto column = [](const std::vector<std::vector<double>>& v, std::size_t iq) {
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& c : v) out.push_back(c[iq]);
    return out;
  };
  std::size_t scalar_idx = 0;
  if (reduction == Reduction::scalar) {
    const auto it = std::find_if(q.begin(), q.end(), [&](double v) { return std::abs(v - scalar_q) < 1e-9; });
    if (it == q.end()) throw ConfigError("scalar distance q is not on the q grid");
    scalar_idx = static_cast<std::size_t>(it - q.begin());
  }
  auto t = table_from(levels, [&](std::size_t a, std::size_t b) {
    if (reduction == Reduction::scalar) return wasserstein1(column(*data[a], scalar_idx), column(*data[b], scalar_idx));
    double acc = 0.0;
    for (std::size_t iq = 0; iq < q.size(); ++iq) acc += wasserstein1(column(*data[a], iq), column(*data[b], iq));
    return acc / static_cast<double>(q.size());
  });
  t.reduction = reduction;
  t.scalar_q = scalar_q;
  return t;
}

// ---------------------------------------------------------------------------

std::vector<std::string> FeatureLayout::names() const {
  std::vector<std::string> out;
  auto qname = [](double q) {
    std::string s = ingest::format_double(q);
    std::replace(s.begin(), s.end(), '-', 'm');
    return s;
  };
  for (const auto& ch : channels) {
    for (double q : feature_q) out.push_back(ch + "_dq_" + qname(q));
    out.push_back(ch + "_c1");
    out.push_back(ch + "_c2");
    out.push_back(ch + "_c3");
    out.push_back(ch + "_delta_dq");
  }
  for (std::size_t r = 0; r < channels.size(); ++r) {
    for (std::size_t c = 0; c < channels.size(); ++c) out.push_back("a_" + std::to_string(r) + "_" + std::to_string(c));
  }
  for (const auto& ch : channels) out.push_back(ch + "_alpha");
  out.push_back("window_lzc");
  return out;
}

std::size_t FeatureLayout::length() const {
  const std::size_t n = channels.size();
  return n * (feature_q.size() + 4) + n * n + n + 1;
}

ChannelDescriptor describe(const mf::MultifractalSummary& s, std::span<const double> feature_q) {
  ChannelDescriptor d;
  const auto& q = s.dq.q;
  const auto& dq = s.dq.dq;
  if (q.size() < 2) throw DataError("D_q curve has fewer than two points");
  for (double fq : feature_q) {
    if (fq < q.front() - 1e-12 || fq > q.back() + 1e-12) throw ConfigError("feature q outside the analysis grid");
    auto it = std::lower_bound(q.begin(), q.end(), fq - 1e-12);
    std::size_t hi = static_cast<std::size_t>(it - q.begin());
    if (hi >= q.size()) hi = q.size() - 1;
    if (std::abs(q[hi] - fq) < 1e-12 || hi == 0) {
      d.dq.push_back(dq[hi]);
    } else {
      const double t = (fq - q[hi - 1]) / (q[hi] - q[hi - 1]);
      d.dq.push_back(dq[hi - 1] + t * (dq[hi] - dq[hi - 1]));
    }
  }
  d.c1 = s.cumulants.c1;
  d.c2 = s.cumulants.c2;
  d.c3 = s.cumulants.c3;
  d.delta_dq = s.dq.delta_dq;
  return d;
}

double window_lzc(const Eigen::MatrixXd& a) {
  std::vector<double> flat;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) flat.push_back(a(r, c));
  }
  return complexity::lz76(complexity::binarize(flat)).ci;
}

void FeatureSet::append(const FeatureSet& other) {
  if (other.layout.version != layout.version || other.layout.length() != layout.length()) {
    throw DataError("feature layout mismatch");
  }
  const Eigen::Index r0 = x.rows();
  Eigen::MatrixXd merged(r0 + other.x.rows(), static_cast<Eigen::Index>(layout.length()));
  if (r0 > 0) merged.topRows(r0) = x;
  if (other.x.rows() > 0) merged.bottomRows(other.x.rows()) = other.x;
  x = std::move(merged);
  trial_ids.insert(trial_ids.end(), other.trial_ids.begin(), other.trial_ids.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  window_index.insert(window_index.end(), other.window_index.begin(), other.window_index.end());
  dropped += other.dropped;
}

FeatureSet assemble_features(const std::vector<std::optional<std::vector<ChannelDescriptor>>>& per_window,
                             const fracnet::CouplingTrajectory& traj, std::span<const double> alphas,
                             std::span<const double> lzc, const FeatureLayout& layout) {
  const std::size_t W = per_window.size();
  const std::size_t n = layout.channels.size();
  if (traj.windows() != W || lzc.size() != W) {
    throw DataError("misaligned window counts: " + std::to_string(W) + " analyses, " +
                    std::to_string(traj.windows()) + " fits, " + std::to_string(lzc.size()) + " LZC values");
  }
  if (traj.n_channels != n || alphas.size() != n) throw DataError("channel count mismatch in feature assembly");

  FeatureSet fs;
  fs.layout = layout;
  std::vector<std::vector<double>> rows;
  for (std::size_t w = 0; w < W; ++w) {
    if (!per_window[w] || !traj.fits[w].valid) {
      ++fs.dropped;
      continue;
    }
    const auto& desc = *per_window[w];
    if (desc.size() != n) throw DataError("window " + std::to_string(w) + ": wrong number of channel descriptors");
    std::vector<double> row;
    row.reserve(layout.length());
    for (const auto& d : desc) {
      if (d.dq.size() != layout.feature_q.size()) throw DataError("descriptor does not match the feature q list");
      row.insert(row.end(), d.dq.begin(), d.dq.end());
      row.push_back(d.c1);
      row.push_back(d.c2);
      row.push_back(d.c3);
      row.push_back(d.delta_dq);
    }
    for (Eigen::Index k = 0; k < traj.matrices.cols(); ++k) row.push_back(traj.matrices(static_cast<Eigen::Index>(w), k));
    row.insert(row.end(), alphas.begin(), alphas.end());
    row.push_back(lzc[w]);
    if (!std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); })) {
      ++fs.dropped;
      continue;
    }
    rows.push_back(std::move(row));
    fs.trial_ids.push_back(traj.trial_id);
    fs.labels.push_back(traj.fatigue_level);
    fs.window_index.push_back(w);
  }
  fs.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(layout.length()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < layout.length(); ++c) {
      fs.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return fs;
}

void write_features_csv(const std::filesystem::path& path, const FeatureSet& fs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# fdnml-features layout_version=" << fs.layout.version << " feature_q=";
  for (std::size_t i = 0; i < fs.layout.feature_q.size(); ++i) {
    out << (i ? ";" : "") << ingest::format_double(fs.layout.feature_q[i]);
  }
  out << " channels=";
  for (std::size_t i = 0; i < fs.layout.channels.size(); ++i) out << (i ? ";" : "") << fs.layout.channels[i];
  out << "\ntrial_id,label,window_index";
  for (const auto& name : fs.layout.names()) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < fs.rows(); ++r) {
    out << fs.trial_ids[r] << ',' << fs.labels[r] << ',' << fs.window_index[r];
    for (Eigen::Index c = 0; c < fs.x.cols(); ++c) out << ',' << ingest::format_double(fs.x(static_cast<Eigen::Index>(r), c));
    out << '\n';
  }
}

FeatureSet read_features_csv(const std::filesystem::path& path, std::optional<int> expected_version) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open feature file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("# fdnml-features", 0) != 0) {
    throw DataError(path.string() + ": missing feature layout header");
  }
  FeatureSet fs;
  fs.layout.feature_q.clear();
  std::istringstream meta(line.substr(16));
  std::string tok;
  bool have_version = false;
  while (meta >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "layout_version") {
      fs.layout.version = std::stoi(val);
      have_version = true;
    } else if (key == "feature_q") {
      for (const auto& part : ingest::split_line(val, ';')) fs.layout.feature_q.push_back(std::stod(part));
    } else if (key == "channels") {
      fs.layout.channels = ingest::split_line(val, ';');
    }
  }
  if (!have_version) throw DataError(path.string() + ": feature header has no layout_version");
  if (expected_version && fs.layout.version != *expected_version) {
    throw DataError(path.string() + ": feature layout version " + std::to_string(fs.layout.version) +
                    " does not match expected version " + std::to_string(*expected_version));
  }
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing column header");
  const auto header = ingest::split_line(line, ',');
  const auto names = fs.layout.names();
  if (header.size() != names.size() + 3) throw DataError(path.string() + ": column count does not match layout");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (header[i + 3] != names[i]) throw DataError(path.string() + ": unexpected column '" + header[i + 3] + "'");
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (ingest::trim(line).empty()) continue;
    const auto cells = ingest::split_line(line, ',');
    if (cells.size() != header.size()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    fs.trial_ids.push_back(cells[0]);
    fs.labels.push_back(std::stoi(cells[1]));
    fs.window_index.push_back(static_cast<std::size_t>(std::stoull(cells[2])));
    std::vector<double> row(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& s = cells[i + 3];
      auto res = std::from_chars(s.data(), s.data() + s.size(), row[i]);
      if (res.ec != std::errc()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
    }
    rows.push_back(std::move(row));
  }
  fs.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < names.size(); ++c) fs.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return fs;
}

}  // namespace fdnml::distance
