#include "fdnml/complexity.hpp"

#include "fdnml/common.hpp"
#include "fdnml/ingest.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fdnml::complexity {

double median(std::span<const double> x) {
  if (x.empty()) throw DataError("median of an empty sequence");
  std::vector<double> v(x.begin(), x.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

BinarySequence binarize(std::span<const double> x) {
  if (x.size() < 2) throw DataError("binarize needs at least two entries");
  for (double v : x) {
    if (!std::isfinite(v)) throw DataError("binarize: non-finite entry");
  }
  BinarySequence s;
  s.threshold = median(x);
  s.bits.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.bits[i] = x[i] > s.threshold ? 1 : 0;
  }
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  s.degenerate = *lo == *hi;
  return s;
}

BinarySequence binarize(const fracnet::CouplingTrajectory& traj) {
  const Eigen::MatrixXd m = traj.valid_matrices();
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  }
  return binarize(flat);
}

ComplexityResult lz76(std::span<const std::uint8_t> s) {
  const std::size_t n = s.size();
  if (n < 1) throw DataError("lz76 of an empty sequence");
  ComplexityResult r;
  r.n = n;
  if (n == 1) {
    r.c = 1;
  } else {
    std::size_t c = 1, l = 1, i = 0, k = 1, kmax = 1;
    while (true) {
      if (s[i + k - 1] == s[l + k - 1]) {
        ++k;
        if (l + k > n) {
          ++c;
          break;
        }
      } else {
        kmax = std::max(k, kmax);
        ++i;
        if (i == l) {
          ++c;
          l += kmax;
          if (l + 1 > n) break;
          i = 0;
          k = 1;
          kmax = 1;
        } else {
          k = 1;
        }
      }
    }
    r.c = c;
  }
  const auto nd = static_cast<double>(n);
  r.ci = n > 1 ? static_cast<double>(r.c) * std::log2(nd) / nd : static_cast<double>(r.c);
  return r;
}

ComplexityResult trajectory_complexity(const fracnet::CouplingTrajectory& traj) { return lz76(binarize(traj)); }

namespace {

double sample_sd(std::span<const double> x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1)) : 0.0;
}

double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

Density kde(std::span<const double> x, std::size_t points) {
  if (x.empty()) throw DataError("kde of an empty sample");
  Density d;
  const std::vector<double> v(x.begin(), x.end());
  const double sd = sample_sd(x);
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  if (!(spread > 0.0)) spread = std::max(1e-6, 1e-3 * std::abs(v.front()));
  d.bandwidth = 0.9 * spread * std::pow(static_cast<double>(x.size()), -0.2);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo - 3.0 * d.bandwidth;
  const double b = *hi + 3.0 * d.bandwidth;
  points = std::max<std::size_t>(points, 2);
  const double norm = 1.0 / (static_cast<double>(x.size()) * d.bandwidth * std::sqrt(2.0 * M_PI));
  for (std::size_t i = 0; i < points; ++i) {
    const double g = a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1);
    double acc = 0.0;
    for (double s : v) {
      const double z = (g - s) / d.bandwidth;
      acc += std::exp(-0.5 * z * z);
    }
    d.grid.push_back(g);
    d.values.push_back(acc * norm);
  }
  return d;
}

GroupReport group_compare(const std::map<int, std::vector<double>>& by_level) {
  if (by_level.size() < 2) throw DataError("group comparison needs at least two groups");
  struct Item {
    double v;
    int g;
  };
  std::vector<Item> all;
  GroupReport rep;
  for (const auto& [level, vals] : by_level) {
    if (vals.size() < 2) throw DataError("group " + std::to_string(level) + " has fewer than two samples");
    for (double v : vals) {
      if (!std::isfinite(v)) throw DataError("non-finite value in group " + std::to_string(level));
      all.push_back({v, level});
    }
    rep.means[level] = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    rep.counts[level] = vals.size();
    rep.densities[level] = kde(vals);
  }
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });
  if (all.front().v == all.back().v) throw DataError("all values identical across groups");

  const auto N = static_cast<double>(all.size());
  std::map<int, double> rank_sum;
  double tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t) rank_sum[all[t].g] += avg;
    const auto t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  double h = 0.0;
  for (const auto& [level, r] : rank_sum) h += r * r / static_cast<double>(rep.counts[level]);
  h = 12.0 / (N * (N + 1.0)) * h - 3.0 * (N + 1.0);
  h /= 1.0 - tie_term / (N * N * N - N);
  rep.h = std::max(h, 0.0);
  rep.dof = by_level.size() - 1;
  rep.p_value = boost::math::gamma_q(0.5 * static_cast<double>(rep.dof), 0.5 * rep.h);
  return rep;
}

void write_complexity_csv(const std::filesystem::path& path, const std::vector<TrajectoryComplexity>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "trial_id,label,c,ci,n,degenerate\n";
  for (const auto& r : rows) {
    out << r.trial_id << ',' << r.fatigue_level << ',' << r.result.c << ',' << ingest::format_double(r.result.ci)
        << ',' << r.result.n << ',' << (r.degenerate ? 1 : 0) << '\n';
  }
}

}  // namespace fdnml::complexity
