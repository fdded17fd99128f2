#include "fdnml/multifractal.hpp"

#include "fdnml/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace fdnml::mf {

namespace {

constexpr double kLn2 = 0.69314718055994530942;

std::vector<double> highpass_from(const std::vector<double>& h) {
  const std::size_t len = h.size();
  std::vector<double> g(len);
  for (std::size_t m = 0; m < len; ++m) g[m] = ((m % 2) ? -1.0 : 1.0) * h[len - 1 - m];
  return g;
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (sorted.size() == 1) return sorted.front();
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval percentile_interval(std::vector<double> samples, double level) {
  std::sort(samples.begin(), samples.end());
  const double tail = 0.5 * (1.0 - level);
  return {quantile_sorted(samples, tail), quantile_sorted(samples, 1.0 - tail)};
}

// log2 of (1/n) sum L^q. Large |q| goes through log-sum-exp.
double log2_moment(std::span<const double> values, double q) {
  if (q == 0.0) return 0.0;
  const auto n = static_cast<double>(values.size());
  double out = 0.0;
  if (std::abs(q) <= 3.0) {
    double s = 0.0;
    for (double v : values) s += std::pow(v, q);
    out = std::log2(s / n);
  } else {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : values) m = std::max(m, q * std::log(v));
    double s = 0.0;
    for (double v : values) s += std::exp(q * std::log(v) - m);
    out = (m + std::log(s) - std::log(n)) / kLn2;
  }
  if (!std::isfinite(out)) {
    throw NumericError("structure function overflow at q=" + std::to_string(q));
  }
  return out;
}

std::array<double, 3> log_moment_cumulants(std::span<const double> values) {
  const auto n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += std::log(v);
  mean /= n;
  double m2 = 0.0;
  double m3 = 0.0;
  for (double v : values) {
    const double d = std::log(v) - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  return {mean, m2 / n, m3 / n};
}

// Statistics computed from per-scale leader samples over [j1, j2].
struct ScaleStats {
  std::vector<double> zeta;
  double c1{0.0}, c2{0.0}, c3{0.0};
};

ScaleStats stats_over(const std::vector<std::span<const double>>& per_scale, int j1, int j2, const QGrid& qs,
                      bool weighted, bool with_zeta) {
  const std::size_t ns = static_cast<std::size_t>(j2 - j1 + 1);
  std::vector<double> x(ns), w(ns), xl(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    x[s] = static_cast<double>(j1 + static_cast<int>(s));
    xl[s] = x[s] * kLn2;
    w[s] = weighted ? static_cast<double>(per_scale[s].size()) : 1.0;
  }
  ScaleStats out;
  std::vector<double> y(ns);
  if (with_zeta) {
    out.zeta.resize(qs.size());
    for (std::size_t iq = 0; iq < qs.size(); ++iq) {
      for (std::size_t s = 0; s < ns; ++s) y[s] = log2_moment(per_scale[s], qs.q[iq]);
      out.zeta[iq] = weighted_line(x, y, w).slope;
    }
  }
  std::vector<double> y1(ns), y2(ns), y3(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    const auto c = log_moment_cumulants(per_scale[s]);
    y1[s] = c[0];
    y2[s] = c[1];
    y3[s] = c[2];
  }
  out.c1 = weighted_line(xl, y1, w).slope;
  out.c2 = weighted_line(xl, y2, w).slope;
  out.c3 = weighted_line(xl, y3, w).slope;
  return out;
}

constexpr int kAutoFinestScale = 4;

void check_range(int j1, int j2, int max_scale) {
  if (j1 < 1 || j2 > max_scale || j2 - j1 < 3) {
    std::ostringstream os;
    os << "scale range [" << j1 << ", " << j2 << "] invalid: need 1 <= j1, j2 <= " << max_scale
       << " and at least 4 scales";
    throw DataError(os.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Wavelet make_wavelet(WaveletFamily family) {
  Wavelet w;
  w.family = family;
  const double s2 = std::sqrt(2.0);
  switch (family) {
    case WaveletFamily::haar:
      w.name = "haar";
      w.vanishing_moments = 1;
      w.lowpass = {1.0 / s2, 1.0 / s2};
      break;
    case WaveletFamily::db2: {
      w.name = "db2";
      w.vanishing_moments = 2;
      const double s3 = std::sqrt(3.0);
      const double d = 4.0 * s2;
      w.lowpass = {(1 + s3) / d, (3 + s3) / d, (3 - s3) / d, (1 - s3) / d};
      break;
    }
    case WaveletFamily::db3: {
      w.name = "db3";
      w.vanishing_moments = 3;
      const double r = std::sqrt(10.0);
      const double t = std::sqrt(5.0 + 2.0 * r);
      const double d = 16.0 * s2;
      w.lowpass = {(1 + r + t) / d,         (5 + r + 3 * t) / d,     (10 - 2 * r + 2 * t) / d,
                   (10 - 2 * r - 2 * t) / d, (5 + r - 3 * t) / d,     (1 + r - t) / d};
      break;
    }
    case WaveletFamily::db4:
      w.name = "db4";
      w.vanishing_moments = 4;
      w.lowpass = {0.23037781330885523, 0.7148465705525415, 0.6308807679295904, -0.02798376941698385,
                   -0.18703481171888114, 0.030841381835986965, 0.032883011666982945, -0.010597401784997278};
      break;
  }
  w.highpass = highpass_from(w.lowpass);
  return w;
}

WaveletFamily parse_family(const std::string& name) {
  if (name == "haar" || name == "db1") return WaveletFamily::haar;
  if (name == "db2") return WaveletFamily::db2;
  if (name == "db3") return WaveletFamily::db3;
  if (name == "db4") return WaveletFamily::db4;
  throw ConfigError("unknown wavelet family '" + name + "'");
}

std::string family_name(WaveletFamily family) { return make_wavelet(family).name; }

WaveletDecomposition dwt(std::span<const double> signal, WaveletFamily family, int max_scale, Normalization norm) {
  const Wavelet wav = make_wavelet(family);
  const std::size_t n = signal.size();
  if (n < 4) throw DataError("signal too short for a wavelet transform");
  if (max_scale > 0 && (max_scale >= 63 || n < (std::size_t{1} << max_scale))) {
    throw DataError("signal of length " + std::to_string(n) + " too short for " + std::to_string(max_scale) + " scales");
  }

  WaveletDecomposition dec;
  dec.family = family;
  dec.normalization = norm;

  std::vector<double> approx(signal.begin(), signal.end());
  std::vector<std::uint8_t> approx_flag(n, 0);
  const std::size_t len = wav.lowpass.size();
  double max_abs = 0.0;
  for (double v : signal) max_abs = std::max(max_abs, std::abs(v));
  double max_interior = 0.0;

  for (int j = 1;; ++j) {
    if (max_scale > 0 && j > max_scale) break;
    const std::size_t prev = approx.size();
    const std::size_t nj = prev / 2;
    if (nj < 2 && max_scale <= 0) break;
    std::vector<double> a(nj), d(nj);
    std::vector<std::uint8_t> flag(nj, 0);
    for (std::size_t k = 0; k < nj; ++k) {
      double sa = 0.0;
      double sd = 0.0;
      bool f = false;
      for (std::size_t m = 0; m < len; ++m) {
        std::size_t idx = 2 * k + m;
        if (idx >= prev) {
          idx %= prev;
          f = true;
        }
        f = f || approx_flag[idx];
        sa += wav.lowpass[m] * approx[idx];
        sd += wav.highpass[m] * approx[idx];
      }
      a[k] = sa;
      d[k] = sd;
      flag[k] = f ? 1 : 0;
    }
    if (norm == Normalization::l1) {
      const double scale = std::exp2(-0.5 * j);
      for (auto& v : d) v *= scale;
    }
    for (std::size_t k = 0; k < nj; ++k) {
      if (!flag[k]) max_interior = std::max(max_interior, std::abs(d[k]));
    }
    dec.details.push_back(std::move(d));
    dec.boundary.push_back(flag);
    approx = std::move(a);
    approx_flag = std::move(flag);
  }
  dec.degenerate = max_interior <= 1e-11 * std::max(max_abs, std::numeric_limits<double>::min());
  return dec;
}

LeaderField leaders(const WaveletDecomposition& dec) {
  if (dec.degenerate) throw DataError("degenerate signal: all interior wavelet details vanish");
  LeaderField lf;
  std::vector<double> prev_sup;
  std::vector<LeaderScale> all;
  for (int j = 1; j <= dec.max_scale(); ++j) {
    const auto& d = dec.at(j);
    const auto& flag = dec.boundary[static_cast<std::size_t>(j - 1)];
    const std::size_t nj = d.size();
    // sup over the dyadic interval itself and all of its descendants.
    std::vector<double> sup(nj, 0.0);
    for (std::size_t k = 0; k < nj; ++k) {
      double v = flag[k] ? 0.0 : std::abs(d[k]);
      if (!prev_sup.empty()) {
        v = std::max({v, prev_sup[2 * k], prev_sup[2 * k + 1]});
      }
      sup[k] = v;
    }
    LeaderScale ls;
    for (std::size_t k = 1; k + 1 < nj; ++k) {
      if (flag[k - 1] || flag[k] || flag[k + 1]) continue;
      ls.values.push_back(std::max({sup[k - 1], sup[k], sup[k + 1]}));
      ls.positions.push_back(k);
    }
    all.push_back(std::move(ls));
    prev_sup = std::move(sup);
  }

  for (auto& ls : all) {
    if (ls.values.size() < 4) break;
    lf.scales.push_back(std::move(ls));
  }
  if (lf.scales.empty()) throw DataError("fewer than 4 leaders at the finest scale");

  for (std::size_t s = 0; s < lf.scales.size(); ++s) {
    auto& vals = lf.scales[s].values;
    double min_pos = std::numeric_limits<double>::infinity();
    for (double v : vals) {
      if (v > 0.0) min_pos = std::min(min_pos, v);
    }
    if (!std::isfinite(min_pos)) throw DataError("all leaders vanish at scale " + std::to_string(s + 1));
    for (auto& v : vals) {
      if (v <= 0.0) {
        v = min_pos * 1e-3;
        ++lf.zeros_replaced;
      }
    }
  }
  return lf;
}

// ---------------------------------------------------------------------------

QGrid QGrid::standard() { return range(-5.0, 5.0, 0.5); }

QGrid QGrid::range(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw ConfigError("invalid q range");
  QGrid g;
  const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step));
  for (std::size_t i = 0; i <= n; ++i) {
    double v = lo + step * static_cast<double>(i);
    if (std::abs(v) < 1e-12) v = 0.0;
    g.q.push_back(v);
  }
  return g;
}

void QGrid::validate() const {
  if (q.empty()) throw ConfigError("empty q grid");
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!std::isfinite(q[i])) throw ConfigError("non-finite q");
    if (i > 0 && !(q[i] > q[i - 1])) throw ConfigError("q grid must be strictly increasing");
  }
}

double StructureFunctions::value(int j, std::size_t iq) const {
  return std::exp2(log2_s.at(static_cast<std::size_t>(j - 1)).at(iq));
}

StructureFunctions structure_functions(const LeaderField& lf, const QGrid& qs) {
  qs.validate();
  StructureFunctions s;
  s.q = qs.q;
  for (int j = 1; j <= lf.max_scale(); ++j) {
    const auto& vals = lf.at(j).values;
    for (double v : vals) {
      if (!(v > 0.0)) throw DataError("structure functions need strictly positive leaders");
    }
    s.counts.push_back(vals.size());
    std::vector<double> row(qs.size());
    for (std::size_t iq = 0; iq < qs.size(); ++iq) row[iq] = log2_moment(vals, qs.q[iq]);
    s.log2_s.push_back(std::move(row));
  }
  return s;
}

LinearFit weighted_line(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
  if (x.size() != y.size() || x.size() != w.size() || x.size() < 2) throw NumericError("regression needs >= 2 points");
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  const double xm = sx / sw;
  const double ym = sy / sw;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - xm;
    const double dy = y[i] - ym;
    sxx += w[i] * dx * dx;
    sxy += w[i] * dx * dy;
    syy += w[i] * dy * dy;
  }
  if (!(sxx > 0.0)) throw NumericError("degenerate regression: all abscissae identical");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = ym - fit.slope * xm;
  if (syy > 0.0) {
    double ssr = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - (fit.intercept + fit.slope * x[i]);
      ssr += w[i] * r * r;
    }
    fit.r2 = 1.0 - ssr / syy;
  } else {
    fit.r2 = 1.0;
  }
  return fit;
}

ScalingFit scaling_exponents(const StructureFunctions& s, int j1, int j2, bool weighted) {
  check_range(j1, j2, s.max_scale());
  const std::size_t ns = static_cast<std::size_t>(j2 - j1 + 1);
  std::vector<double> x(ns), y(ns), w(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    const auto j = static_cast<std::size_t>(j1) + i;
    x[i] = static_cast<double>(j);
    w[i] = weighted ? static_cast<double>(s.counts[j - 1]) : 1.0;
  }
  ScalingFit fit;
  fit.j1 = j1;
  fit.j2 = j2;
  for (std::size_t iq = 0; iq < s.q.size(); ++iq) {
    for (std::size_t i = 0; i < ns; ++i) y[i] = s.log2_s[static_cast<std::size_t>(j1) + i - 1][iq];
    const LinearFit lf = weighted_line(x, y, w);
    fit.zeta.push_back(lf.slope);
    fit.r2.push_back(lf.r2);
  }
  return fit;
}

std::vector<double> gradient(std::span<const double> y, std::span<const double> x) {
  const std::size_t n = y.size();
  if (n != x.size() || n < 2) throw NumericError("gradient needs >= 2 matching points");
  std::vector<double> g(n);
  if (n == 2) {
    g[0] = g[1] = (y[1] - y[0]) / (x[1] - x[0]);
    return g;
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double hs = x[i] - x[i - 1];
    const double hd = x[i + 1] - x[i];
    g[i] = (hs * hs * y[i + 1] + (hd * hd - hs * hs) * y[i] - hd * hd * y[i - 1]) / (hs * hd * (hd + hs));
  }
  {
    const double h1 = x[1] - x[0];
    const double h2 = x[2] - x[1];
    const double a = -(2.0 * h1 + h2) / (h1 * (h1 + h2));
    const double b = (h1 + h2) / (h1 * h2);
    const double c = -h1 / (h2 * (h1 + h2));
    g[0] = a * y[0] + b * y[1] + c * y[2];
  }
  {
    const double h1 = x[n - 2] - x[n - 3];
    const double h2 = x[n - 1] - x[n - 2];
    const double a = h2 / (h1 * (h1 + h2));
    const double b = -(h2 + h1) / (h1 * h2);
    const double c = (2.0 * h2 + h1) / (h2 * (h1 + h2));
    g[n - 1] = a * y[n - 3] + b * y[n - 2] + c * y[n - 1];
  }
  return g;
}

double Spectrum::width() const {
  if (h.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
  return *hi - *lo;
}

Spectrum legendre_spectrum(std::span<const double> zeta, const QGrid& qs) {
  qs.validate();
  if (zeta.size() != qs.size()) throw DataError("zeta must be defined on the full q grid");
  const auto h = gradient(zeta, qs.q);
  struct Point {
    double h, d, q;
  };
  std::vector<Point> pts;
  Spectrum sp;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    double d = 1.0 + qs.q[i] * h[i] - zeta[i];
    sp.max_violation = std::max(sp.max_violation, d - 1.0);
    if (d > 1.0) {
      d = 1.0;
      ++sp.clipped;
    }
    pts.push_back({h[i], d, qs.q[i]});
  }
  std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.h < b.h; });
  for (const auto& p : pts) {
    sp.h.push_back(p.h);
    sp.d.push_back(p.d);
    sp.q.push_back(p.q);
  }
  return sp;
}

DqConvention parse_dq_convention(const std::string& name) {
  if (name == "partition") return DqConvention::partition;
  if (name == "hurst") return DqConvention::hurst;
  throw ConfigError("unknown D_q convention '" + name + "'");
}

GeneralizedDimensions generalized_dimensions(std::span<const double> zeta, const QGrid& qs, DqConvention convention) {
  qs.validate();
  if (qs.size() < 2) throw DataError("D_q needs at least two q values");
  if (zeta.size() != qs.size()) throw DataError("zeta must be defined on the full q grid");
  GeneralizedDimensions out;
  out.q = qs.q;
  out.dq.resize(qs.size());
  std::vector<double> deriv;
  auto derivative_at = [&](std::size_t i) {
    if (qs.size() < 3) throw NumericError("D_q limit needs at least three q values around the singular point");
    if (deriv.empty()) deriv = gradient(zeta, qs.q);
    if (!std::isfinite(deriv[i])) throw NumericError("unstable derivative in D_q limit");
    return deriv[i];
  };
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const double q = qs.q[i];
    if (convention == DqConvention::partition) {
      out.dq[i] = std::abs(q - 1.0) < 1e-12 ? derivative_at(i) : (zeta[i] - 1.0) / (q - 1.0);
    } else {
      out.dq[i] = std::abs(q) < 1e-12 ? derivative_at(i) : zeta[i] / q;
    }
  }
  out.delta_dq = out.dq.back() - out.dq.front();
  return out;
}

LogCumulants log_cumulants(const LeaderField& lf, int j1, int j2, bool weighted) {
  check_range(j1, j2, lf.max_scale());
  std::vector<std::span<const double>> per_scale;
  LogCumulants out;
  for (int j = 1; j <= lf.max_scale(); ++j) {
    for (double v : lf.at(j).values) {
      if (!(v > 0.0)) throw DataError("log-cumulants need strictly positive leaders");
    }
    const auto c = log_moment_cumulants(lf.at(j).values);
    out.per_scale.push_back({c[0], c[1], c[2]});
    if (j >= j1 && j <= j2) per_scale.emplace_back(lf.at(j).values);
  }
  const ScaleStats st = stats_over(per_scale, j1, j2, QGrid{}, weighted, false);
  out.c1 = st.c1;
  out.c2 = st.c2;
  out.c3 = st.c3;
  return out;
}

// ---------------------------------------------------------------------------

BootstrapResult bootstrap(const LeaderField& lf, const QGrid& qs, int j1, int j2, const BootstrapOptions& opts,
                          DqConvention convention, bool weighted) {
  check_range(j1, j2, lf.max_scale());
  if (opts.resamples < 1) throw ConfigError("bootstrap needs at least one resample");
  if (!(opts.level > 0.0 && opts.level < 1.0)) throw ConfigError("bootstrap level must lie in (0, 1)");

  const std::size_t ns = static_cast<std::size_t>(j2 - j1 + 1);
  const std::size_t R = opts.resamples;
  std::vector<double> c1(R), c2(R), c3(R), width(R);
  std::vector<std::vector<double>> zeta(R), dq(R);

  std::vector<std::span<const double>> original;
  for (int j = j1; j <= j2; ++j) original.emplace_back(lf.at(j).values);
  const ScaleStats point = stats_over(original, j1, j2, qs, weighted, false);

  parallel_for(R, [&](std::size_t r) {
    std::mt19937_64 rng(derive_seed(opts.seed, r));
    std::vector<std::vector<double>> resampled(ns);
    std::vector<std::span<const double>> views(ns);
    for (std::size_t s = 0; s < ns; ++s) {
      const auto& src = original[s];
      const std::size_t n = src.size();
      const auto block = static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(n))));
      std::uniform_int_distribution<std::size_t> start(0, n - 1);
      auto& dst = resampled[s];
      dst.reserve(n + block);
      while (dst.size() < n) {
        const std::size_t b0 = start(rng);
        for (std::size_t i = 0; i < block && dst.size() < n; ++i) dst.push_back(src[(b0 + i) % n]);
      }
      views[s] = dst;
    }
    const ScaleStats st = stats_over(views, j1, j2, qs, weighted, opts.include_curves);
    c1[r] = st.c1;
    c2[r] = st.c2;
    c3[r] = st.c3;
    if (opts.include_curves) {
      dq[r] = generalized_dimensions(st.zeta, qs, convention).dq;
      width[r] = legendre_spectrum(st.zeta, qs).width();
      zeta[r] = st.zeta;
    }
  });

  BootstrapResult out;
  out.resamples = R;
  out.c1 = percentile_interval(c1, opts.level);
  out.c2 = percentile_interval(c2, opts.level);
  out.c3 = percentile_interval(c3, opts.level);
  if (opts.include_curves) {
    out.width = percentile_interval(width, opts.level);
    for (std::size_t iq = 0; iq < qs.size(); ++iq) {
      std::vector<double> zs(R), ds(R);
      for (std::size_t r = 0; r < R; ++r) {
        zs[r] = zeta[r][iq];
        ds[r] = dq[r][iq];
      }
      out.zeta.push_back(percentile_interval(zs, opts.level));
      out.dq.push_back(percentile_interval(ds, opts.level));
    }
  }
  // Null-centred two-sided test: how often does the bootstrap deviation reach
  // the observed distance from zero.
  std::size_t extreme = 0;
  for (double v : c2) {
    if (std::abs(v - point.c2) >= std::abs(point.c2)) ++extreme;
  }
  out.c2_p_value = static_cast<double>(extreme + 1) / static_cast<double>(R + 1);
  out.c2_samples = std::move(c2);
  return out;
}

Interval bootstrap_ci(const LeaderField& lf, const std::string& statistic, const QGrid& qs, int j1, int j2,
                      const BootstrapOptions& opts) {
  auto find_q = [&](const std::string& text) {
    double q = 0.0;
    try {
      q = std::stod(text);
    } catch (const std::exception&) {
      throw ConfigError("bad moment in statistic '" + statistic + "'");
    }
    for (std::size_t i = 0; i < qs.size(); ++i) {
      if (std::abs(qs.q[i] - q) < 1e-12) return i;
    }
    throw ConfigError("q=" + text + " not on the grid");
  };
  BootstrapOptions o = opts;
  if (statistic == "c1" || statistic == "c2" || statistic == "c3") {
    o.include_curves = false;
    const auto r = bootstrap(lf, qs, j1, j2, o);
    return statistic == "c1" ? r.c1 : statistic == "c2" ? r.c2 : r.c3;
  }
  o.include_curves = true;
  if (statistic == "width") return bootstrap(lf, qs, j1, j2, o).width;
  if (statistic.rfind("zeta:", 0) == 0) {
    const auto i = find_q(statistic.substr(5));
    return bootstrap(lf, qs, j1, j2, o).zeta[i];
  }
  if (statistic.rfind("dq:", 0) == 0) {
    const auto i = find_q(statistic.substr(3));
    return bootstrap(lf, qs, j1, j2, o).dq[i];
  }
  throw ConfigError("unknown bootstrap statistic '" + statistic + "'");
}

// ---------------------------------------------------------------------------

std::pair<int, int> resolve_scale_range(int j1, int j2, int max_scale) {
  const int hi = j2 <= 0 ? max_scale + j2 : j2;
  // Leaders at scales 1..3 have not reached their asymptotic log-variance, so
  // the automatic lower bound starts at 4 unless that leaves fewer than four scales.
  const int lo = j1 > 0 ? j1 : std::max(1, std::min(kAutoFinestScale, hi - 3));
  check_range(lo, hi, max_scale);
  return {lo, hi};
}

MultifractalSummary analyze(std::span<const double> signal, const MfaOptions& opts) {
  opts.qs.validate();
  const Wavelet wav = make_wavelet(opts.family);
  if (wav.vanishing_moments < 2) throw ConfigError("leader analysis needs a wavelet with >= 2 vanishing moments");
  for (double v : signal) {
    if (!std::isfinite(v)) throw DataError("signal contains non-finite samples");
  }
  const WaveletDecomposition dec = dwt(signal, opts.family, 0, Normalization::l1);
  const LeaderField lf = leaders(dec);
  const auto [j1, j2] = resolve_scale_range(opts.j1, opts.j2, lf.max_scale());

  MultifractalSummary out;
  out.q = opts.qs.q;
  out.j1 = j1;
  out.j2 = j2;
  out.max_scale = lf.max_scale();
  out.zeros_replaced = lf.zeros_replaced;
  if (lf.zeros_replaced > 0) {
    out.warnings.push_back(std::to_string(lf.zeros_replaced) + " zero leaders replaced");
  }

  const StructureFunctions sf = structure_functions(lf, opts.qs);
  const ScalingFit fit = scaling_exponents(sf, j1, j2, opts.weighted);
  out.zeta = fit.zeta;
  out.zeta_r2 = fit.r2;
  for (std::size_t i = 0; i < fit.r2.size(); ++i) {
    if (opts.qs.q[i] != 0.0 && fit.r2[i] < 0.95) {
      std::ostringstream os;
      os << "low regression R^2 " << fit.r2[i] << " at q=" << opts.qs.q[i];
      out.warnings.push_back(os.str());
    }
  }
  out.spectrum = legendre_spectrum(out.zeta, opts.qs);
  if (out.spectrum.max_violation > 1e-8) {
    out.warnings.push_back("D(h) exceeded 1 by " + std::to_string(out.spectrum.max_violation) + "; clipped");
  }
  out.dq = generalized_dimensions(out.zeta, opts.qs, opts.convention);
  out.cumulants = log_cumulants(lf, j1, j2, opts.weighted);

  if (opts.bootstrap_resamples > 0) {
    BootstrapOptions bo;
    bo.resamples = opts.bootstrap_resamples;
    bo.level = opts.bootstrap_level;
    bo.seed = opts.seed;
    out.bootstrap = bootstrap(lf, opts.qs, j1, j2, bo, opts.convention, opts.weighted);
  }
  return out;
}

}  // namespace fdnml::mf
