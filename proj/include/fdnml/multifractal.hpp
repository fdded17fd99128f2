#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fdnml::mf {

// ---------------------------------------------------------------------------
// Discrete wavelet transform
// ---------------------------------------------------------------------------

enum class WaveletFamily { haar, db2, db3, db4 };

struct Wavelet {
  WaveletFamily family{WaveletFamily::db3};
  std::string name;
  int vanishing_moments{0};
  std::vector<double> lowpass;   // orthonormal scaling filter, sum = sqrt(2)
  std::vector<double> highpass;  // g[m] = (-1)^m h[L-1-m]
};

Wavelet make_wavelet(WaveletFamily family);
WaveletFamily parse_family(const std::string& name);
std::string family_name(WaveletFamily family);

enum class Normalization { l1, l2 };

// Periodized Mallat pyramid. Scale j = 1 is the finest. Coefficients whose
// support wraps around the signal edge (directly, or through a contaminated
// approximation) are flagged in `boundary` and excluded downstream.
struct WaveletDecomposition {
  std::vector<std::vector<double>> details;     // details[j-1][k]
  std::vector<std::vector<std::uint8_t>> boundary;
  WaveletFamily family{WaveletFamily::db3};
  Normalization normalization{Normalization::l1};
  bool degenerate{false};  // all interior details numerically zero

  int max_scale() const { return static_cast<int>(details.size()); }
  std::size_t count(int j) const { return details.at(static_cast<std::size_t>(j - 1)).size(); }
  const std::vector<double>& at(int j) const { return details.at(static_cast<std::size_t>(j - 1)); }
};

// max_scale <= 0 selects the deepest scale with at least two coefficients.
// L1 normalization multiplies the orthonormal (L2) coefficients by 2^{-j/2}.
WaveletDecomposition dwt(std::span<const double> signal, WaveletFamily family, int max_scale = 0,
                         Normalization norm = Normalization::l1);

// ---------------------------------------------------------------------------
// Wavelet leaders
// ---------------------------------------------------------------------------

struct LeaderScale {
  std::vector<double> values;         // L(j,k) for retained k
  std::vector<std::size_t> positions; // k of each retained leader
};

struct LeaderField {
  std::vector<LeaderScale> scales;  // scales[j-1]
  std::size_t zeros_replaced{0};

  int max_scale() const { return static_cast<int>(scales.size()); }
  const LeaderScale& at(int j) const { return scales.at(static_cast<std::size_t>(j - 1)); }
};

// L(j,k) = sup |d(j',k')| over j' <= j and dyadic intervals inside
// 3*lambda(j,k). A leader is kept only when d(j,k-1), d(j,k), d(j,k+1) all
// exist and are interior. Scales are retained up to the coarsest one that
// still has at least 4 leaders.
LeaderField leaders(const WaveletDecomposition& dec);

// ---------------------------------------------------------------------------
// Scaling analysis
// ---------------------------------------------------------------------------

// Strictly increasing list of moments.
struct QGrid {
  std::vector<double> q;

  static QGrid standard();                      // -5 ... 5 step 0.5
  static QGrid range(double lo, double hi, double step);
  void validate() const;
  std::size_t size() const { return q.size(); }
};

struct StructureFunctions {
  std::vector<double> q;
  std::vector<std::size_t> counts;              // n_j per scale
  std::vector<std::vector<double>> log2_s;      // log2_s[j-1][iq]

  int max_scale() const { return static_cast<int>(counts.size()); }
  double value(int j, std::size_t iq) const;    // S_L(j, q)
};

StructureFunctions structure_functions(const LeaderField& lf, const QGrid& qs);

struct LinearFit {
  double slope{0.0};
  double intercept{0.0};
  double r2{0.0};
};

// Weighted least-squares line. Throws NumericError when all x coincide.
LinearFit weighted_line(std::span<const double> x, std::span<const double> y, std::span<const double> w);

struct ScalingFit {
  std::vector<double> zeta;
  std::vector<double> r2;
  int j1{0};
  int j2{0};
};

ScalingFit scaling_exponents(const StructureFunctions& s, int j1, int j2, bool weighted = true);

struct Spectrum {
  std::vector<double> h;
  std::vector<double> d;
  std::vector<double> q;           // moment that produced each point
  std::size_t clipped{0};          // points with D(h) > 1 set back to 1
  double max_violation{0.0};       // largest pre-clip D(h) - 1

  double width() const;
};

// Numerical derivative on a (possibly non-uniform) grid, second order
// everywhere including the end points.
std::vector<double> gradient(std::span<const double> y, std::span<const double> x);

Spectrum legendre_spectrum(std::span<const double> zeta, const QGrid& qs);

enum class DqConvention {
  partition,       // tau(q) = zeta(q) - 1, D_q = tau(q) / (q - 1), D_1 = tau'(1)
  hurst,           // D_q = zeta(q) / q, D_0 = zeta'(0)
};

DqConvention parse_dq_convention(const std::string& name);

struct GeneralizedDimensions {
  std::vector<double> q;
  std::vector<double> dq;
  double delta_dq{0.0};  // D(q_max) - D(q_min)
};

GeneralizedDimensions generalized_dimensions(std::span<const double> zeta, const QGrid& qs,
                                             DqConvention convention = DqConvention::partition);

struct LogCumulants {
  double c1{0.0};
  double c2{0.0};
  double c3{0.0};
  std::vector<std::vector<double>> per_scale;  // [j-1] -> {C1(j), C2(j), C3(j)}
};

LogCumulants log_cumulants(const LeaderField& lf, int j1, int j2, bool weighted = true);

// ---------------------------------------------------------------------------
// Block bootstrap
// ---------------------------------------------------------------------------

struct Interval {
  double low{0.0};
  double high{0.0};
  bool contains(double v) const { return low <= v && v <= high; }
};

struct BootstrapOptions {
  std::size_t resamples{200};
  double level{0.95};
  std::uint64_t seed{0};
  bool include_curves{true};  // zeta(q), D_q and spectrum width
};

struct BootstrapResult {
  Interval c1, c2, c3;
  std::vector<Interval> zeta;
  std::vector<Interval> dq;
  Interval width;
  double c2_p_value{1.0};  // H0: c2 = 0
  std::size_t resamples{0};
  std::vector<double> c2_samples;
};

// Circular block bootstrap of leader positions at every scale, block length
// ceil(n_j^{1/3}); each resample recomputes the statistics over [j1, j2].
BootstrapResult bootstrap(const LeaderField& lf, const QGrid& qs, int j1, int j2, const BootstrapOptions& opts,
                          DqConvention convention = DqConvention::partition, bool weighted = true);

// Single-statistic view: "c1", "c2", "c3", "width", "zeta:<q>", "dq:<q>".
Interval bootstrap_ci(const LeaderField& lf, const std::string& statistic, const QGrid& qs, int j1, int j2,
                      const BootstrapOptions& opts);

// ---------------------------------------------------------------------------
// Full per-signal analysis
// ---------------------------------------------------------------------------

struct MfaOptions {
  WaveletFamily family{WaveletFamily::db3};
  QGrid qs{QGrid::standard()};
  int j1{0};   // <= 0 selects min(4, j2 - 3), floored at 1
  int j2{-2};  // values <= 0 are offsets from the coarsest retained scale
  bool weighted{true};
  DqConvention convention{DqConvention::partition};
  std::size_t bootstrap_resamples{0};  // 0 disables the bootstrap
  double bootstrap_level{0.95};
  std::uint64_t seed{0};
};

struct MultifractalSummary {
  std::vector<double> q;
  std::vector<double> zeta;
  std::vector<double> zeta_r2;
  Spectrum spectrum;
  GeneralizedDimensions dq;
  LogCumulants cumulants;
  int j1{0};
  int j2{0};
  int max_scale{0};
  std::size_t zeros_replaced{0};
  std::vector<std::string> warnings;
  std::optional<BootstrapResult> bootstrap;
};

// Resolves (j1, j2) against the coarsest retained scale and checks that at
// least four scales enter the regression. j1 <= 0 selects min(4, j2 - 3),
// floored at 1.
std::pair<int, int> resolve_scale_range(int j1, int j2, int max_scale);

MultifractalSummary analyze(std::span<const double> signal, const MfaOptions& opts);

}  // namespace fdnml::mf
