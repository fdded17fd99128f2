#pragma once

#include "fdnml/fracnet.hpp"
#include "fdnml/multifractal.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fdnml::distance {

// W1 between two empirical distributions, the integral of |F_a - F_b| over
// the merged sample points. Unequal sizes are fine.
double wasserstein1(std::span<const double> a, std::span<const double> b);

enum class Reduction {
  curve,   // W1 per q-point, averaged over the grid
  scalar,  // W1 at a single q
};

Reduction parse_reduction(const std::string& name);
std::string reduction_name(Reduction r);

// Per-level samples of D_q curves: curves[level][sample][iq].
using CurveSamples = std::map<int, std::vector<std::vector<double>>>;

struct DistanceTable {
  std::vector<int> levels;
  Eigen::MatrixXd w;  // symmetric, zero diagonal, indexed like `levels`
  Reduction reduction{Reduction::curve};
  double scalar_q{2.0};

  double at(int a, int b) const;
};

DistanceTable pairwise_level_distances(const std::map<int, std::vector<double>>& samples);
DistanceTable pairwise_level_distances(const CurveSamples& curves, std::span<const double> q,
                                       Reduction reduction = Reduction::curve, double scalar_q = 2.0);

// ---------------------------------------------------------------------------
// Per-window feature vectors
// ---------------------------------------------------------------------------

inline constexpr int kFeatureLayoutVersion = 1;

struct FeatureLayout {
  int version{kFeatureLayoutVersion};
  std::vector<double> feature_q{-4.0, -2.0, 2.0, 4.0};
  std::vector<std::string> channels;

  // Per channel: dq@q..., c1, c2, c3, delta_dq; then a_r_c (row-major),
  // alpha per channel, window LZC.
  std::vector<std::string> names() const;
  std::size_t length() const;
};

struct ChannelDescriptor {
  std::vector<double> dq;  // D_q at FeatureLayout::feature_q
  double c1{0.0}, c2{0.0}, c3{0.0};
  double delta_dq{0.0};
};

// D_q is read off the analysis grid by linear interpolation.
ChannelDescriptor describe(const mf::MultifractalSummary& s, std::span<const double> feature_q);

struct FeatureSet {
  FeatureLayout layout;
  std::vector<std::string> trial_ids;
  std::vector<int> labels;
  std::vector<std::size_t> window_index;
  Eigen::MatrixXd x;  // [rows x layout.length()]
  std::size_t dropped{0};

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  void append(const FeatureSet& other);
};

// per_window[w] is empty when the multifractal analysis of window w failed.
// Windows with an invalid coupling fit or a failed analysis are dropped and
// counted, never imputed.
FeatureSet assemble_features(const std::vector<std::optional<std::vector<ChannelDescriptor>>>& per_window,
                             const fracnet::CouplingTrajectory& traj, std::span<const double> alphas,
                             std::span<const double> window_lzc, const FeatureLayout& layout);

// LZ76 complexity index of the binarized entries of one coupling matrix.
double window_lzc(const Eigen::MatrixXd& a);

// First line "# fdnml-features layout_version=<v> feature_q=<q;q;..>", then
// trial_id,label,window_index,<feature names>.
void write_features_csv(const std::filesystem::path& path, const FeatureSet& fs);
FeatureSet read_features_csv(const std::filesystem::path& path,
                             std::optional<int> expected_version = kFeatureLayoutVersion);

}  // namespace fdnml::distance
