#pragma once

#include "fdnml/fracnet.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fdnml::complexity {

struct BinarySequence {
  std::vector<std::uint8_t> bits;
  double threshold{0.0};  // median of the input
  bool degenerate{false}; // every input equal, so every bit is 0

  std::size_t size() const { return bits.size(); }
};

// bits[i] = 1 iff x[i] > median(x). The median of an even-length input is the
// midpoint of the two central order statistics.
BinarySequence binarize(std::span<const double> x);

// Row-major vectorization of the valid windows of the trajectory
// (W_valid x n^2 entries).
BinarySequence binarize(const fracnet::CouplingTrajectory& traj);

double median(std::span<const double> x);

struct ComplexityResult {
  std::size_t c{0};   // LZ76 phrase count; a trailing incomplete phrase counts
  double ci{0.0};     // c log2(n) / n
  std::size_t n{0};
};

// Kaspar-Schuster implementation of the Lempel-Ziv (1976) production parsing.
ComplexityResult lz76(std::span<const std::uint8_t> bits);
inline ComplexityResult lz76(const BinarySequence& s) { return lz76(std::span<const std::uint8_t>(s.bits)); }

ComplexityResult trajectory_complexity(const fracnet::CouplingTrajectory& traj);

struct Density {
  double bandwidth{0.0};  // Silverman's rule
  std::vector<double> grid;
  std::vector<double> values;
};

Density kde(std::span<const double> x, std::size_t points = 128);

struct GroupReport {
  double h{0.0};           // tie-corrected Kruskal-Wallis statistic
  double p_value{1.0};     // chi-square approximation, groups - 1 dof
  std::size_t dof{0};
  std::map<int, double> means;
  std::map<int, std::size_t> counts;
  std::map<int, Density> densities;
};

GroupReport group_compare(const std::map<int, std::vector<double>>& by_level);

struct TrajectoryComplexity {
  std::string trial_id;
  int fatigue_level{0};
  ComplexityResult result;
  bool degenerate{false};
};

// trial_id,label,c,ci,n,degenerate
void write_complexity_csv(const std::filesystem::path& path, const std::vector<TrajectoryComplexity>& rows);

}  // namespace fdnml::complexity
