#include "doctest.h"

#include "fdnml/common.hpp"
#include "fdnml/distance.hpp"
#include "lz76_oracle.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace fdnml;
using namespace fdnml::distance;

namespace {

// W1 as the L1 distance between quantile functions, integrated exactly over
// the merged breakpoints i/n and j/m.
double w1_quantile_oracle(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> cuts{0.0, 1.0};
  for (std::size_t i = 1; i < a.size(); ++i) cuts.push_back(static_cast<double>(i) / static_cast<double>(a.size()));
  for (std::size_t j = 1; j < b.size(); ++j) cuts.push_back(static_cast<double>(j) / static_cast<double>(b.size()));
  std::sort(cuts.begin(), cuts.end());
  double acc = 0.0;
  for (std::size_t k = 1; k < cuts.size(); ++k) {
    const double lo = cuts[k - 1], hi = cuts[k];
    if (hi - lo <= 0.0) continue;
    const double mid = 0.5 * (lo + hi);
    const auto ia = std::min(a.size() - 1, static_cast<std::size_t>(mid * static_cast<double>(a.size())));
    const auto ib = std::min(b.size() - 1, static_cast<std::size_t>(mid * static_cast<double>(b.size())));
    acc += (hi - lo) * std::abs(a[ia] - b[ib]);
  }
  return acc;
}

std::vector<double> random_sample(std::mt19937_64& rng, std::size_t n, double shift) {
  std::normal_distribution<double> nd(shift, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

ChannelDescriptor descriptor(double base) {
  return ChannelDescriptor{{base, base + 0.1, base + 0.2, base + 0.3}, base, -0.01, 0.0, 0.4};
}

fracnet::CouplingTrajectory trajectory(std::size_t windows) {
  fracnet::CouplingTrajectory tr;
  tr.n_channels = 2;
  tr.trial_id = "T1";
  tr.fatigue_level = 1;
  tr.matrices = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(windows), 4);
  tr.fits.assign(windows, fracnet::WindowFit{true, 0.0, 1, true, ""});
  return tr;
}

FeatureLayout two_channel_layout() {
  FeatureLayout l;
  l.channels = {"TP9", "AF7"};
  return l;
}

}  // namespace

TEST_CASE("W1 identity and hand-computed values") {
  const std::vector<double> a{0.3, -1.0, 2.0, 0.5};
  CHECK(wasserstein1(a, a) == 0.0);
  std::vector<double> shifted = a;
  for (auto& v : shifted) v += 0.1;
  CHECK(wasserstein1(a, shifted) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(wasserstein1(std::vector<double>{0.0, 1.0}, std::vector<double>{0.0, 0.0, 1.0, 1.0}) ==
        doctest::Approx(0.0).scale(1.0));
  CHECK(wasserstein1(std::vector<double>{0.0}, std::vector<double>{1.0, 3.0}) == doctest::Approx(2.0));
}

TEST_CASE("W1 matches the quantile-function oracle") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 300; ++t) {
    const auto a = random_sample(rng, 1 + rng() % 40, 0.0);
    const auto b = random_sample(rng, 1 + rng() % 40, 0.5);
    REQUIRE(wasserstein1(a, b) == doctest::Approx(w1_quantile_oracle(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("W1 satisfies the metric axioms") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 1000; ++t) {
    const auto a = random_sample(rng, 3 + rng() % 20, 0.0);
    const auto b = random_sample(rng, 3 + rng() % 20, 0.3);
    const auto c = random_sample(rng, 3 + rng() % 20, -0.2);
    const double ab = wasserstein1(a, b), ba = wasserstein1(b, a);
    REQUIRE(ab >= 0.0);
    REQUIRE(ab == doctest::Approx(ba).epsilon(1e-12));
    REQUIRE(ab <= wasserstein1(a, c) + wasserstein1(c, b) + 1e-12);
  }
}

TEST_CASE("W1 is translation invariant and scale equivariant") {
  std::mt19937_64 rng(9);
  const auto a = random_sample(rng, 50, 0.0);
  const auto b = random_sample(rng, 37, 1.0);
  auto a2 = a, b2 = b;
  for (auto& v : a2) v = 3.0 * v + 7.0;
  for (auto& v : b2) v = 3.0 * v + 7.0;
  CHECK(wasserstein1(a2, b2) == doctest::Approx(3.0 * wasserstein1(a, b)).epsilon(1e-10));
}

TEST_CASE("W1 rejects empty or non-finite samples") {
  CHECK_THROWS_AS(wasserstein1(std::vector<double>{}, std::vector<double>{1.0}), DataError);
  CHECK_THROWS_AS(wasserstein1(std::vector<double>{NAN}, std::vector<double>{1.0}), DataError);
}

TEST_CASE("pairwise level tables") {
  const std::vector<double> v{1.0, 2.0, 4.0};
  const auto same = pairwise_level_distances(std::map<int, std::vector<double>>{{0, v}, {1, v}, {2, v}});
  CHECK(same.w.norm() == 0.0);
  CHECK(same.levels == std::vector<int>{0, 1, 2});

  const auto two = pairwise_level_distances(std::map<int, std::vector<double>>{{0, {0.0, 1.0}}, {2, {1.0, 2.0}}});
  CHECK(two.w.rows() == 2);
  CHECK(two.at(0, 2) == doctest::Approx(1.0));
  CHECK(two.at(2, 0) == two.at(0, 2));
  CHECK(two.at(0, 0) == 0.0);
  CHECK_THROWS_AS(two.at(0, 1), DataError);
  CHECK_THROWS_AS(pairwise_level_distances(std::map<int, std::vector<double>>{{0, v}}), DataError);
}

TEST_CASE("curve and scalar reductions") {
  const std::vector<double> q{-1.0, 0.0, 2.0};
  CurveSamples curves;
  curves[0] = {{1.0, 1.0, 0.8}, {1.0, 1.0, 0.9}};
  curves[1] = {{1.2, 1.0, 0.5}, {1.2, 1.0, 0.6}};
  const auto curve = pairwise_level_distances(curves, q, Reduction::curve);
  CHECK(curve.at(0, 1) == doctest::Approx((0.2 + 0.0 + 0.3) / 3.0));
  const auto scalar = pairwise_level_distances(curves, q, Reduction::scalar, 2.0);
  CHECK(scalar.at(0, 1) == doctest::Approx(0.3));
  CHECK(scalar.reduction == Reduction::scalar);
  CHECK_THROWS_AS(pairwise_level_distances(curves, q, Reduction::scalar, 1.5), ConfigError);
  curves[1][0].pop_back();
  CHECK_THROWS_AS(pairwise_level_distances(curves, q), DataError);
  CHECK(parse_reduction("curve") == Reduction::curve);
  CHECK(reduction_name(parse_reduction("scalar")) == "scalar");
  CHECK_THROWS_AS(parse_reduction("median"), ConfigError);
}

TEST_CASE("feature layout names and length agree") {
  const auto l = two_channel_layout();
  CHECK(l.names().size() == l.length());
  CHECK(l.length() == 2 * 8 + 4 + 2 + 1);
  CHECK(l.names().front() == "TP9_dq_m4");
  CHECK(l.names().back() == "window_lzc");
}

TEST_CASE("describe interpolates D_q on the analysis grid") {
  mf::MultifractalSummary s;
  s.dq.q = {-4.0, -3.0, -2.0, 0.0, 2.0, 4.0};
  s.dq.dq = {1.4, 1.3, 1.2, 1.0, 0.9, 0.8};
  s.dq.delta_dq = 0.6;
  s.cumulants.c1 = 0.7;
  const auto d = describe(s, std::vector<double>{-4.0, -1.0, 3.0});
  CHECK(d.dq[0] == doctest::Approx(1.4));
  CHECK(d.dq[1] == doctest::Approx(1.1));
  CHECK(d.dq[2] == doctest::Approx(0.85));
  CHECK(d.delta_dq == 0.6);
  CHECK(d.c1 == 0.7);
  CHECK_THROWS_AS(describe(s, std::vector<double>{5.0}), ConfigError);
}

TEST_CASE("assemble_features keeps one row per valid window") {
  const auto layout = two_channel_layout();
  const std::size_t W = 202;
  auto tr = trajectory(W);
  std::vector<std::optional<std::vector<ChannelDescriptor>>> per(W);
  for (std::size_t w = 0; w < W; ++w) per[w] = std::vector<ChannelDescriptor>{descriptor(1.0), descriptor(2.0)};
  const std::vector<double> alphas{0.4, 0.6};
  const std::vector<double> lzc(W, 0.9);
  const auto fs = assemble_features(per, tr, alphas, lzc, layout);
  CHECK(fs.rows() == W);
  CHECK(fs.dropped == 0);
  CHECK(static_cast<std::size_t>(fs.x.cols()) == layout.length());
  CHECK(fs.x(5, 8) == 2.0);                    // second channel, first D_q
  CHECK(fs.x(5, 16) == tr.matrices(5, 0));     // a_0_0
  CHECK(fs.x(5, 20) == 0.4);                   // first alpha
  CHECK(fs.x(5, 22) == 0.9);

  tr.fits[7].valid = false;
  const auto one_bad = assemble_features(per, tr, alphas, lzc, layout);
  CHECK(one_bad.rows() == W - 1);
  CHECK(one_bad.dropped == 1);
  CHECK(one_bad.window_index[7] == 8);

  per[3].reset();
  CHECK(assemble_features(per, tr, alphas, lzc, layout).dropped == 2);
  CHECK_THROWS_AS(assemble_features(per, trajectory(W - 1), alphas, lzc, layout), DataError);
  CHECK_THROWS_AS(assemble_features(per, tr, std::vector<double>{0.4}, lzc, layout), DataError);
}

TEST_CASE("feature files round trip and check the layout version") {
  testutil::TempDir dir("features");
  const auto layout = two_channel_layout();
  auto tr = trajectory(6);
  std::vector<std::optional<std::vector<ChannelDescriptor>>> per(6, std::vector<ChannelDescriptor>{descriptor(1.0), descriptor(2.0)});
  const auto fs = assemble_features(per, tr, std::vector<double>{0.4, 0.6}, std::vector<double>(6, 0.9), layout);
  write_features_csv(dir / "f.csv", fs);
  const auto back = read_features_csv(dir / "f.csv");
  CHECK(back.x == fs.x);
  CHECK(back.trial_ids == fs.trial_ids);
  CHECK(back.labels == fs.labels);
  CHECK(back.layout.channels == layout.channels);

  auto text = testutil::read_text(dir / "f.csv");
  text.replace(text.find("layout_version=1"), 16, "layout_version=9");
  testutil::write_text(dir / "g.csv", text);
  CHECK_THROWS_AS(read_features_csv(dir / "g.csv"), DataError);
  CHECK(read_features_csv(dir / "g.csv", std::nullopt).layout.version == 9);

  write_features_csv(dir / "h.csv", fs);
  CHECK(testutil::read_text(dir / "h.csv") == testutil::read_text(dir / "f.csv"));
}

TEST_CASE("window LZC of a coupling matrix") {
  Eigen::MatrixXd a(2, 2);
  a << 1.0, 2.0, 3.0, 4.0;
  // bits 0011 parse as 0 | 01 | 1
  CHECK(testutil::lz76_bruteforce({0, 0, 1, 1}) == 3);
  CHECK(window_lzc(a) == doctest::Approx(3.0 * std::log2(4.0) / 4.0));
}
