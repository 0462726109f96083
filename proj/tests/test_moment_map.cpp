#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "vprg/moment_map.hpp"

using namespace vprg;

namespace {

// Independent IoU formulation: union as convex hull minus the gap.
double iou_oracle(double s1, double e1, double s2, double e2) {
  const double inter = std::min(e1, e2) - std::max(s1, s2);
  if (inter <= 0.0) return 0.0;
  const double gap = std::max(0.0, std::max(s1, s2) - std::min(e1, e2));
  const double hull = std::max(e1, e2) - std::min(s1, s2);
  return inter / (hull - gap);
}

// Integer-count oracle for segment-unit moments.
double soft_label_oracle(std::size_t i, std::size_t j, const MomentIndex& t, double lo,
                         double hi) {
  const long inter = std::min<long>(j + 1, t.end_segment + 1) -
                     std::max<long>(i, t.start_segment);
  double iou = 0.0;
  if (inter > 0) {
    const long len_a = static_cast<long>(j + 1 - i);
    const long len_b = static_cast<long>(t.end_segment + 1 - t.start_segment);
    iou = static_cast<double>(inter) / static_cast<double>(len_a + len_b - inter);
  }
  const double v = (iou - lo) / (hi - lo);
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

TEST_CASE("moment enumeration") {
  CHECK_THROWS_AS(enumerate_moments(0), std::invalid_argument);

  auto one = enumerate_moments(1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == MomentIndex{0, 0});

  auto three = enumerate_moments(3);
  std::vector<MomentIndex> expect{{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};
  CHECK(three == expect);

  CHECK(enumerate_moments(32).size() == 528);

  for (std::size_t K = 1; K <= 64; ++K) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = i; j < K; ++j) ++count;
    CHECK(enumerate_moments(K).size() == count);
  }
}

TEST_CASE("moment to interval") {
  auto whole = moment_to_interval({0, 15}, 16, 32.0);
  CHECK(whole.t_start == 0.0);
  CHECK(whole.t_end == 32.0);

  auto first = moment_to_interval({0, 0}, 16, 32.0);
  CHECK(first.t_end == 2.0);

  auto mid = moment_to_interval({4, 7}, 16, 32.0);
  CHECK(mid.t_start == 8.0);
  CHECK(mid.t_end == 16.0);

  CHECK_THROWS_AS(moment_to_interval({4, 3}, 16, 32.0), std::invalid_argument);
  CHECK_THROWS_AS(moment_to_interval({0, 16}, 16, 32.0), std::invalid_argument);
  CHECK_THROWS_AS(moment_to_interval({0, 0}, 16, 0.0), std::invalid_argument);
}

TEST_CASE("temporal iou basics") {
  CHECK(temporal_iou({0, 10}, {0, 10}) == 1.0);
  CHECK(temporal_iou({0, 5}, {5, 10}) == 0.0);
  CHECK(temporal_iou({0, 4}, {2, 6}) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(temporal_iou({5, 5}, {0, 10}), std::invalid_argument);
  CHECK_THROWS_AS(temporal_iou({0, 10}, {7, 3}), std::invalid_argument);
}

TEST_CASE("temporal iou against independent oracle") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int t = 0; t < 1000; ++t) {
    double s1 = u(rng), e1 = u(rng), s2 = u(rng), e2 = u(rng);
    if (s1 > e1) std::swap(s1, e1);
    if (s2 > e2) std::swap(s2, e2);
    if (s1 == e1 || s2 == e2) continue;
    const double got = temporal_iou({s1, e1}, {s2, e2});
    const double want = iou_oracle(s1, e1, s2, e2);
    CHECK(std::fabs(got - want) < 1e-9);
    CHECK(got == temporal_iou({s2, e2}, {s1, e1}));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("temporal iou against discretized overlap") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  const int n_grid = 2'000'000;
  for (int t = 0; t < 10; ++t) {
    double s1 = u(rng), e1 = u(rng), s2 = u(rng), e2 = u(rng);
    if (s1 > e1) std::swap(s1, e1);
    if (s2 > e2) std::swap(s2, e2);
    if (e1 - s1 < 0.1 || e2 - s2 < 0.1) continue;
    const double lo = std::min(s1, s2), hi = std::max(e1, e2);
    const double step = (hi - lo) / n_grid;
    long inter = 0, uni = 0;
    for (int g = 0; g < n_grid; ++g) {
      const double x = lo + (g + 0.5) * step;
      const bool in1 = x >= s1 && x < e1, in2 = x >= s2 && x < e2;
      inter += (in1 && in2) ? 1 : 0;
      uni += (in1 || in2) ? 1 : 0;
    }
    const double approx = static_cast<double>(inter) / static_cast<double>(uni);
    CHECK(temporal_iou({s1, e1}, {s2, e2}) == doctest::Approx(approx).epsilon(1e-3));
  }
}

TEST_CASE("span feature aggregation") {
  Tensor seg({3, 2}, {1, 0, 0, 2, 3, 1});
  Tensor full = aggregate_moment_features(seg, {0, 2});
  CHECK(full[0] == 3.0);
  CHECK(full[1] == 2.0);

  Tensor single = aggregate_moment_features(seg, {1, 1});
  CHECK(single[0] == 0.0);
  CHECK(single[1] == 2.0);

  CHECK_THROWS_AS(aggregate_moment_features(Tensor({0, 2}), {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(aggregate_moment_features(seg, {1, 3}), std::invalid_argument);
}

TEST_CASE("span aggregation is monotone in span size") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor seg({6, 4});
  for (double& v : seg.vec()) v = n(rng);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = i; j + 1 < 6; ++j) {
      Tensor small = aggregate_moment_features(seg, {i, j});
      Tensor big = aggregate_moment_features(seg, {i, j + 1});
      for (std::size_t c = 0; c < 4; ++c) CHECK(big[c] >= small[c]);
    }
  }
}

TEST_CASE("feature map assembly") {
  Tensor seg({3, 2}, {0, 0, 1, 1, 2, 2});
  MomentFeatureMap map = build_feature_map(seg);
  REQUIRE(map.K() == 3);
  REQUIRE(map.width() == 2);
  // Monotone rows: slot (i,j) = j * ones.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i; j < 3; ++j)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(map.values.at3(i, j, c) == static_cast<double>(j));
  // Invalid slots stay zero.
  CHECK(map.values.at3(1, 0, 0) == 0.0);
  CHECK(map.values.at3(2, 1, 1) == 0.0);

  MomentFeatureMap tiny = build_feature_map(Tensor({1, 2}, {4.0, 5.0}));
  CHECK(tiny.values.at3(0, 0, 0) == 4.0);
  CHECK(tiny.values.at3(0, 0, 1) == 5.0);
}

TEST_CASE("soft label map") {
  CHECK_THROWS_AS(soft_label_map({1, 2}, 4, 0.8, 0.5), std::invalid_argument);

  ScoreMap m = soft_label_map({1, 2}, 4, 0.5, 1.0);
  CHECK(m.values.at(1, 2) == 1.0);
  CHECK(m.values.at(0, 3) == 0.0);
  CHECK(m.values.at(1, 3) == doctest::Approx(1.0 / 3.0));
  CHECK(m.values.at(2, 0) == 0.0);
  CHECK(m.values.at(3, 1) == 0.0);
}

TEST_CASE("soft label map matches brute-force oracle for K up to 16") {
  std::mt19937_64 rng(13);
  for (std::size_t K = 1; K <= 16; ++K) {
    std::uniform_int_distribution<std::size_t> pick(0, K - 1);
    for (int rep = 0; rep < 8; ++rep) {
      std::size_t a = pick(rng), b = pick(rng);
      if (a > b) std::swap(a, b);
      const MomentIndex target{a, b};
      ScoreMap m = soft_label_map(target, K, 0.5, 1.0);
      for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
          if (i <= j) {
            CHECK(m.values.at(i, j) == soft_label_oracle(i, j, target, 0.5, 1.0));
          } else {
            CHECK(m.values.at(i, j) == 0.0);
          }
        }
      }
      CHECK(m.values.at(a, b) == 1.0);
    }
  }
}

TEST_CASE("argmax over valid cells with lexicographic ties") {
  ScoreMap m{Tensor::zeros({3, 3})};
  m.values.at(0, 1) = 0.7;
  m.values.at(1, 2) = 0.7;
  CHECK(argmax_moment(m) == MomentIndex{0, 1});

  // A large value in the invalid triangle must be ignored.
  m.values.at(2, 0) = 9.0;
  CHECK(argmax_moment(m) == MomentIndex{0, 1});

  m.values.at(1, 2) = 0.9;
  CHECK(argmax_moment(m) == MomentIndex{1, 2});
}
