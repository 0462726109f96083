#include "vprg/moment_map.hpp"

#include <algorithm>
#include <stdexcept>

namespace vprg {

std::vector<MomentIndex> enumerate_moments(std::size_t K) {
  if (K == 0) throw std::invalid_argument("enumerate_moments: K must be positive");
  std::vector<MomentIndex> out;
  out.reserve(K * (K + 1) / 2);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i; j < K; ++j) out.push_back({i, j});
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> moment_slots(std::size_t K) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(K * (K + 1) / 2);
  for (const MomentIndex& m : enumerate_moments(K))
    out.emplace_back(m.start_segment, m.end_segment);
  return out;
}

bool moment_valid(const MomentIndex& m, std::size_t K) {
  return m.start_segment <= m.end_segment && m.end_segment < K;
}

TimeInterval moment_to_interval(const MomentIndex& m, std::size_t K, double duration) {
  if (duration <= 0.0) throw std::invalid_argument("moment_to_interval: duration must be positive");
  if (!moment_valid(m, K)) throw std::invalid_argument("moment_to_interval: moment out of range");
  const double L = duration / static_cast<double>(K);
  return {static_cast<double>(m.start_segment) * L,
          static_cast<double>(m.end_segment + 1) * L};
}

double temporal_iou(const TimeInterval& a, const TimeInterval& b) {
  if (a.t_start >= a.t_end || b.t_start >= b.t_end)
    throw std::invalid_argument("temporal_iou: degenerate interval");
  const double inter = std::min(a.t_end, b.t_end) - std::max(a.t_start, b.t_start);
  if (inter <= 0.0) return 0.0;
  const double uni = (a.t_end - a.t_start) + (b.t_end - b.t_start) - inter;
  return inter / uni;
}

Tensor aggregate_moment_features(const Tensor& segments, const MomentIndex& m) {
  if (segments.numel() == 0) throw std::invalid_argument("aggregate_moment_features: empty matrix");
  if (!moment_valid(m, segments.rows()))
    throw std::invalid_argument("aggregate_moment_features: moment out of range");
  const std::size_t d = segments.cols();
  Tensor out({1, d});
  for (std::size_t c = 0; c < d; ++c) out[c] = segments.at(m.start_segment, c);
  for (std::size_t r = m.start_segment + 1; r <= m.end_segment; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] = std::max(out[c], segments.at(r, c));
  return out;
}

MomentFeatureMap build_feature_map(const Tensor& segments) {
  if (segments.numel() == 0) throw std::invalid_argument("build_feature_map: empty matrix");
  const std::size_t K = segments.rows(), d = segments.cols();
  MomentFeatureMap map{Tensor::zeros({K, K, d})};
  for (std::size_t i = 0; i < K; ++i) {
    // Running max along j reuses the (i, j-1) aggregation.
    Tensor acc({1, d});
    for (std::size_t c = 0; c < d; ++c) acc[c] = segments.at(i, c);
    for (std::size_t j = i; j < K; ++j) {
      if (j > i)
        for (std::size_t c = 0; c < d; ++c) acc[c] = std::max(acc[c], segments.at(j, c));
      for (std::size_t c = 0; c < d; ++c) map.values.at3(i, j, c) = acc[c];
    }
  }
  return map;
}

ScoreMap soft_label_map(const MomentIndex& target, std::size_t K, double theta_min,
                        double theta_max) {
  if (!(theta_min >= 0.0 && theta_min < theta_max && theta_max <= 1.0))
    throw std::invalid_argument("soft_label_map: need 0 <= theta_min < theta_max <= 1");
  if (!moment_valid(target, K)) throw std::invalid_argument("soft_label_map: target out of range");
  ScoreMap map{Tensor::zeros({K, K})};
  const double ts = static_cast<double>(target.start_segment);
  const double te = static_cast<double>(target.end_segment + 1);
  const double scale = 1.0 / (theta_max - theta_min);
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = i; j < K; ++j) {
      const TimeInterval cell{static_cast<double>(i), static_cast<double>(j + 1)};
      const double iou = temporal_iou(cell, {ts, te});
      const double v = (iou - theta_min) * scale;
      map.values.at(i, j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return map;
}

MomentIndex argmax_moment(const ScoreMap& map) {
  const std::size_t K = map.K();
  if (K == 0 || map.values.cols() != K)
    throw std::invalid_argument("argmax_moment: square non-empty map required");
  MomentIndex best{0, 0};
  double best_v = map.values.at(0, 0);
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = i; j < K; ++j) {
      if (map.values.at(i, j) > best_v) {
        best_v = map.values.at(i, j);
        best = {i, j};
      }
    }
  }
  return best;
}

}  // namespace vprg
