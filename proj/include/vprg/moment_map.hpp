#ifndef VPRG_MOMENT_MAP_HPP_
#define VPRG_MOMENT_MAP_HPP_

#include <cstddef>
#include <utility>
#include <vector>

#include "vprg/tensor.hpp"

namespace vprg {

// Candidate moment: contiguous span of segments [start_segment, end_segment],
// both inclusive, 0-based.
struct MomentIndex {
  std::size_t start_segment = 0;
  std::size_t end_segment = 0;
  bool operator==(const MomentIndex&) const = default;
};

struct TimeInterval {
  double t_start = 0.0;
  double t_end = 0.0;
};

// K x K matrix of per-moment scores. Only the upper triangle (i <= j) is
// meaningful; everything below stays 0 and is skipped by reductions.
struct ScoreMap {
  Tensor values;
  std::size_t K() const { return values.rows(); }
};

// K x K x d tensor of span-pooled features over the same valid region.
struct MomentFeatureMap {
  Tensor values;
  std::size_t K() const { return values.dim(0); }
  std::size_t width() const { return values.dim(2); }
};

// All valid moments in lexicographic (start, end) order; K(K+1)/2 of them.
std::vector<MomentIndex> enumerate_moments(std::size_t K);

// Same enumeration as (row, col) grid slots, for scatter/gather helpers.
std::vector<std::pair<std::size_t, std::size_t>> moment_slots(std::size_t K);

bool moment_valid(const MomentIndex& m, std::size_t K);

// Moment (i,j) covers [i*L, (j+1)*L] with L = duration / K.
TimeInterval moment_to_interval(const MomentIndex& m, std::size_t K, double duration);

// Intersection over union; 0 when the intervals only touch or are disjoint.
double temporal_iou(const TimeInterval& a, const TimeInterval& b);

// Elementwise max over segment rows start..end; returns a 1 x d row.
Tensor aggregate_moment_features(const Tensor& segments, const MomentIndex& m);

MomentFeatureMap build_feature_map(const Tensor& segments);

// Per-cell IoU against the target moment (on unit-length segment intervals),
// rescaled by (iou - theta_min) / (theta_max - theta_min) and clipped to [0,1].
ScoreMap soft_label_map(const MomentIndex& target, std::size_t K, double theta_min,
                        double theta_max);

// Highest-scoring valid cell; ties resolve to the lexicographically first.
MomentIndex argmax_moment(const ScoreMap& map);

}  // namespace vprg

#endif  // VPRG_MOMENT_MAP_HPP_
