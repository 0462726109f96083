#include "vprg/grounding_temporal.hpp"

#include <cmath>
#include <stdexcept>

namespace vprg {

SyncBranch SyncBranch::make(std::size_t d, std::uint64_t seed) {
  SyncBranch b;
  b.pl = PredictionLayer::make(d, seed);
  // The stack feeding these probes is rectified, so a non-negative read-out
  // starts monotone in activation strength instead of betting on signs.
  Tensor& w = b.pl.w.mutable_value();
  for (std::size_t i = 0; i < w.numel(); ++i) w.data()[i] = std::fabs(w.data()[i]);
  return b;
}

void SyncBranch::register_params(ParamRegistry& reg, const std::string& prefix) const {
  pl.register_params(reg, prefix);
}

namespace {

// Shared recursion: score the sentences in visit order, suppressing each one
// by the accumulated scores of those already visited.
std::vector<ad::Var> sync_pass(const std::vector<ad::Var>& sentence_cells,
                               const SyncBranch& branch, bool reverse) {
  if (sentence_cells.empty())
    throw std::invalid_argument("sync maps need at least one sentence");
  std::size_t M = sentence_cells.size();
  std::vector<ad::Var> out(M);
  ad::Var accumulated;
  for (std::size_t step = 0; step < M; ++step) {
    std::size_t m = reverse ? M - 1 - step : step;
    ad::Var scores;
    if (step == 0) {
      scores = branch.pl.predict_cells(sentence_cells[m]);
      accumulated = scores;
    } else {
      ad::Var keep = ad::clamp(ad::one_minus(accumulated), 0.0, 1.0);
      scores = branch.pl.predict_cells(ad::mul_colvec(sentence_cells[m], keep));
      accumulated = ad::add(accumulated, scores);
    }
    out[m] = scores;
  }
  return out;
}

}  // namespace

std::vector<ad::Var> forward_sync_maps(const std::vector<ad::Var>& sentence_cells,
                                       const SyncBranch& branch) {
  return sync_pass(sentence_cells, branch, false);
}

std::vector<ad::Var> reverse_sync_maps(const std::vector<ad::Var>& sentence_cells,
                                       const SyncBranch& branch) {
  return sync_pass(sentence_cells, branch, true);
}

ScoreMap pseudo_label_from_map(const ScoreMap& P, double theta_min, double theta_max) {
  return soft_label_map(argmax_moment(P), P.K(), theta_min, theta_max);
}

ad::Var bce_map_alignment(const ad::Var& p_cells, const ScoreMap& gt, double eps) {
  std::size_t K = gt.K();
  auto moments = enumerate_moments(K);
  const Tensor& p = p_cells.value();
  if (p.rank() != 2 || p.cols() != 1 || p.rows() != moments.size())
    throw std::invalid_argument("bce_map_alignment: cell count does not match map size");
  Tensor g = Tensor::zeros({moments.size(), 1});
  Tensor g_inv = Tensor::zeros({moments.size(), 1});
  for (std::size_t c = 0; c < moments.size(); ++c) {
    double v = gt.values.at(moments[c].start_segment, moments[c].end_segment);
    if (v < 0.0 || v > 1.0)
      throw std::invalid_argument("bce_map_alignment: target outside [0,1]");
    g.at(c, 0) = v;
    g_inv.at(c, 0) = 1.0 - v;
  }
  ad::Var pc = ad::clamp(p_cells, eps, 1.0 - eps);
  ad::Var pos = ad::mul(ad::Var::constant(g), ad::log_op(pc));
  ad::Var neg = ad::mul(ad::Var::constant(g_inv), ad::log_op(ad::one_minus(pc)));
  return ad::scale(ad::sum_all(ad::add(pos, neg)), -1.0);
}

ad::Var bce_alignment_loss(const std::vector<ad::Var>& p_cells,
                           const std::vector<ScoreMap>& gt, double eps) {
  if (p_cells.empty() || p_cells.size() != gt.size())
    throw std::invalid_argument("bce_alignment_loss: one target map per sentence");
  ad::Var total = bce_map_alignment(p_cells[0], gt[0], eps);
  for (std::size_t m = 1; m < p_cells.size(); ++m)
    total = ad::add(total, bce_map_alignment(p_cells[m], gt[m], eps));
  return total;
}

ad::Var time_loss(const ad::Var& forward_term, const ad::Var& reverse_term) {
  return ad::add(forward_term, reverse_term);
}

}  // namespace vprg
