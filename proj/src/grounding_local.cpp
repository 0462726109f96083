#include "vprg/grounding_local.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace vprg {

FusionParams FusionParams::make(std::size_t d_s, std::size_t d_v, std::size_t d,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FusionParams p;
  Tensor ws = init_xavier({d_s, d}, rng);
  // Matching widths share one draw, so the two projections start in the same
  // basis and the gate opens on genuine cross-modal agreement.
  Tensor wv = (d_s == d_v) ? ws : init_xavier({d_v, d}, rng);
  p.w_s = ad::Var::param(std::move(ws));
  p.w_v = ad::Var::param(std::move(wv));
  return p;
}

void FusionParams::register_params(ParamRegistry& reg, const std::string& prefix) const {
  reg.add(prefix + ".w_s", w_s);
  reg.add(prefix + ".w_v", w_v);
}

ad::Var fuse_sentence_moment_cells(const ad::Var& sentence_summary,
                                   const ad::Var& moment_cells, const FusionParams& p) {
  if (sentence_summary.value().rows() != 1 ||
      sentence_summary.value().cols() != p.w_s.value().rows())
    throw std::invalid_argument("fuse_sentence_moment_cells: sentence width mismatch");
  if (moment_cells.value().cols() != p.w_v.value().rows())
    throw std::invalid_argument("fuse_sentence_moment_cells: moment width mismatch");
  ad::Var hs = ad::matmul(sentence_summary, p.w_s);   // 1 x d
  ad::Var fv = ad::matmul(moment_cells, p.w_v);       // n_cells x d
  return ad::mul_rowvec(fv, hs);
}

TanStack::TanStack(std::size_t K, std::size_t d, std::uint64_t seed) : K_(K), d_(d) {
  if (K == 0 || d == 0) throw std::invalid_argument("TanStack: K and d must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 0.01);
  for (auto& conv : convs_) {
    // Center-tap identity plus a little noise: the stack starts as a per-cell
    // map and earns its neighborhood mixing during training.
    Tensor w = Tensor::zeros({d, 9 * d});
    for (std::size_t r = 0; r < d; ++r) w.at(r, 4 * d + r) = 1.0;
    for (std::size_t i = 0; i < w.numel(); ++i) w.data()[i] += jitter(rng);
    conv.w = ad::Var::param(std::move(w));
    conv.b = ad::Var::param(Tensor::zeros({1, d}));
  }
  Tensor mask = Tensor::zeros({K, K, d});
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i; j < K; ++j)
      for (std::size_t c = 0; c < d; ++c) mask.at3(i, j, c) = 1.0;
  valid_mask_ = ad::Var::constant(std::move(mask));
  slots_ = moment_slots(K);
}

ad::Var TanStack::refine(const ad::Var& grid) const {
  if (K_ == 0) throw std::logic_error("TanStack: default-constructed");
  if (grid.value().rank() != 3 || grid.value().dim(0) != K_ || grid.value().dim(1) != K_ ||
      grid.value().dim(2) != d_)
    throw std::invalid_argument("TanStack::refine: shape mismatch");
  ad::Var h = grid;
  for (const Conv& conv : convs_) {
    h = ad::conv3x3(h, conv.w, conv.b);
    h = ad::mul(h, valid_mask_);
    h = ad::relu(h);
  }
  return h;
}

ad::Var TanStack::refine_cells(const ad::Var& cells) const {
  return ad::grid_to_cells(refine(ad::cells_to_grid(cells, K_, slots_)), slots_);
}

void TanStack::register_params(ParamRegistry& reg, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    reg.add(prefix + ".conv" + std::to_string(i) + ".w", convs_[i].w);
    reg.add(prefix + ".conv" + std::to_string(i) + ".b", convs_[i].b);
  }
}

PredictionLayer PredictionLayer::make(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PredictionLayer p;
  p.w = ad::Var::param(init_xavier({d, 1}, rng));
  p.b = ad::Var::param(Tensor::zeros({1, 1}));
  return p;
}

ad::Var PredictionLayer::predict_cells(const ad::Var& refined_cells) const {
  if (refined_cells.value().cols() != w.value().rows())
    throw std::invalid_argument("PredictionLayer: width mismatch");
  return ad::sigmoid(ad::linear(refined_cells, w, b));
}

void PredictionLayer::register_params(ParamRegistry& reg, const std::string& prefix) const {
  reg.add(prefix + ".w", w);
  reg.add(prefix + ".b", b);
}

ScoreMap score_map_from_cells(const Tensor& cell_scores, std::size_t K) {
  const auto slots = moment_slots(K);
  if (cell_scores.rows() != slots.size() || cell_scores.cols() != 1)
    throw std::invalid_argument("score_map_from_cells: cell count mismatch");
  ScoreMap map{Tensor::zeros({K, K})};
  for (std::size_t s = 0; s < slots.size(); ++s)
    map.values.at(slots[s].first, slots[s].second) = cell_scores[s];
  return map;
}

std::vector<std::size_t> top_q_cell_indices(const Tensor& cell_scores, std::size_t K,
                                            std::size_t Q) {
  const std::size_t n_cells = K * (K + 1) / 2;
  if (cell_scores.rows() != n_cells || cell_scores.cols() != 1)
    throw std::invalid_argument("top_q_cell_indices: cell count mismatch");
  if (Q > n_cells) throw std::invalid_argument("top_q_cell_indices: Q exceeds cell count");
  std::vector<std::size_t> order(n_cells);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (cell_scores[a] != cell_scores[b]) return cell_scores[a] > cell_scores[b];
    return a < b;  // cell order is lexicographic moment order
  });
  order.resize(Q);
  return order;
}

std::vector<std::pair<MomentIndex, double>> select_top_q(const ScoreMap& P, std::size_t Q) {
  const std::size_t K = P.K();
  const auto moments = enumerate_moments(K);
  Tensor cells({moments.size(), 1});
  for (std::size_t s = 0; s < moments.size(); ++s)
    cells[s] = P.values.at(moments[s].start_segment, moments[s].end_segment);
  std::vector<std::pair<MomentIndex, double>> out;
  for (std::size_t idx : top_q_cell_indices(cells, K, Q))
    out.emplace_back(moments[idx], cells[idx]);
  return out;
}

Reconstructor::Reconstructor(std::size_t dim, std::size_t vocab_size, std::uint64_t seed,
                             std::size_t depth) {
  AttentionConfig cfg;
  cfg.dim = dim;
  cfg.heads = dim % 4 == 0 ? 4 : (dim % 2 == 0 ? 2 : 1);
  cfg.depth = depth;
  enc_ = TransformerEncoder(cfg, seed);
  dec_ = TransformerDecoder(cfg, seed + 1);
  std::mt19937_64 rng(seed + 2);
  w_out_ = ad::Var::param(init_xavier({dim, vocab_size}, rng));
  b_out_ = ad::Var::param(Tensor::zeros({1, vocab_size}));
}

ad::Var Reconstructor::word_distributions(const ad::Var& masked_states,
                                          const ad::Var& span_features) const {
  if (span_features.value().rows() == 0)
    throw std::invalid_argument("Reconstructor: empty span");
  ad::Var memory = enc_.encode(span_features);
  ad::Var decoded = dec_.decode(masked_states, memory);
  return ad::softmax_rows(ad::linear(decoded, w_out_, b_out_));
}

void Reconstructor::register_params(ParamRegistry& reg, const std::string& prefix) const {
  enc_.register_params(reg, prefix + ".enc");
  dec_.register_params(reg, prefix + ".dec");
  reg.add(prefix + ".w_out", w_out_);
  reg.add(prefix + ".b_out", b_out_);
}

ad::Var reconstruction_loss(const std::vector<ReconstructionTerm>& terms,
                            double unmasked_weight) {
  if (terms.empty()) throw std::invalid_argument("reconstruction_loss: no terms");
  std::vector<ad::Var> losses;
  for (const ReconstructionTerm& t : terms) {
    const std::size_t J = t.distributions.value().rows();
    if (t.targets.size() != J)
      throw std::invalid_argument("reconstruction_loss: one target per word");
    for (std::size_t id : t.targets)
      if (id >= t.distributions.value().cols())
        throw std::invalid_argument("reconstruction_loss: target id out of vocabulary");
    Tensor weights({J, 1});
    for (std::size_t j = 0; j < J; ++j) weights[j] = unmasked_weight;
    for (std::size_t p : t.mask_positions) {
      if (p >= J) throw std::invalid_argument("reconstruction_loss: mask position out of range");
      weights[p] = 1.0;
    }
    ad::Var picked = ad::pick_per_row(t.distributions, t.targets);  // J x 1
    ad::Var weighted = ad::mul(ad::log_op(picked), ad::Var::constant(std::move(weights)));
    losses.push_back(ad::sum_all(weighted));
  }
  ad::Var sum = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) sum = ad::add(sum, losses[i]);
  return ad::scale(sum, -1.0 / static_cast<double>(terms.size()));
}

RewardSchedule RewardSchedule::make(std::size_t Q) {
  if (Q < 2) throw std::invalid_argument("RewardSchedule: Q must be at least 2");
  RewardSchedule s;
  s.rewards.resize(Q);
  const double step = 1.0 / static_cast<double>(Q - 1);
  for (std::size_t q = 0; q < Q; ++q) s.rewards[q] = 1.0 - step * static_cast<double>(q);
  return s;
}

ad::Var rank_loss(const std::vector<ad::Var>& per_sentence_scores,
                  const RewardSchedule& rewards) {
  if (per_sentence_scores.empty()) throw std::invalid_argument("rank_loss: no sentences");
  const std::size_t Q = rewards.rewards.size();
  Tensor reward_row({1, Q});
  for (std::size_t q = 0; q < Q; ++q) reward_row[q] = rewards.rewards[q];
  ad::Var reward_const = ad::Var::constant(std::move(reward_row));

  std::vector<ad::Var> losses;
  for (const ad::Var& scores : per_sentence_scores) {
    if (scores.value().rows() != 1 || scores.value().cols() != Q)
      throw std::invalid_argument("rank_loss: expected a 1 x Q score row");
    ad::Var logp = ad::log_softmax_rows(scores);
    losses.push_back(ad::scale(ad::sum_all(ad::mul(logp, reward_const)),
                               -1.0 / static_cast<double>(Q)));
  }
  ad::Var sum = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) sum = ad::add(sum, losses[i]);
  return ad::scale(sum, 1.0 / static_cast<double>(losses.size()));
}

LocalLoss local_loss(const ad::Var& reconstruction, const ad::Var& rank) {
  return {ad::add(reconstruction, rank), reconstruction, rank};
}

}  // namespace vprg
