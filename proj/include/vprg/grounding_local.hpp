#ifndef VPRG_GROUNDING_LOCAL_HPP_
#define VPRG_GROUNDING_LOCAL_HPP_

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "vprg/attention.hpp"
#include "vprg/autograd.hpp"
#include "vprg/moment_map.hpp"
#include "vprg/params.hpp"

namespace vprg {

// Projects the sentence summary and the moment features into a common width
// and gates the map cells with the projected sentence.
struct FusionParams {
  ad::Var w_s;  // d_s x d
  ad::Var w_v;  // d_v x d

  static FusionParams make(std::size_t d_s, std::size_t d_v, std::size_t d,
                           std::uint64_t seed);
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// Cell-list layout: rows follow enumerate_moments order, K(K+1)/2 of them.
ad::Var fuse_sentence_moment_cells(const ad::Var& sentence_summary,
                                   const ad::Var& moment_cells, const FusionParams& p);

// Four 3x3 convolutions over the K x K map with ReLU between them; the
// invalid lower triangle is re-zeroed after every layer so it never leaks
// into neighboring cells.
class TanStack {
 public:
  TanStack() = default;
  TanStack(std::size_t K, std::size_t d, std::uint64_t seed);

  ad::Var refine(const ad::Var& grid) const;        // {K,K,d} -> {K,K,d}
  ad::Var refine_cells(const ad::Var& cells) const;  // cell list in, cell list out
  void register_params(ParamRegistry& reg, const std::string& prefix) const;

 private:
  struct Conv {
    ad::Var w;  // d x 9d
    ad::Var b;  // 1 x d
  };

  std::size_t K_ = 0, d_ = 0;
  std::array<Conv, 4> convs_;
  ad::Var valid_mask_;  // constant {K,K,d}, 1 on i<=j
  std::vector<std::pair<std::size_t, std::size_t>> slots_;
};

// Affine map to one logit per cell followed by a sigmoid.
struct PredictionLayer {
  ad::Var w;  // d x 1
  ad::Var b;  // 1 x 1

  static PredictionLayer make(std::size_t d, std::uint64_t seed);
  ad::Var predict_cells(const ad::Var& refined_cells) const;  // n_cells x 1 in (0,1)
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// Scatter a cell-list column into a K x K ScoreMap (invalid cells stay 0).
ScoreMap score_map_from_cells(const Tensor& cell_scores, std::size_t K);

// Highest-Q cells, scores descending, ties to the lexicographically first
// moment. Cell-index variant serves the training path.
std::vector<std::pair<MomentIndex, double>> select_top_q(const ScoreMap& P, std::size_t Q);
std::vector<std::size_t> top_q_cell_indices(const Tensor& cell_scores, std::size_t K,
                                            std::size_t Q);

// Encode the span's segment features, decode the masked word states against
// them, and emit a vocabulary distribution per word position.
class Reconstructor {
 public:
  Reconstructor() = default;
  Reconstructor(std::size_t dim, std::size_t vocab_size, std::uint64_t seed,
                std::size_t depth = 1);

  ad::Var word_distributions(const ad::Var& masked_states,
                             const ad::Var& span_features) const;  // J x n_v
  void register_params(ParamRegistry& reg, const std::string& prefix) const;

 private:
  TransformerEncoder enc_;
  TransformerDecoder dec_;
  ad::Var w_out_, b_out_;
};

// One reconstruction instance: sentence m decoded against candidate q.
struct ReconstructionTerm {
  ad::Var distributions;                    // J x n_v, rows sum to 1
  std::vector<std::size_t> targets;         // original token ids, length J
  std::vector<std::size_t> mask_positions;  // subset of [0, J)
};

// Negative log-likelihood of the original tokens, summed over positions and
// averaged over terms (M sentences x Q candidates). Unmasked positions can
// be down-weighted; 1.0 keeps every position at full weight.
ad::Var reconstruction_loss(const std::vector<ReconstructionTerm>& terms,
                            double unmasked_weight = 1.0);

struct RewardSchedule {
  std::vector<double> rewards;  // descending from 1 to 0, step 1/(Q-1)
  static RewardSchedule make(std::size_t Q);
};

// Softmax the Q candidate scores of each sentence and pay out rewards on the
// log-probabilities; averaged over sentences.
ad::Var rank_loss(const std::vector<ad::Var>& per_sentence_scores,
                  const RewardSchedule& rewards);

struct LocalLoss {
  ad::Var total;
  ad::Var reconstruction;
  ad::Var rank;
};

LocalLoss local_loss(const ad::Var& reconstruction, const ad::Var& rank);

}  // namespace vprg

#endif  // VPRG_GROUNDING_LOCAL_HPP_
