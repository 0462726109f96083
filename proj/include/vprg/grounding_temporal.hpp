#ifndef VPRG_GROUNDING_TEMPORAL_HPP_
#define VPRG_GROUNDING_TEMPORAL_HPP_

#include <cstdint>
#include <vector>

#include "vprg/autograd.hpp"
#include "vprg/grounding_local.hpp"
#include "vprg/moment_map.hpp"
#include "vprg/params.hpp"

namespace vprg {

// One direction of the order-aware scoring pass. Each branch owns its own
// prediction layer; forward and reverse never share it, and neither shares
// with the main score head.
struct SyncBranch {
  PredictionLayer pl;

  static SyncBranch make(std::size_t d, std::uint64_t seed);
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// Cell-list scoring where earlier sentences suppress later ones: sentence
// m's features are scaled per cell by clamp(1 - sum of earlier scores, 0, 1)
// before prediction. Inputs and outputs are indexed by sentence.
std::vector<ad::Var> forward_sync_maps(const std::vector<ad::Var>& sentence_cells,
                                       const SyncBranch& branch);

// Mirror image: the pass starts from the last sentence and the suppression
// accumulates over the suffix.
std::vector<ad::Var> reverse_sync_maps(const std::vector<ad::Var>& sentence_cells,
                                       const SyncBranch& branch);

// The brightest valid cell becomes the target of a soft label map. Plain
// data in and out; nothing here carries gradient.
ScoreMap pseudo_label_from_map(const ScoreMap& P, double theta_min, double theta_max);

// Binary cross-entropy between one sentence's predicted cell scores and a
// soft target map, summed (not averaged) over the valid cells. Predictions
// are clipped away from 0 and 1 so the logs stay finite.
ad::Var bce_map_alignment(const ad::Var& p_cells, const ScoreMap& gt,
                          double eps = 1e-7);

// Paragraph-level term: the per-sentence alignments added up.
ad::Var bce_alignment_loss(const std::vector<ad::Var>& p_cells,
                           const std::vector<ScoreMap>& gt, double eps = 1e-7);

ad::Var time_loss(const ad::Var& forward_term, const ad::Var& reverse_term);

}  // namespace vprg

#endif  // VPRG_GROUNDING_TEMPORAL_HPP_
