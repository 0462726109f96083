#ifndef VPRG_GROUNDING_GLOBAL_HPP_
#define VPRG_GROUNDING_GLOBAL_HPP_

#include <cstdint>
#include <vector>

#include "vprg/autograd.hpp"
#include "vprg/params.hpp"
#include "vprg/retrieval.hpp"

namespace vprg {

// Fixed convex weights over a sentence's top-Q candidate features.
struct CmffWeights {
  std::vector<double> w{0.4, 0.3, 0.3};

  void validate() const;
};

// Weighted sum of the Q rows: one grounded feature per sentence.
ad::Var cmff_fuse(const ad::Var& top_feats, const CmffWeights& weights);

// Class-token readout over the grounded per-sentence features. The caller
// passes an aggregator whose encoder is a shared-parameter copy of the
// video-side stack, so both tokens move together under one optimizer step.
ad::Var aggregate_grounded_global(const ad::Var& grounded_feats,
                                  const ClassTokenAggregator& agg);

// Linear map over the concatenation of the plain video token and the
// grounded token.
struct TokenFusion {
  ad::Var w;  // 2d x d
  ad::Var b;  // 1 x d

  static TokenFusion make(std::size_t d, std::uint64_t seed);
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

ad::Var fuse_class_tokens(const ad::Var& video_token, const ad::Var& grounded_token,
                          const TokenFusion& fusion);

// Same margin + contrastive pair as the retrieval branch, applied to the
// fused-token similarity matrix. The hyper carries this branch's own
// temperature and contrastive weight.
CmrLoss global_loss(const ad::Var& S, const RetrievalHyper& hyper);

// Mean squared gap between the two similarity matrices over all entries.
// The grounded matrix acts as a fixed target: unless symmetric is set, no
// gradient flows into its producers.
ad::Var grrm_mse(const ad::Var& retrieval_sim, const ad::Var& grounded_sim,
                 bool symmetric = false);

}  // namespace vprg

#endif  // VPRG_GROUNDING_GLOBAL_HPP_
