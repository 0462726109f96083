#ifndef VPRG_RETRIEVAL_HPP_
#define VPRG_RETRIEVAL_HPP_

#include <cstdint>

#include "vprg/attention.hpp"
#include "vprg/autograd.hpp"

namespace vprg {

// A learnable seed token prepended to a sequence; the encoder output at the
// seed position is the sequence's global representation. The encoder handle
// is a shared-parameter copy, so several aggregators can ride one stack.
struct ClassTokenAggregator {
  ad::Var seed;  // 1 x d
  TransformerEncoder encoder;

  static ClassTokenAggregator make(const TransformerEncoder& encoder, std::uint64_t seed_init);
};

ad::Var aggregate_global(const ad::Var& sequence, const ClassTokenAggregator& agg);

// Entry (b, z) = cosine of text row b against video row z. Throws
// NumericError on any zero-norm row.
ad::Var cosine_similarity_matrix(const ad::Var& text_tokens, const ad::Var& video_tokens);

// Temperature is learned through log_scale (scale = exp(log_scale)), which
// keeps it positive without constraints.
struct RetrievalHyper {
  ad::Var log_scale;
  double margin = 0.2;
  double nce_weight = 0.04;

  static RetrievalHyper make(double initial_scale = 10.0);
  ad::Var scale() const { return ad::exp_op(log_scale); }
};

// Symmetric InfoNCE over a square similarity matrix: softmax cross-entropy
// toward the diagonal, text-to-video plus video-to-text.
ad::Var infonce_loss(const ad::Var& S, const ad::Var& scale);

// Margin ranking against the hardest in-batch negative of each anchor, both
// directions, averaged over the batch. Zero for a single-element batch.
ad::Var triplet_loss(const ad::Var& S, double margin);

struct CmrLoss {
  ad::Var total;
  ad::Var triplet;
  ad::Var infonce;
};

CmrLoss cmr_loss(const ad::Var& S, const RetrievalHyper& hyper);

}  // namespace vprg

#endif  // VPRG_RETRIEVAL_HPP_
