#include "vprg/retrieval.hpp"

#include <cmath>
#include <stdexcept>

#include "vprg/errors.hpp"

namespace vprg {

ClassTokenAggregator ClassTokenAggregator::make(const TransformerEncoder& encoder,
                                                std::uint64_t seed_init) {
  std::mt19937_64 rng(seed_init);
  ClassTokenAggregator agg;
  agg.seed = ad::Var::param(init_normal({1, encoder.config().dim}, rng, 0.02));
  agg.encoder = encoder;
  return agg;
}

ad::Var aggregate_global(const ad::Var& sequence, const ClassTokenAggregator& agg) {
  if (sequence.value().rank() != 2 || sequence.value().rows() == 0)
    throw std::invalid_argument("aggregate_global: non-empty rank-2 sequence required");
  if (sequence.value().cols() != agg.encoder.config().dim)
    throw std::invalid_argument("aggregate_global: sequence width mismatch");
  ad::Var with_seed = ad::concat_rows({agg.seed, sequence});
  return ad::row(agg.encoder.encode(with_seed), 0);
}

ad::Var cosine_similarity_matrix(const ad::Var& text_tokens, const ad::Var& video_tokens) {
  if (text_tokens.value().cols() != video_tokens.value().cols())
    throw std::invalid_argument("cosine_similarity_matrix: width mismatch");
  auto check_norms = [](const Tensor& t, const char* side) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
      double sq = 0.0;
      for (std::size_t c = 0; c < t.cols(); ++c) sq += t.at(i, c) * t.at(i, c);
      if (sq == 0.0)
        throw NumericError(std::string("cosine_similarity_matrix: zero-norm ") + side +
                           " row " + std::to_string(i));
    }
  };
  check_norms(text_tokens.value(), "text");
  check_norms(video_tokens.value(), "video");
  return ad::matmul_nt(ad::rows_l2_normalize(text_tokens), ad::rows_l2_normalize(video_tokens));
}

RetrievalHyper RetrievalHyper::make(double initial_scale) {
  if (initial_scale <= 0.0) throw std::invalid_argument("RetrievalHyper: scale must be positive");
  RetrievalHyper h;
  h.log_scale = ad::Var::param(Tensor({1, 1}, {std::log(initial_scale)}));
  return h;
}

namespace {

void check_square(const ad::Var& S, const char* op) {
  if (S.value().rank() != 2 || S.value().rows() != S.value().cols() || S.value().rows() == 0)
    throw std::invalid_argument(std::string(op) + ": square similarity matrix required");
}

// One InfoNCE direction: mean over rows of (logsumexp(row) - diagonal).
ad::Var nce_direction(const ad::Var& Z) {
  const std::size_t B = Z.value().rows();
  ad::Var gap = ad::sub(ad::logsumexp_rows(Z), ad::diag(Z));
  return ad::scale(ad::sum_all(gap), 1.0 / static_cast<double>(B));
}

// One ranking direction: rows are anchors, diagonal is the positive.
ad::Var triplet_direction(const ad::Var& S, double margin) {
  const std::size_t B = S.value().rows();
  std::vector<std::size_t> hardest(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = b == 0 ? 1 : 0;
    for (std::size_t z = 0; z < B; ++z) {
      if (z == b) continue;
      if (S.value().at(b, z) > S.value().at(b, best)) best = z;
    }
    hardest[b] = best;
  }
  ad::Var neg = ad::pick_per_row(S, hardest);
  ad::Var hinge = ad::relu(ad::add_const(ad::sub(neg, ad::diag(S)), margin));
  return ad::scale(ad::sum_all(hinge), 1.0 / static_cast<double>(B));
}

}  // namespace

ad::Var infonce_loss(const ad::Var& S, const ad::Var& scale) {
  check_square(S, "infonce_loss");
  if (scale.value().numel() != 1) throw std::invalid_argument("infonce_loss: scalar scale");
  ad::Var Z = ad::mul_scalar(S, scale);
  return ad::add(nce_direction(Z), nce_direction(ad::transpose(Z)));
}

ad::Var triplet_loss(const ad::Var& S, double margin) {
  check_square(S, "triplet_loss");
  if (margin <= 0.0 || margin >= 1.0)
    throw std::invalid_argument("triplet_loss: margin must lie in (0,1)");
  if (S.value().rows() == 1) return ad::Var::constant(Tensor({1, 1}, {0.0}));
  return ad::add(triplet_direction(S, margin),
                 triplet_direction(ad::transpose(S), margin));
}

CmrLoss cmr_loss(const ad::Var& S, const RetrievalHyper& hyper) {
  CmrLoss out;
  out.triplet = triplet_loss(S, hyper.margin);
  out.infonce = infonce_loss(S, hyper.scale());
  out.total = ad::add(out.triplet, ad::scale(out.infonce, hyper.nce_weight));
  return out;
}

}  // namespace vprg
