#include "vprg/grounding_global.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace vprg {

void CmffWeights::validate() const {
  if (w.empty()) throw std::invalid_argument("CmffWeights: empty");
  double sum = 0.0;
  for (double x : w) {
    if (!(x >= 0.0)) throw std::invalid_argument("CmffWeights: negative weight");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("CmffWeights: weights must sum to 1");
}

ad::Var cmff_fuse(const ad::Var& top_feats, const CmffWeights& weights) {
  weights.validate();
  const Tensor& f = top_feats.value();
  if (f.shape().size() != 2 || f.shape()[0] != weights.w.size())
    throw std::invalid_argument("cmff_fuse: need one weight per feature row");
  Tensor row = Tensor::zeros({1, weights.w.size()});
  for (std::size_t q = 0; q < weights.w.size(); ++q) row.at(0, q) = weights.w[q];
  return ad::matmul(ad::Var::constant(row), top_feats);
}

ad::Var aggregate_grounded_global(const ad::Var& grounded_feats,
                                  const ClassTokenAggregator& agg) {
  return aggregate_global(grounded_feats, agg);
}

TokenFusion TokenFusion::make(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TokenFusion f;
  f.w = ad::Var::param(init_xavier({2 * d, d}, rng));
  f.b = ad::Var::param(Tensor::zeros({1, d}));
  return f;
}

void TokenFusion::register_params(ParamRegistry& reg, const std::string& prefix) const {
  reg.add(prefix + ".w", w);
  reg.add(prefix + ".b", b);
}

ad::Var fuse_class_tokens(const ad::Var& video_token, const ad::Var& grounded_token,
                          const TokenFusion& fusion) {
  const Tensor& u = video_token.value();
  const Tensor& v = grounded_token.value();
  if (u.shape() != v.shape() || u.shape().size() != 2 || u.shape()[0] != 1)
    throw std::invalid_argument("fuse_class_tokens: tokens must be equal-width rows");
  if (fusion.w.value().shape()[0] != 2 * u.shape()[1])
    throw std::invalid_argument("fuse_class_tokens: fusion width mismatch");
  ad::Var cat = ad::concat_cols({video_token, grounded_token});
  return ad::linear(cat, fusion.w, fusion.b);
}

CmrLoss global_loss(const ad::Var& S, const RetrievalHyper& hyper) {
  CmrLoss out;
  out.infonce = infonce_loss(S, hyper.scale());
  out.triplet = triplet_loss(S, hyper.margin);
  out.total = ad::add(out.triplet, ad::scale(out.infonce, hyper.nce_weight));
  return out;
}

ad::Var grrm_mse(const ad::Var& retrieval_sim, const ad::Var& grounded_sim,
                 bool symmetric) {
  if (!retrieval_sim.value().same_shape(grounded_sim.value()))
    throw std::invalid_argument("grrm_mse: similarity shapes differ");
  ad::Var target = symmetric ? grounded_sim : ad::detach(grounded_sim);
  return ad::mean_all(ad::square(ad::sub(retrieval_sim, target)));
}

}  // namespace vprg
