#ifndef VPRG_ATTENTION_HPP_
#define VPRG_ATTENTION_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "vprg/autograd.hpp"
#include "vprg/params.hpp"

namespace vprg {

struct AttentionConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t depth = 2;
  std::size_t mlp_hidden = 0;  // 0 means 2*dim
  std::size_t max_len = 256;
  bool use_positional = true;  // learned position table added to the input
};

// Pre-norm self-attention encoder. Instances are copyable handles: copies
// share parameters, which is how the grounding branch reuses the retrieval
// video encoder.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(AttentionConfig cfg, std::uint64_t seed);

  ad::Var encode(const ad::Var& x) const;  // N x dim -> N x dim
  void register_params(ParamRegistry& reg, const std::string& prefix) const;

  const AttentionConfig& config() const { return cfg_; }
  void set_use_positional(bool on) { cfg_.use_positional = on; }

 private:
  friend class TransformerDecoder;

  struct AttnBlock {
    ad::Var ln_g, ln_b;
    ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct MlpBlock {
    ad::Var ln_g, ln_b;
    ad::Var w1, b1, w2, b2;
  };
  struct Layer {
    AttnBlock attn;
    MlpBlock mlp;
  };

  static AttnBlock make_attn(std::size_t dim, std::mt19937_64& rng);
  static MlpBlock make_mlp(std::size_t dim, std::size_t hidden, std::mt19937_64& rng);
  static ad::Var run_attn(const AttnBlock& blk, std::size_t heads, const ad::Var& q_in,
                          const ad::Var& kv_in);
  static ad::Var run_mlp(const MlpBlock& blk, const ad::Var& x);
  static void register_attn(const AttnBlock& blk, ParamRegistry& reg, const std::string& p);
  static void register_mlp(const MlpBlock& blk, ParamRegistry& reg, const std::string& p);

  AttentionConfig cfg_;
  std::vector<Layer> layers_;
  ad::Var final_g_, final_b_;
  ad::Var positional_;  // max_len x dim
};

// Pre-norm decoder with self-attention, cross-attention over an encoder
// output, and an MLP per layer. Attention is bidirectional: targets are
// reconstructed jointly, not generated left to right.
class TransformerDecoder {
 public:
  TransformerDecoder() = default;
  TransformerDecoder(AttentionConfig cfg, std::uint64_t seed);

  ad::Var decode(const ad::Var& target, const ad::Var& memory) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;

  const AttentionConfig& config() const { return cfg_; }

 private:
  struct Layer {
    TransformerEncoder::AttnBlock self_attn;
    TransformerEncoder::AttnBlock cross_attn;
    TransformerEncoder::MlpBlock mlp;
  };

  AttentionConfig cfg_;
  std::vector<Layer> layers_;
  ad::Var final_g_, final_b_;
  ad::Var positional_;
};

}  // namespace vprg

#endif  // VPRG_ATTENTION_HPP_
