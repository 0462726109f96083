#include "vprg/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace vprg {

namespace {

std::size_t mlp_width(const AttentionConfig& cfg) {
  return cfg.mlp_hidden == 0 ? 2 * cfg.dim : cfg.mlp_hidden;
}

void check_cfg(const AttentionConfig& cfg) {
  if (cfg.dim == 0 || cfg.heads == 0 || cfg.dim % cfg.heads != 0)
    throw std::invalid_argument("AttentionConfig: heads must divide dim");
  if (cfg.max_len == 0) throw std::invalid_argument("AttentionConfig: max_len must be positive");
}

ad::Var with_positions(const ad::Var& x, const ad::Var& table, const AttentionConfig& cfg) {
  if (x.value().rank() != 2 || x.value().cols() != cfg.dim)
    throw std::invalid_argument("transformer: input width mismatch");
  const std::size_t n = x.value().rows();
  if (n > cfg.max_len) throw std::invalid_argument("transformer: sequence exceeds max_len");
  if (!cfg.use_positional) return x;
  return ad::add(x, ad::slice_rows(table, 0, n));
}

}  // namespace

TransformerEncoder::AttnBlock TransformerEncoder::make_attn(std::size_t dim,
                                                            std::mt19937_64& rng) {
  AttnBlock b;
  b.ln_g = ad::Var::param(Tensor::full({1, dim}, 1.0));
  b.ln_b = ad::Var::param(Tensor::zeros({1, dim}));
  b.wq = ad::Var::param(init_xavier({dim, dim}, rng));
  b.bq = ad::Var::param(Tensor::zeros({1, dim}));
  b.wk = ad::Var::param(init_xavier({dim, dim}, rng));
  b.bk = ad::Var::param(Tensor::zeros({1, dim}));
  b.wv = ad::Var::param(init_xavier({dim, dim}, rng));
  b.bv = ad::Var::param(Tensor::zeros({1, dim}));
  b.wo = ad::Var::param(init_xavier({dim, dim}, rng));
  b.bo = ad::Var::param(Tensor::zeros({1, dim}));
  return b;
}

TransformerEncoder::MlpBlock TransformerEncoder::make_mlp(std::size_t dim, std::size_t hidden,
                                                          std::mt19937_64& rng) {
  MlpBlock b;
  b.ln_g = ad::Var::param(Tensor::full({1, dim}, 1.0));
  b.ln_b = ad::Var::param(Tensor::zeros({1, dim}));
  b.w1 = ad::Var::param(init_xavier({dim, hidden}, rng));
  b.b1 = ad::Var::param(Tensor::zeros({1, hidden}));
  b.w2 = ad::Var::param(init_xavier({hidden, dim}, rng));
  b.b2 = ad::Var::param(Tensor::zeros({1, dim}));
  return b;
}

ad::Var TransformerEncoder::run_attn(const AttnBlock& blk, std::size_t heads,
                                     const ad::Var& q_in, const ad::Var& kv_in) {
  const std::size_t dim = blk.wq.value().rows();
  const std::size_t dh = dim / heads;
  ad::Var q = ad::linear(q_in, blk.wq, blk.bq);
  ad::Var k = ad::linear(kv_in, blk.wk, blk.bk);
  ad::Var v = ad::linear(kv_in, blk.wv, blk.bv);
  std::vector<ad::Var> ctx(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
    ad::Var kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
    ad::Var vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
    ad::Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    ctx[h] = ad::matmul(att, vh);
  }
  return ad::linear(ad::concat_cols(ctx), blk.wo, blk.bo);
}

ad::Var TransformerEncoder::run_mlp(const MlpBlock& blk, const ad::Var& x) {
  return ad::linear(ad::relu(ad::linear(x, blk.w1, blk.b1)), blk.w2, blk.b2);
}

void TransformerEncoder::register_attn(const AttnBlock& blk, ParamRegistry& reg,
                                       const std::string& p) {
  reg.add(p + ".ln_g", blk.ln_g);
  reg.add(p + ".ln_b", blk.ln_b);
  reg.add(p + ".wq", blk.wq);
  reg.add(p + ".bq", blk.bq);
  reg.add(p + ".wk", blk.wk);
  reg.add(p + ".bk", blk.bk);
  reg.add(p + ".wv", blk.wv);
  reg.add(p + ".bv", blk.bv);
  reg.add(p + ".wo", blk.wo);
  reg.add(p + ".bo", blk.bo);
}

void TransformerEncoder::register_mlp(const MlpBlock& blk, ParamRegistry& reg,
                                      const std::string& p) {
  reg.add(p + ".ln_g", blk.ln_g);
  reg.add(p + ".ln_b", blk.ln_b);
  reg.add(p + ".w1", blk.w1);
  reg.add(p + ".b1", blk.b1);
  reg.add(p + ".w2", blk.w2);
  reg.add(p + ".b2", blk.b2);
}

TransformerEncoder::TransformerEncoder(AttentionConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  check_cfg(cfg_);
  std::mt19937_64 rng(seed);
  layers_.resize(cfg_.depth);
  for (auto& layer : layers_) {
    layer.attn = make_attn(cfg_.dim, rng);
    layer.mlp = make_mlp(cfg_.dim, mlp_width(cfg_), rng);
  }
  final_g_ = ad::Var::param(Tensor::full({1, cfg_.dim}, 1.0));
  final_b_ = ad::Var::param(Tensor::zeros({1, cfg_.dim}));
  positional_ = ad::Var::param(init_normal({cfg_.max_len, cfg_.dim}, rng, 0.02));
}

ad::Var TransformerEncoder::encode(const ad::Var& x) const {
  if (layers_.empty()) throw std::logic_error("TransformerEncoder: default-constructed");
  ad::Var h = with_positions(x, positional_, cfg_);
  for (const Layer& layer : layers_) {
    ad::Var normed = ad::layer_norm_rows(h, layer.attn.ln_g, layer.attn.ln_b);
    h = ad::add(h, run_attn(layer.attn, cfg_.heads, normed, normed));
    h = ad::add(h, run_mlp(layer.mlp, ad::layer_norm_rows(h, layer.mlp.ln_g, layer.mlp.ln_b)));
  }
  return ad::layer_norm_rows(h, final_g_, final_b_);
}

void TransformerEncoder::register_params(ParamRegistry& reg, const std::string& prefix) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    register_attn(layers_[l].attn, reg, p + ".attn");
    register_mlp(layers_[l].mlp, reg, p + ".mlp");
  }
  reg.add(prefix + ".final_g", final_g_);
  reg.add(prefix + ".final_b", final_b_);
  reg.add(prefix + ".pos", positional_);
}

TransformerDecoder::TransformerDecoder(AttentionConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  check_cfg(cfg_);
  std::mt19937_64 rng(seed);
  layers_.resize(cfg_.depth);
  for (auto& layer : layers_) {
    layer.self_attn = TransformerEncoder::make_attn(cfg_.dim, rng);
    layer.cross_attn = TransformerEncoder::make_attn(cfg_.dim, rng);
    layer.mlp = TransformerEncoder::make_mlp(cfg_.dim, mlp_width(cfg_), rng);
  }
  final_g_ = ad::Var::param(Tensor::full({1, cfg_.dim}, 1.0));
  final_b_ = ad::Var::param(Tensor::zeros({1, cfg_.dim}));
  positional_ = ad::Var::param(init_normal({cfg_.max_len, cfg_.dim}, rng, 0.02));
}

ad::Var TransformerDecoder::decode(const ad::Var& target, const ad::Var& memory) const {
  if (layers_.empty()) throw std::logic_error("TransformerDecoder: default-constructed");
  if (memory.value().rank() != 2 || memory.value().cols() != cfg_.dim)
    throw std::invalid_argument("TransformerDecoder: memory width mismatch");
  ad::Var h = with_positions(target, positional_, cfg_);
  for (const Layer& layer : layers_) {
    ad::Var n1 = ad::layer_norm_rows(h, layer.self_attn.ln_g, layer.self_attn.ln_b);
    h = ad::add(h, TransformerEncoder::run_attn(layer.self_attn, cfg_.heads, n1, n1));
    ad::Var n2 = ad::layer_norm_rows(h, layer.cross_attn.ln_g, layer.cross_attn.ln_b);
    h = ad::add(h, TransformerEncoder::run_attn(layer.cross_attn, cfg_.heads, n2, memory));
    h = ad::add(h, TransformerEncoder::run_mlp(
                       layer.mlp, ad::layer_norm_rows(h, layer.mlp.ln_g, layer.mlp.ln_b)));
  }
  return ad::layer_norm_rows(h, final_g_, final_b_);
}

void TransformerDecoder::register_params(ParamRegistry& reg, const std::string& prefix) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    TransformerEncoder::register_attn(layers_[l].self_attn, reg, p + ".self");
    TransformerEncoder::register_attn(layers_[l].cross_attn, reg, p + ".cross");
    TransformerEncoder::register_mlp(layers_[l].mlp, reg, p + ".mlp");
  }
  reg.add(prefix + ".final_g", final_g_);
  reg.add(prefix + ".final_b", final_b_);
  reg.add(prefix + ".pos", positional_);
}

}  // namespace vprg
