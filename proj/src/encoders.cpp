#include "vprg/encoders.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace vprg {

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<mask>");
}

std::size_t Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const std::size_t id = tokens_.size();
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::size_t Vocabulary::require(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw std::invalid_argument("Vocabulary: unknown token " + token);
  return it->second;
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(token) > 0; }

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("Vocabulary::save: cannot open " + path);
  for (const std::string& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("Vocabulary::load: cannot open " + path);
  Vocabulary v;
  std::string line;
  std::size_t idx = 0;
  while (std::getline(in, line)) {
    if (idx < 2) {
      if (line != v.tokens_[idx])
        throw std::runtime_error("Vocabulary::load: reserved token mismatch in " + path);
    } else {
      if (v.contains(line))
        throw std::runtime_error("Vocabulary::load: duplicate token " + line);
      v.add(line);
    }
    ++idx;
  }
  if (idx < 2) throw std::runtime_error("Vocabulary::load: missing reserved tokens in " + path);
  return v;
}

Tensor embed_words(const std::vector<std::size_t>& ids, const Tensor& table) {
  const std::size_t d = table.cols();
  Tensor out({ids.size(), d});
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] >= table.rows()) throw std::invalid_argument("embed_words: id out of vocabulary");
    std::copy(table.data() + ids[j] * d, table.data() + (ids[j] + 1) * d, out.data() + j * d);
  }
  return out;
}

ad::Var embed_words(const std::vector<std::size_t>& ids, const ad::Var& table) {
  for (std::size_t id : ids)
    if (id >= table.value().rows())
      throw std::invalid_argument("embed_words: id out of vocabulary");
  return ad::select_rows(table, ids);
}

MaskedSentence mask_sentence(const std::vector<std::size_t>& ids, std::uint64_t seed) {
  if (ids.empty()) throw std::invalid_argument("mask_sentence: empty sentence");
  const std::size_t J = ids.size();
  const std::size_t n_mask = (J + 2) / 3;  // ceil(J/3)

  std::vector<std::size_t> order(J);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < n_mask; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, J - 1);
    std::swap(order[k], order[pick(rng)]);
  }

  MaskedSentence out;
  out.original_ids = ids;
  out.masked_ids = ids;
  out.mask_positions.assign(order.begin(), order.begin() + n_mask);
  std::sort(out.mask_positions.begin(), out.mask_positions.end());
  for (std::size_t p : out.mask_positions) out.masked_ids[p] = Vocabulary::kMaskId;
  return out;
}

BiLstmEncoder::BiLstmEncoder(std::size_t width, std::uint64_t seed) : width_(width) {
  if (width == 0) throw std::invalid_argument("BiLstmEncoder: width must be positive");
  std::mt19937_64 rng(seed);
  fwd_ = make_cell(rng, 0.35);
  bwd_ = make_cell(rng, 0.25);
  std::normal_distribution<double> jitter(0.0, 0.01);
  Tensor wo = Tensor::zeros({width_, width_});
  for (std::size_t r = 0; r < width_; ++r) wo.at(r, r) = 1.0;
  for (std::size_t i = 0; i < wo.numel(); ++i) wo.data()[i] += jitter(rng);
  w_o_ = ad::Var::param(std::move(wo));
  b_o_ = ad::Var::param(Tensor::zeros({1, width_}));
}

BiLstmEncoder::Cell BiLstmEncoder::make_cell(std::mt19937_64& rng, double carry) const {
  // Near-diagonal start: gates rest at their bias points, the candidate block
  // carries the input through, and the state decays under the open forget
  // gate. The summary then begins life close to a decayed sum of the word
  // vectors rather than a scramble of them; the two directions get different
  // carry weights so they stay distinguishable.
  std::normal_distribution<double> jitter(0.0, 0.01);
  Cell c;
  Tensor wx = Tensor::zeros({width_, 4 * width_});
  for (std::size_t r = 0; r < width_; ++r) wx.at(r, 2 * width_ + r) = carry;
  for (std::size_t i = 0; i < wx.numel(); ++i) wx.data()[i] += jitter(rng);
  c.w_x = ad::Var::param(std::move(wx));
  Tensor wh = Tensor::zeros({width_, 4 * width_});
  for (std::size_t i = 0; i < wh.numel(); ++i) wh.data()[i] = jitter(rng);
  c.w_h = ad::Var::param(std::move(wh));
  Tensor b = Tensor::zeros({1, 4 * width_});
  for (std::size_t i = width_; i < 2 * width_; ++i) b[i] = 1.0;  // open forget gates
  c.b = ad::Var::param(std::move(b));
  return c;
}

std::vector<ad::Var> BiLstmEncoder::run(const Cell& cell, const ad::Var& emb,
                                        bool reverse) const {
  const std::size_t J = emb.value().rows(), H = width_;
  std::vector<ad::Var> states(J);
  ad::Var h = ad::Var::constant(Tensor::zeros({1, H}));
  ad::Var c = ad::Var::constant(Tensor::zeros({1, H}));
  for (std::size_t step = 0; step < J; ++step) {
    const std::size_t j = reverse ? J - 1 - step : step;
    ad::Var z = ad::add(ad::add(ad::matmul(ad::row(emb, j), cell.w_x), ad::matmul(h, cell.w_h)),
                        cell.b);
    ad::Var gi = ad::sigmoid(ad::slice_cols(z, 0, H));
    ad::Var gf = ad::sigmoid(ad::slice_cols(z, H, 2 * H));
    ad::Var gc = ad::tanh_op(ad::slice_cols(z, 2 * H, 3 * H));
    ad::Var go = ad::sigmoid(ad::slice_cols(z, 3 * H, 4 * H));
    c = ad::add(ad::mul(gf, c), ad::mul(gi, gc));
    h = ad::mul(go, ad::tanh_op(c));
    states[j] = h;
  }
  return states;
}

SentenceEncoding BiLstmEncoder::encode(const ad::Var& embeddings) const {
  if (embeddings.value().rank() != 2 || embeddings.value().rows() == 0)
    throw std::invalid_argument("BiLstmEncoder::encode: empty sentence");
  if (embeddings.value().cols() != width_)
    throw std::invalid_argument("BiLstmEncoder::encode: embedding width mismatch");
  const std::size_t J = embeddings.value().rows();

  std::vector<ad::Var> hf = run(fwd_, embeddings, false);
  std::vector<ad::Var> hb = run(bwd_, embeddings, true);

  std::vector<ad::Var> summed(J);
  for (std::size_t j = 0; j < J; ++j) summed[j] = ad::add(hf[j], hb[j]);

  SentenceEncoding out;
  out.per_word = ad::linear(ad::concat_rows(summed), w_o_, b_o_);
  out.summary = ad::linear(ad::add(hf[J - 1], hb[0]), w_o_, b_o_);
  return out;
}

void BiLstmEncoder::register_params(ParamRegistry& reg, const std::string& prefix) const {
  reg.add(prefix + ".fwd.w_x", fwd_.w_x);
  reg.add(prefix + ".fwd.w_h", fwd_.w_h);
  reg.add(prefix + ".fwd.b", fwd_.b);
  reg.add(prefix + ".bwd.w_x", bwd_.w_x);
  reg.add(prefix + ".bwd.w_h", bwd_.w_h);
  reg.add(prefix + ".bwd.b", bwd_.b);
  reg.add(prefix + ".w_o", w_o_);
  reg.add(prefix + ".b_o", b_o_);
}

Tensor pool_segment_frames(const Tensor& frames, std::size_t K) {
  if (K == 0) throw std::invalid_argument("pool_segment_frames: K must be positive");
  const std::size_t T = frames.rows(), d = frames.cols();
  if (T < K) throw std::invalid_argument("pool_segment_frames: fewer frames than segments");
  Tensor out({K, d});
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t lo = k * T / K, hi = (k + 1) * T / K;
    for (std::size_t r = lo; r < hi; ++r)
      for (std::size_t c = 0; c < d; ++c) out.at(k, c) += frames.at(r, c);
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t c = 0; c < d; ++c) out.at(k, c) *= inv;
  }
  return out;
}

}  // namespace vprg
