#ifndef VPRG_ENCODERS_HPP_
#define VPRG_ENCODERS_HPP_

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vprg/autograd.hpp"
#include "vprg/params.hpp"

namespace vprg {

// Token ids are dense; ids 0 and 1 are reserved for padding and the mask
// token, so corpus words always start at id 2.
class Vocabulary {
 public:
  static constexpr std::size_t kPadId = 0;
  static constexpr std::size_t kMaskId = 1;

  Vocabulary();

  std::size_t add(const std::string& token);      // returns existing id if present
  std::size_t require(const std::string& token) const;
  bool contains(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::string& path) const;       // newline-delimited token list
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Row lookup into an embedding table; the Var overload participates in
// backprop through the table.
Tensor embed_words(const std::vector<std::size_t>& ids, const Tensor& table);
ad::Var embed_words(const std::vector<std::size_t>& ids, const ad::Var& table);

struct MaskedSentence {
  std::vector<std::size_t> original_ids;
  std::vector<std::size_t> masked_ids;
  std::vector<std::size_t> mask_positions;  // sorted, ceil(J/3) of them
};

MaskedSentence mask_sentence(const std::vector<std::size_t>& ids, std::uint64_t seed);

struct SentenceEncoding {
  ad::Var per_word;  // J x d
  ad::Var summary;   // 1 x d
};

// Bidirectional LSTM over word embeddings. Forward and backward hidden
// states are summed and linearly projected back to the embedding width; the
// summary reads out the final state of each direction the same way.
class BiLstmEncoder {
 public:
  BiLstmEncoder() = default;
  BiLstmEncoder(std::size_t width, std::uint64_t seed);

  SentenceEncoding encode(const ad::Var& embeddings) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
  std::size_t width() const { return width_; }

 private:
  struct Cell {
    ad::Var w_x;  // d x 4d, gate order [input, forget, candidate, output]
    ad::Var w_h;  // d x 4d
    ad::Var b;    // 1 x 4d
  };

  Cell make_cell(std::mt19937_64& rng, double carry) const;
  std::vector<ad::Var> run(const Cell& cell, const ad::Var& emb, bool reverse) const;

  std::size_t width_ = 0;
  Cell fwd_, bwd_;
  ad::Var w_o_, b_o_;
};

// Mean-pool T frame rows into K contiguous near-equal groups
// (group k covers rows [floor(kT/K), floor((k+1)T/K))).
Tensor pool_segment_frames(const Tensor& frames, std::size_t K);

}  // namespace vprg

#endif  // VPRG_ENCODERS_HPP_
