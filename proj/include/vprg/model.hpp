#ifndef VPRG_MODEL_HPP_
#define VPRG_MODEL_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vprg/attention.hpp"
#include "vprg/autograd.hpp"
#include "vprg/encoders.hpp"
#include "vprg/grounding_global.hpp"
#include "vprg/grounding_local.hpp"
#include "vprg/grounding_temporal.hpp"
#include "vprg/moment_map.hpp"
#include "vprg/params.hpp"
#include "vprg/retrieval.hpp"

namespace vprg {

struct ModelConfig {
  std::size_t vocab_size = 0;   // includes the two reserved ids
  std::size_t video_width = 0;  // raw per-segment feature width
  std::size_t dim = 32;         // shared width for both modalities
  std::size_t K = 16;           // score map side
  std::size_t top_q = 3;
  std::size_t heads = 2;
  std::size_t depth = 1;
  std::size_t max_sentences = 32;
  double margin = 0.2;
  double retrieval_nce_weight = 0.04;
  double global_nce_weight = 0.04;
  double initial_similarity_scale = 10.0;
  double label_theta_min = 0.5;
  double label_theta_max = 1.0;
  double unmasked_weight = 1.0;

  void validate() const;
};

struct VideoInput {
  std::string id;
  double duration = 0.0;
  Tensor segments;  // K x video_width
};

struct ParagraphInput {
  std::string id;
  std::vector<std::vector<std::size_t>> sentences;  // token ids
};

struct LossBreakdown {
  ad::Var retrieval;  // margin + contrastive pair on the token similarities
  ad::Var local;      // reconstruction + candidate ranking
  ad::Var global;     // same pair on the grounded-token similarities
  ad::Var time;       // bidirectional order-aware alignment
  ad::Var coupling;   // grounded similarities distilled into retrieval ones
  ad::Var total;      // unweighted sum of the five
};

// The whole network. Training runs every branch; the inference entry points
// only touch the retrieval encoders and the main score head, so the
// auxiliary branches can be dropped after training without changing results.
class DmrJrgModel {
 public:
  DmrJrgModel() = default;
  // word_vectors, when given, seeds the embedding table (vocab_size x dim)
  // the way a pretrained word model would; it stays trainable.
  DmrJrgModel(const ModelConfig& cfg, std::uint64_t seed,
              const Tensor* word_vectors = nullptr);

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  // One batch of matched (video, paragraph) pairs; row b of each vector is
  // one pair. The mask seed drives the word masking for reconstruction.
  LossBreakdown forward_train(const std::vector<VideoInput>& videos,
                              const std::vector<ParagraphInput>& paragraphs,
                              std::uint64_t mask_seed) const;

  Tensor video_token(const VideoInput& video) const;
  Tensor paragraph_token(const ParagraphInput& paragraph) const;
  std::vector<ScoreMap> ground_maps(const ParagraphInput& paragraph,
                                    const VideoInput& video) const;

  // XXX-DIAG temporary instrumentation
  struct SyncDebug {
    std::vector<ScoreMap> fwd, rev, main;
    std::vector<Tensor> refined_norms;  // K x K per sentence
  };
  SyncDebug sync_debug(const ParagraphInput& paragraph, const VideoInput& video) const;

 private:
  struct EncodedVideo {
    ad::Var token;     // 1 x dim
    ad::Var segments;  // K x dim
  };
  struct EncodedParagraph {
    ad::Var token;      // 1 x dim
    ad::Var sentences;  // M x dim, after cross-sentence aggregation
    ad::Var summaries;  // M x dim, straight from the recurrent encoder
  };

  EncodedVideo encode_video(const VideoInput& video) const;
  EncodedParagraph encode_paragraph(const ParagraphInput& paragraph) const;
  void check_video(const VideoInput& video) const;
  void check_paragraph(const ParagraphInput& paragraph) const;

  ModelConfig cfg_;
  ad::Var embeddings_;  // vocab_size x dim
  ad::Var video_proj_w_, video_proj_b_;
  BiLstmEncoder sentence_rnn_;
  TransformerEncoder video_encoder_;  // shared with the grounded readout
  TransformerEncoder text_encoder_;
  ClassTokenAggregator video_agg_, text_agg_, grounded_agg_;
  FusionParams fusion_;
  TanStack tan_;
  PredictionLayer score_head_;
  Reconstructor reconstructor_;
  RewardSchedule rewards_;
  CmffWeights cmff_;
  TokenFusion token_fusion_;
  SyncBranch sync_forward_, sync_reverse_;
  RetrievalHyper retrieval_hyper_, global_hyper_;
  std::vector<std::pair<std::size_t, std::size_t>> spans_;  // per cell, inclusive rows
  ParamRegistry params_;
};

}  // namespace vprg

#endif  // VPRG_MODEL_HPP_
