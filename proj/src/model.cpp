#include "vprg/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace vprg {

void ModelConfig::validate() const {
  if (vocab_size < 3)
    throw std::invalid_argument("ModelConfig: vocabulary needs the reserved ids plus words");
  if (video_width == 0) throw std::invalid_argument("ModelConfig: video_width must be positive");
  if (dim == 0) throw std::invalid_argument("ModelConfig: dim must be positive");
  if (K < 2) throw std::invalid_argument("ModelConfig: map side must be at least 2");
  if (top_q < 2 || top_q > K * (K + 1) / 2)
    throw std::invalid_argument("ModelConfig: top_q must fit the candidate count");
  if (heads == 0 || dim % heads != 0)
    throw std::invalid_argument("ModelConfig: heads must divide dim");
  if (depth == 0) throw std::invalid_argument("ModelConfig: depth must be positive");
  if (max_sentences == 0) throw std::invalid_argument("ModelConfig: max_sentences must be positive");
  if (!(margin > 0.0 && margin < 1.0))
    throw std::invalid_argument("ModelConfig: margin must lie in (0,1)");
  if (retrieval_nce_weight < 0.0 || global_nce_weight < 0.0)
    throw std::invalid_argument("ModelConfig: contrastive weights must be non-negative");
  if (!(initial_similarity_scale > 0.0))
    throw std::invalid_argument("ModelConfig: similarity scale must be positive");
  if (!(label_theta_min >= 0.0 && label_theta_min < label_theta_max && label_theta_max <= 1.0))
    throw std::invalid_argument("ModelConfig: label thresholds must satisfy 0 <= min < max <= 1");
  if (unmasked_weight < 0.0 || unmasked_weight > 1.0)
    throw std::invalid_argument("ModelConfig: unmasked_weight must lie in [0,1]");
}

DmrJrgModel::DmrJrgModel(const ModelConfig& cfg, std::uint64_t seed,
                         const Tensor* word_vectors)
    : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  Tensor emb = init_normal({cfg_.vocab_size, cfg_.dim}, rng, 0.1);
  if (word_vectors != nullptr) {
    if (word_vectors->rank() != 2 || word_vectors->rows() != cfg_.vocab_size ||
        word_vectors->cols() != cfg_.dim)
      throw std::invalid_argument("DmrJrgModel: word vector table must be vocab_size x dim");
    if (!word_vectors->all_finite())
      throw std::invalid_argument("DmrJrgModel: word vector table must be finite");
    emb = *word_vectors;
  }
  embeddings_ = ad::Var::param(std::move(emb));
  video_proj_w_ = ad::Var::param(init_xavier({cfg_.video_width, cfg_.dim}, rng));
  video_proj_b_ = ad::Var::param(Tensor::zeros({1, cfg_.dim}));
  sentence_rnn_ = BiLstmEncoder(cfg_.dim, seed + 1);

  AttentionConfig acfg;
  acfg.dim = cfg_.dim;
  acfg.heads = cfg_.heads;
  acfg.depth = cfg_.depth;
  acfg.max_len = std::max({cfg_.K + 2, cfg_.max_sentences + 2, std::size_t{64}});
  video_encoder_ = TransformerEncoder(acfg, seed + 2);
  text_encoder_ = TransformerEncoder(acfg, seed + 3);
  video_agg_ = ClassTokenAggregator::make(video_encoder_, seed + 4);
  text_agg_ = ClassTokenAggregator::make(text_encoder_, seed + 5);
  grounded_agg_ = ClassTokenAggregator::make(video_encoder_, seed + 6);

  fusion_ = FusionParams::make(cfg_.dim, cfg_.video_width, cfg_.dim, seed + 7);
  tan_ = TanStack(cfg_.K, cfg_.dim, seed + 8);
  score_head_ = PredictionLayer::make(cfg_.dim, seed + 9);
  reconstructor_ = Reconstructor(cfg_.dim, cfg_.vocab_size, seed + 10);
  rewards_ = RewardSchedule::make(cfg_.top_q);
  token_fusion_ = TokenFusion::make(cfg_.dim, seed + 11);
  sync_forward_ = SyncBranch::make(cfg_.dim, seed + 12);
  sync_reverse_ = SyncBranch::make(cfg_.dim, seed + 13);

  retrieval_hyper_ = RetrievalHyper::make(cfg_.initial_similarity_scale);
  retrieval_hyper_.margin = cfg_.margin;
  retrieval_hyper_.nce_weight = cfg_.retrieval_nce_weight;
  global_hyper_ = RetrievalHyper::make(cfg_.initial_similarity_scale);
  global_hyper_.margin = cfg_.margin;
  global_hyper_.nce_weight = cfg_.global_nce_weight;

  for (const MomentIndex& m : enumerate_moments(cfg_.K))
    spans_.emplace_back(m.start_segment, m.end_segment);  // inclusive rows

  params_.add("embeddings", embeddings_);
  params_.add("video_proj.w", video_proj_w_);
  params_.add("video_proj.b", video_proj_b_);
  sentence_rnn_.register_params(params_, "sentence_rnn");
  video_encoder_.register_params(params_, "video_encoder");
  text_encoder_.register_params(params_, "text_encoder");
  params_.add("video_cls", video_agg_.seed);
  params_.add("text_cls", text_agg_.seed);
  params_.add("grounded_cls", grounded_agg_.seed);
  fusion_.register_params(params_, "fusion");
  tan_.register_params(params_, "tan");
  score_head_.register_params(params_, "score_head");
  reconstructor_.register_params(params_, "reconstructor");
  token_fusion_.register_params(params_, "token_fusion");
  sync_forward_.register_params(params_, "sync_forward");
  sync_reverse_.register_params(params_, "sync_reverse");
  params_.add("retrieval_log_scale", retrieval_hyper_.log_scale);
  params_.add("global_log_scale", global_hyper_.log_scale);
}

void DmrJrgModel::check_video(const VideoInput& video) const {
  const Tensor& s = video.segments;
  if (s.rank() != 2 || s.rows() != cfg_.K || s.cols() != cfg_.video_width)
    throw std::invalid_argument("video segments must be K x video_width");
  if (!(video.duration > 0.0)) throw std::invalid_argument("video duration must be positive");
  if (!s.all_finite()) throw std::invalid_argument("video segments must be finite");
}

void DmrJrgModel::check_paragraph(const ParagraphInput& paragraph) const {
  if (paragraph.sentences.empty())
    throw std::invalid_argument("paragraph needs at least one sentence");
  if (paragraph.sentences.size() > cfg_.max_sentences)
    throw std::invalid_argument("paragraph exceeds max_sentences");
  for (const auto& s : paragraph.sentences) {
    if (s.empty()) throw std::invalid_argument("sentences must be non-empty");
    for (std::size_t id : s)
      if (id < 2 || id >= cfg_.vocab_size)
        throw std::invalid_argument("token id outside the word range");
  }
}

DmrJrgModel::EncodedVideo DmrJrgModel::encode_video(const VideoInput& video) const {
  check_video(video);
  ad::Var proj =
      ad::linear(ad::Var::constant(video.segments), video_proj_w_, video_proj_b_);
  ad::Var enc = video_agg_.encoder.encode(ad::concat_rows({video_agg_.seed, proj}));
  EncodedVideo out;
  out.token = ad::slice_rows(enc, 0, 1);
  out.segments = proj;
  return out;
}

DmrJrgModel::EncodedParagraph DmrJrgModel::encode_paragraph(
    const ParagraphInput& paragraph) const {
  check_paragraph(paragraph);
  std::vector<ad::Var> summaries;
  for (const auto& sentence : paragraph.sentences) {
    ad::Var emb = embed_words(sentence, embeddings_);
    summaries.push_back(sentence_rnn_.encode(emb).summary);
  }
  ad::Var enc = text_agg_.encoder.encode(
      ad::concat_rows({text_agg_.seed, ad::concat_rows(summaries)}));
  EncodedParagraph out;
  out.token = ad::slice_rows(enc, 0, 1);
  out.sentences = ad::slice_rows(enc, 1, paragraph.sentences.size() + 1);
  out.summaries = ad::concat_rows(summaries);
  return out;
}

LossBreakdown DmrJrgModel::forward_train(const std::vector<VideoInput>& videos,
                                         const std::vector<ParagraphInput>& paragraphs,
                                         std::uint64_t mask_seed) const {
  if (videos.empty() || videos.size() != paragraphs.size())
    throw std::invalid_argument("forward_train: need matched video/paragraph rows");
  std::size_t B = videos.size();

  std::vector<ad::Var> text_tokens, video_tokens, fused_tokens, rank_rows;
  std::vector<ReconstructionTerm> recon_terms;
  ad::Var time_sum;

  for (std::size_t b = 0; b < B; ++b) {
    EncodedVideo ev = encode_video(videos[b]);
    EncodedParagraph ep = encode_paragraph(paragraphs[b]);
    video_tokens.push_back(ev.token);
    text_tokens.push_back(ep.token);

    ad::Var cells =
        ad::span_max_rows(ad::Var::constant(videos[b].segments), spans_);
    std::size_t M = paragraphs[b].sentences.size();
    std::vector<ad::Var> refined_list, score_list, grounded_rows;
    for (std::size_t m = 0; m < M; ++m) {
      ad::Var fused = fuse_sentence_moment_cells(ad::row(ep.summaries, m), cells, fusion_);
      ad::Var refined = tan_.refine_cells(fused);
      ad::Var scores = score_head_.predict_cells(refined);
      refined_list.push_back(refined);
      score_list.push_back(scores);

      std::vector<std::size_t> top =
          top_q_cell_indices(scores.value(), cfg_.K, cfg_.top_q);
      grounded_rows.push_back(cmff_fuse(ad::select_rows(refined, top), cmff_));
      rank_rows.push_back(ad::transpose(ad::select_rows(scores, top)));

      MaskedSentence ms = mask_sentence(paragraphs[b].sentences[m],
                                        mask_seed + 1000003ull * b + 7919ull * m);
      ad::Var masked_emb = embed_words(ms.masked_ids, embeddings_);
      ad::Var masked_states = sentence_rnn_.encode(masked_emb).per_word;
      for (std::size_t q = 0; q < top.size(); ++q) {
        auto [i, j] = spans_[top[q]];
        ReconstructionTerm term;
        term.distributions = reconstructor_.word_distributions(
            masked_states, ad::slice_rows(ev.segments, i, j + 1));
        term.targets = ms.original_ids;
        term.mask_positions = ms.mask_positions;
        recon_terms.push_back(std::move(term));
      }
    }

    ad::Var grounded_tok =
        aggregate_grounded_global(ad::concat_rows(grounded_rows), grounded_agg_);
    fused_tokens.push_back(fuse_class_tokens(ev.token, grounded_tok, token_fusion_));

    auto fwd = forward_sync_maps(refined_list, sync_forward_);
    auto rev = reverse_sync_maps(refined_list, sync_reverse_);
    std::vector<ScoreMap> gt_fwd, gt_rev;
    for (std::size_t m = 0; m < M; ++m) {
      gt_fwd.push_back(pseudo_label_from_map(score_map_from_cells(fwd[m].value(), cfg_.K),
                                             cfg_.label_theta_min, cfg_.label_theta_max));
      gt_rev.push_back(pseudo_label_from_map(score_map_from_cells(rev[m].value(), cfg_.K),
                                             cfg_.label_theta_min, cfg_.label_theta_max));
    }
    ad::Var pair_time = ad::add(bce_alignment_loss(score_list, gt_fwd),
                                bce_alignment_loss(score_list, gt_rev));
    time_sum = b == 0 ? pair_time : ad::add(time_sum, pair_time);
  }

  ad::Var S_r = cosine_similarity_matrix(ad::concat_rows(text_tokens),
                                         ad::concat_rows(video_tokens));
  ad::Var S_g = cosine_similarity_matrix(ad::concat_rows(text_tokens),
                                         ad::concat_rows(fused_tokens));

  LossBreakdown out;
  out.retrieval = cmr_loss(S_r, retrieval_hyper_).total;
  out.local = local_loss(reconstruction_loss(recon_terms, cfg_.unmasked_weight),
                         rank_loss(rank_rows, rewards_))
                  .total;
  out.global = global_loss(S_g, global_hyper_).total;
  out.time = ad::scale(time_sum, 1.0 / static_cast<double>(B));
  out.coupling = grrm_mse(S_r, S_g);
  out.total = ad::add(ad::add(ad::add(out.retrieval, out.local),
                              ad::add(out.global, out.time)),
                      out.coupling);
  return out;
}

Tensor DmrJrgModel::video_token(const VideoInput& video) const {
  return encode_video(video).token.value();
}

Tensor DmrJrgModel::paragraph_token(const ParagraphInput& paragraph) const {
  return encode_paragraph(paragraph).token.value();
}

// XXX-DIAG temporary instrumentation
DmrJrgModel::SyncDebug DmrJrgModel::sync_debug(const ParagraphInput& paragraph,
                                               const VideoInput& video) const {
  check_video(video);
  EncodedParagraph ep = encode_paragraph(paragraph);
  ad::Var cells = ad::span_max_rows(ad::Var::constant(video.segments), spans_);
  std::size_t M = paragraph.sentences.size();
  std::vector<ad::Var> refined_list;
  SyncDebug out;
  for (std::size_t m = 0; m < M; ++m) {
    ad::Var fused = fuse_sentence_moment_cells(ad::row(ep.summaries, m), cells, fusion_);
    ad::Var refined = tan_.refine_cells(fused);
    refined_list.push_back(refined);
    out.main.push_back(
        score_map_from_cells(score_head_.predict_cells(refined).value(), cfg_.K));
    Tensor norms = Tensor::zeros({cfg_.K, cfg_.K});
    const Tensor& rv = refined.value();
    for (std::size_t s = 0; s < spans_.size(); ++s) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cfg_.dim; ++c) acc += rv.at(s, c) * rv.at(s, c);
      norms.at(spans_[s].first, spans_[s].second) = std::sqrt(acc);
    }
    out.refined_norms.push_back(std::move(norms));
  }
  auto fwd = forward_sync_maps(refined_list, sync_forward_);
  auto rev = reverse_sync_maps(refined_list, sync_reverse_);
  for (std::size_t m = 0; m < M; ++m) {
    out.fwd.push_back(score_map_from_cells(fwd[m].value(), cfg_.K));
    out.rev.push_back(score_map_from_cells(rev[m].value(), cfg_.K));
  }
  return out;
}

std::vector<ScoreMap> DmrJrgModel::ground_maps(const ParagraphInput& paragraph,
                                               const VideoInput& video) const {
  check_video(video);
  EncodedParagraph ep = encode_paragraph(paragraph);
  ad::Var cells = ad::span_max_rows(ad::Var::constant(video.segments), spans_);
  std::vector<ScoreMap> out;
  for (std::size_t m = 0; m < paragraph.sentences.size(); ++m) {
    ad::Var fused = fuse_sentence_moment_cells(ad::row(ep.summaries, m), cells, fusion_);
    ad::Var scores = score_head_.predict_cells(tan_.refine_cells(fused));
    out.push_back(score_map_from_cells(scores.value(), cfg_.K));
  }
  return out;
}

}  // namespace vprg
