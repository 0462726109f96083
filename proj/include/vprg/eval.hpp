#ifndef VPRG_EVAL_HPP_
#define VPRG_EVAL_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "vprg/data_io.hpp"
#include "vprg/model.hpp"
#include "vprg/moment_map.hpp"

namespace vprg {

struct RankedVideo {
  std::string video_id;
  double score = 0.0;
};

// Full corpus ranking for one paragraph, best first. Equal scores fall back
// to video id order so rankings are total and reproducible.
struct RankedRetrieval {
  std::string paragraph_id;
  std::vector<RankedVideo> ranking;
};

struct SentencePrediction {
  MomentIndex moment;
  TimeInterval interval;
};

struct GroundingPrediction {
  std::vector<SentencePrediction> sentences;
};

struct RecallSpec {
  std::size_t top_k = 1;
  double iou = 0.5;

  void validate() const;
};

// One sentence of one paragraph, scored against its ground truth. The
// ranking is the paragraph's and is shared by all of its sentences; the
// predicted interval is the one made inside the ground-truth video.
struct SentenceSample {
  std::vector<std::string> ranking;
  std::string gt_video_id;
  TimeInterval predicted;
  TimeInterval gt;
  bool has_gt = false;
};

RankedRetrieval retrieve(const ParagraphInput& paragraph,
                         const std::vector<VideoInput>& corpus,
                         const DmrJrgModel& model);

GroundingPrediction ground(const ParagraphInput& paragraph, const VideoInput& video,
                           const DmrJrgModel& model);

// Percentage of samples whose ground-truth video sits within the top K of
// their ranking and whose predicted interval beats the IoU threshold
// (strictly) against the ground truth.
double recall_at_k_iou(const std::vector<SentenceSample>& samples, const RecallSpec& spec);

struct GridValue {
  RecallSpec spec;
  double value = 0.0;  // percentage
};

struct EvalReport {
  std::size_t paragraphs = 0;
  std::size_t sentence_samples = 0;
  double rank1_accuracy = 0.0;  // fraction of paragraphs retrieving their video first
  std::vector<GridValue> grid;
};

// Runs retrieval for every paragraph and grounding inside its ground-truth
// video, then fills the whole (top_k, iou) grid. Every paragraph must carry
// ground-truth intervals.
EvalReport evaluate_corpus(const DmrJrgModel& model, const Corpus& corpus,
                           const std::vector<std::size_t>& ks,
                           const std::vector<double>& ious);

// metrics.json (machine readable) plus report.txt (aligned table) under dir.
void emit_report(const EvalReport& report, const std::string& dir);

// Plain-text grayscale image of the map probabilities, upper triangle dark
// to bright; for eyeballing where a sentence lands.
void write_score_map_pgm(const ScoreMap& map, const std::string& path);

}  // namespace vprg

#endif  // VPRG_EVAL_HPP_
