#ifndef VPRG_DATA_IO_HPP_
#define VPRG_DATA_IO_HPP_

#include <atomic>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vprg/errors.hpp"
#include "vprg/moment_map.hpp"
#include "vprg/tensor.hpp"

namespace vprg {

// On-disk matrices are 32-bit floats, row major, little endian. Keeping the
// staging type separate from Tensor makes round-trip tests bit-exact.
struct FeatureMatrix {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::vector<float> data;

  Tensor to_tensor() const;
  static FeatureMatrix from_tensor(const Tensor& t);
};

void write_features(const std::string& path, const FeatureMatrix& m);
FeatureMatrix read_features(const std::string& path);

// Ground-truth intervals with an access audit: every read of the values is
// counted process-wide, which lets a test prove the trainer never looks.
class GtIntervals {
 public:
  GtIntervals() = default;
  explicit GtIntervals(std::vector<TimeInterval> intervals)
      : present_(true), intervals_(std::move(intervals)) {}

  bool present() const { return present_; }
  std::size_t count() const { return intervals_.size(); }
  const std::vector<TimeInterval>& values() const {
    accesses_.fetch_add(1, std::memory_order_relaxed);
    return intervals_;
  }

  static std::uint64_t access_count() {
    return accesses_.load(std::memory_order_relaxed);
  }
  static void reset_access_count() { accesses_.store(0, std::memory_order_relaxed); }

 private:
  bool present_ = false;
  std::vector<TimeInterval> intervals_;
  static std::atomic<std::uint64_t> accesses_;
};

struct ParagraphRecord {
  std::string paragraph_id;
  std::string video_id;
  std::vector<std::vector<std::size_t>> sentences;
  GtIntervals gt;
};

struct CorpusRecord {
  std::string video_id;
  double duration = 0.0;
  Tensor segments;  // K x feature_width
  std::vector<ParagraphRecord> paragraphs;
};

struct Corpus {
  std::size_t K = 0;
  std::size_t feature_width = 0;
  std::size_t vocab_size = 0;
  // Pretrained word vectors shipped with the corpus, vocab_size x
  // feature_width. Empty when the corpus carries none.
  Tensor embeddings;
  std::vector<CorpusRecord> videos;
};

// One JSON object per line. With redact_gt the interval fields are dropped
// at parse time, so nothing downstream can touch them.
std::vector<ParagraphRecord> read_annotations(const std::string& path, bool redact_gt);
void write_annotations(const std::string& path,
                       const std::vector<ParagraphRecord>& records);

// Directory layout: manifest.json, annotations.jsonl, features/<id>.feat.
void save_corpus(const std::string& dir, const Corpus& corpus);
Corpus load_corpus(const std::string& dir, bool redact_gt);

struct SyntheticSpec {
  std::size_t videos = 8;
  std::size_t segments = 16;      // map side K
  std::size_t sentences = 3;      // per paragraph
  std::size_t feature_width = 32;
  std::size_t words_per_sentence = 6;
  std::size_t negative_dims = 4;  // signature coordinates planted below zero
  double snr = 8.0;               // signal amplitude over noise sigma
  double embed_scale = 1.0;       // word vector weight on its own feature dim
  double embed_contrast = 2.0;    // total negative weight spread over the rest
  std::uint64_t seed = 7;

  void validate() const;
};

// The deterministic part of generation: where each sentence's span lives,
// which signature marks it, and which words spell it.
struct PlantedSentence {
  MomentIndex span;
  Tensor signature;  // 1 x feature_width
  std::vector<std::size_t> token_ids;
};

struct SyntheticPlan {
  std::vector<std::vector<PlantedSentence>> by_video;
  std::size_t vocab_size = 0;
  Tensor embeddings;  // vocab_size x feature_width
};

SyntheticPlan plan_synthetic(const SyntheticSpec& spec);
Corpus generate_synthetic_corpus(const SyntheticSpec& spec);

// Plain key = value lines; '#' starts a comment. Environment variables named
// <prefix><KEY> (upper-cased key) override file values.
std::map<std::string, std::string> read_config_file(const std::string& path);
void apply_env_overrides(std::map<std::string, std::string>& config,
                         const std::string& prefix = "VPRG_");

}  // namespace vprg

#endif  // VPRG_DATA_IO_HPP_
