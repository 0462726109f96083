#include "vprg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "vprg/errors.hpp"

namespace vprg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void RecallSpec::validate() const {
  if (top_k == 0) throw std::invalid_argument("RecallSpec: top_k must be at least 1");
  if (!(iou > 0.0) || iou > 1.0)
    throw std::invalid_argument("RecallSpec: iou must be in (0, 1]");
}

namespace {

double cosine(const Tensor& a, const Tensor& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) {
    dot += a.data()[k] * b.data()[k];
    na += a.data()[k] * a.data()[k];
    nb += b.data()[k] * b.data()[k];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm token");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

RankedRetrieval retrieve(const ParagraphInput& paragraph,
                         const std::vector<VideoInput>& corpus,
                         const DmrJrgModel& model) {
  if (corpus.empty()) throw std::invalid_argument("retrieve: empty corpus");
  const Tensor query = model.paragraph_token(paragraph);
  RankedRetrieval out;
  out.paragraph_id = paragraph.id;
  for (const VideoInput& video : corpus)
    out.ranking.push_back({video.id, cosine(query, model.video_token(video))});
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [](const RankedVideo& a, const RankedVideo& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.video_id < b.video_id;
                   });
  return out;
}

GroundingPrediction ground(const ParagraphInput& paragraph, const VideoInput& video,
                           const DmrJrgModel& model) {
  GroundingPrediction out;
  for (const ScoreMap& map : model.ground_maps(paragraph, video)) {
    MomentIndex m = argmax_moment(map);
    out.sentences.push_back({m, moment_to_interval(m, map.K(), video.duration)});
  }
  return out;
}

double recall_at_k_iou(const std::vector<SentenceSample>& samples,
                       const RecallSpec& spec) {
  spec.validate();
  if (samples.empty()) throw std::invalid_argument("recall_at_k_iou: no samples");
  std::size_t hits = 0;
  for (const SentenceSample& s : samples) {
    if (!s.has_gt)
      throw std::invalid_argument("recall_at_k_iou: sample without ground truth");
    bool in_top_k = false;
    const std::size_t limit = std::min(spec.top_k, s.ranking.size());
    for (std::size_t r = 0; r < limit && !in_top_k; ++r)
      in_top_k = s.ranking[r] == s.gt_video_id;
    if (in_top_k && temporal_iou(s.predicted, s.gt) > spec.iou) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(samples.size());
}

EvalReport evaluate_corpus(const DmrJrgModel& model, const Corpus& corpus,
                           const std::vector<std::size_t>& ks,
                           const std::vector<double>& ious) {
  std::vector<VideoInput> videos;
  for (const CorpusRecord& v : corpus.videos)
    videos.push_back({v.video_id, v.duration, v.segments});

  EvalReport report;
  std::vector<SentenceSample> samples;
  std::size_t rank1 = 0;
  for (const CorpusRecord& v : corpus.videos) {
    for (const ParagraphRecord& p : v.paragraphs) {
      if (!p.gt.present() || p.gt.count() != p.sentences.size())
        throw std::invalid_argument("evaluate_corpus: paragraph " + p.paragraph_id +
                                    " lacks usable ground truth");
      ParagraphInput query{p.paragraph_id, p.sentences};
      RankedRetrieval ranked = retrieve(query, videos, model);
      ++report.paragraphs;
      if (ranked.ranking.front().video_id == v.video_id) ++rank1;

      VideoInput gt_video{v.video_id, v.duration, v.segments};
      GroundingPrediction pred = ground(query, gt_video, model);
      const std::vector<TimeInterval>& gt = p.gt.values();
      std::vector<std::string> ranking_ids;
      for (const RankedVideo& r : ranked.ranking) ranking_ids.push_back(r.video_id);
      for (std::size_t m = 0; m < p.sentences.size(); ++m) {
        SentenceSample s;
        s.ranking = ranking_ids;
        s.gt_video_id = v.video_id;
        s.predicted = pred.sentences[m].interval;
        s.gt = gt[m];
        s.has_gt = true;
        samples.push_back(std::move(s));
      }
    }
  }
  if (report.paragraphs == 0)
    throw std::invalid_argument("evaluate_corpus: corpus has no paragraphs");
  report.sentence_samples = samples.size();
  report.rank1_accuracy =
      static_cast<double>(rank1) / static_cast<double>(report.paragraphs);
  for (std::size_t k : ks)
    for (double m : ious) {
      RecallSpec spec{k, m};
      report.grid.push_back({spec, recall_at_k_iou(samples, spec)});
    }
  return report;
}

void emit_report(const EvalReport& report, const std::string& dir) {
  fs::create_directories(dir);

  ordered_json doc;
  doc["paragraphs"] = report.paragraphs;
  doc["sentence_samples"] = report.sentence_samples;
  doc["rank1_accuracy"] = report.rank1_accuracy;
  doc["grid"] = ordered_json::array();
  for (const GridValue& g : report.grid) {
    ordered_json cell;
    cell["top_k"] = g.spec.top_k;
    cell["iou"] = g.spec.iou;
    cell["value"] = g.value;
    doc["grid"].push_back(cell);
  }
  {
    std::ofstream out(fs::path(dir) / "metrics.json", std::ios::trunc);
    if (!out) throw std::runtime_error("emit_report: cannot write metrics.json");
    out << doc.dump(2) << "\n";
    if (!out) throw std::runtime_error("emit_report: short write to metrics.json");
  }

  // One row per K, one column per IoU, in first-seen order.
  std::vector<std::size_t> ks;
  std::vector<double> ious;
  for (const GridValue& g : report.grid) {
    if (std::find(ks.begin(), ks.end(), g.spec.top_k) == ks.end())
      ks.push_back(g.spec.top_k);
    if (std::find(ious.begin(), ious.end(), g.spec.iou) == ious.end())
      ious.push_back(g.spec.iou);
  }
  std::ostringstream table;
  table << std::fixed << std::setprecision(2);
  table << std::setw(8) << "R@K";
  for (double m : ious) table << std::setw(10) << ("IoU=" + [&] {
    std::ostringstream s;
    s << std::setprecision(2) << std::fixed << m;
    return s.str();
  }());
  table << "\n";
  for (std::size_t k : ks) {
    table << std::setw(8) << ("K=" + std::to_string(k));
    for (double m : ious) {
      double value = 0.0;
      bool found = false;
      for (const GridValue& g : report.grid)
        if (g.spec.top_k == k && g.spec.iou == m) {
          value = g.value;
          found = true;
        }
      if (found)
        table << std::setw(10) << value;
      else
        table << std::setw(10) << "-";
    }
    table << "\n";
  }
  table << "paragraphs: " << report.paragraphs
        << "  sentence samples: " << report.sentence_samples
        << "  rank-1 accuracy: " << report.rank1_accuracy << "\n";
  {
    std::ofstream out(fs::path(dir) / "report.txt", std::ios::trunc);
    if (!out) throw std::runtime_error("emit_report: cannot write report.txt");
    out << table.str();
    if (!out) throw std::runtime_error("emit_report: short write to report.txt");
  }
}

void write_score_map_pgm(const ScoreMap& map, const std::string& path) {
  const std::size_t K = map.K();
  if (K == 0 || map.values.cols() != K)
    throw std::invalid_argument("write_score_map_pgm: square non-empty map required");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_score_map_pgm: cannot open " + path);
  out << "P2\n" << K << " " << K << "\n255\n";
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      double v = std::clamp(map.values.at(i, j), 0.0, 1.0);
      out << static_cast<int>(std::lround(v * 255.0)) << (j + 1 == K ? "" : " ");
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write_score_map_pgm: short write to " + path);
}

}  // namespace vprg
