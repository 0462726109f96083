#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vprg/errors.hpp"
#include "vprg/eval.hpp"

using namespace vprg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("vprg_eval_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Corpus small_corpus(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.videos = 3;
  spec.segments = 8;
  spec.sentences = 2;
  spec.feature_width = 12;
  spec.words_per_sentence = 4;
  spec.negative_dims = 3;
  spec.seed = seed;
  return generate_synthetic_corpus(spec);
}

ModelConfig small_model_config(const Corpus& corpus) {
  ModelConfig cfg;
  cfg.vocab_size = corpus.vocab_size;
  cfg.video_width = corpus.feature_width;
  cfg.dim = 8;
  cfg.K = corpus.K;
  cfg.top_q = 3;
  cfg.heads = 2;
  return cfg;
}

std::vector<VideoInput> video_inputs(const Corpus& corpus) {
  std::vector<VideoInput> out;
  for (const auto& v : corpus.videos) out.push_back({v.video_id, v.duration, v.segments});
  return out;
}

// Interval overlap written the other way round: union by inclusion-exclusion.
double iou_oracle(const TimeInterval& a, const TimeInterval& b) {
  const double inter =
      std::max(0.0, std::min(a.t_end, b.t_end) - std::max(a.t_start, b.t_start));
  const double uni = (a.t_end - a.t_start) + (b.t_end - b.t_start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Plain nested loops, no early exits beyond the spec wording.
double recall_oracle(const std::vector<SentenceSample>& samples, std::size_t k,
                     double m) {
  std::size_t hits = 0;
  for (const SentenceSample& s : samples) {
    bool found = false;
    for (std::size_t r = 0; r < s.ranking.size(); ++r)
      if (r < k && s.ranking[r] == s.gt_video_id) found = true;
    if (found && iou_oracle(s.predicted, s.gt) > m) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(samples.size());
}

void poison_params(DmrJrgModel& model, const std::vector<std::string>& prefixes) {
  for (auto& [name, var] : model.params().items)
    for (const std::string& p : prefixes)
      if (name.rfind(p, 0) == 0)
        var.mutable_value().fill(std::numeric_limits<double>::quiet_NaN());
}

}  // namespace

TEST_CASE("recall spec validation") {
  RecallSpec ok{5, 0.5};
  CHECK_NOTHROW(ok.validate());
  RecallSpec edge{1, 1.0};
  CHECK_NOTHROW(edge.validate());
  CHECK_THROWS_AS((RecallSpec{0, 0.5}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((RecallSpec{1, 0.0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((RecallSpec{1, 1.5}.validate()), std::invalid_argument);
}

TEST_CASE("retrieval ranks every video and breaks ties by id") {
  Corpus corpus = small_corpus(3);
  DmrJrgModel model(small_model_config(corpus), 7);
  std::vector<VideoInput> videos = video_inputs(corpus);
  ParagraphInput query{"p0", corpus.videos[0].paragraphs[0].sentences};

  SUBCASE("single video lands at rank one") {
    std::vector<VideoInput> one = {videos[0]};
    RankedRetrieval r = retrieve(query, one, model);
    REQUIRE(r.ranking.size() == 1);
    CHECK(r.ranking[0].video_id == "v0");
    CHECK(r.paragraph_id == "p0");
  }
  SUBCASE("full ranking is ordered and complete") {
    RankedRetrieval r = retrieve(query, videos, model);
    REQUIRE(r.ranking.size() == videos.size());
    for (std::size_t i = 1; i < r.ranking.size(); ++i)
      CHECK(r.ranking[i - 1].score >= r.ranking[i].score);
    std::vector<std::string> ids;
    for (const auto& rv : r.ranking) ids.push_back(rv.video_id);
    std::sort(ids.begin(), ids.end());
    CHECK(ids == std::vector<std::string>({"v0", "v1", "v2"}));
  }
  SUBCASE("duplicated videos score equal and sort by id") {
    VideoInput dup = videos[0];
    dup.id = "zz_copy";
    std::vector<VideoInput> with_dup = {dup, videos[0]};
    RankedRetrieval r = retrieve(query, with_dup, model);
    REQUIRE(r.ranking.size() == 2);
    CHECK(r.ranking[0].score == r.ranking[1].score);
    CHECK(r.ranking[0].video_id == "v0");
    CHECK(r.ranking[1].video_id == "zz_copy");
  }
  SUBCASE("empty corpus is rejected") {
    CHECK_THROWS_AS(retrieve(query, {}, model), std::invalid_argument);
  }
}

TEST_CASE("grounding emits one interval per sentence deterministically") {
  Corpus corpus = small_corpus(5);
  DmrJrgModel model(small_model_config(corpus), 13);
  VideoInput video = video_inputs(corpus)[1];
  ParagraphInput query{"p1", corpus.videos[1].paragraphs[0].sentences};

  GroundingPrediction a = ground(query, video, model);
  REQUIRE(a.sentences.size() == query.sentences.size());
  for (const SentencePrediction& s : a.sentences) {
    CHECK(s.interval.t_start >= 0.0);
    CHECK(s.interval.t_end <= video.duration);
    CHECK(s.interval.t_start < s.interval.t_end);
    CHECK(s.moment.start_segment <= s.moment.end_segment);
  }
  GroundingPrediction b = ground(query, video, model);
  for (std::size_t m = 0; m < a.sentences.size(); ++m) {
    CHECK(a.sentences[m].moment == b.sentences[m].moment);
    CHECK(a.sentences[m].interval.t_start == b.sentences[m].interval.t_start);
    CHECK(a.sentences[m].interval.t_end == b.sentences[m].interval.t_end);
  }
}

TEST_CASE("a peaked map decodes to the matching time interval") {
  ScoreMap map;
  map.values = Tensor::zeros({16, 16});
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = i; j < 16; ++j) map.values.at(i, j) = 0.1;
  map.values.at(4, 7) = 0.9;
  MomentIndex m = argmax_moment(map);
  CHECK(m == MomentIndex{4, 7});
  TimeInterval t = moment_to_interval(m, 16, 32.0);
  CHECK(t.t_start == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(t.t_end == doctest::Approx(16.0).epsilon(1e-12));
}

TEST_CASE("recall counts hits only inside the top K and above the threshold") {
  auto sample = [](std::vector<std::string> ranking, std::string gt_id,
                   TimeInterval pred, TimeInterval gt) {
    SentenceSample s;
    s.ranking = std::move(ranking);
    s.gt_video_id = std::move(gt_id);
    s.predicted = pred;
    s.gt = gt;
    s.has_gt = true;
    return s;
  };

  SUBCASE("all exact at rank one scores 100") {
    std::vector<SentenceSample> samples(3, sample({"a", "b"}, "a", {0, 4}, {0, 4}));
    CHECK(recall_at_k_iou(samples, {1, 0.5}) == 100.0);
  }
  SUBCASE("three of four hit gives 75") {
    std::vector<SentenceSample> samples = {
        sample({"a", "b", "c"}, "a", {0, 4}, {0, 4}),
        sample({"a", "b", "c"}, "a", {0, 4}, {1, 5}),  // IoU 3/5 > 0.5
        sample({"a", "b", "c"}, "a", {0, 4}, {0, 3}),  // IoU 3/4 > 0.5
        sample({"b", "a", "c"}, "a", {0, 4}, {0, 4}),  // gt video at rank 2
    };
    CHECK(recall_at_k_iou(samples, {1, 0.5}) == 75.0);
    CHECK(recall_at_k_iou(samples, {2, 0.5}) == 100.0);
    samples[3] = sample({"a", "b", "c"}, "a", {0, 2}, {2, 4});  // disjoint
    CHECK(recall_at_k_iou(samples, {2, 0.5}) == 75.0);
  }
  SUBCASE("a threshold of one rejects even near-exact intervals") {
    std::vector<SentenceSample> samples = {
        sample({"a"}, "a", {0.0, 3.999}, {0.0, 4.0})};
    CHECK(recall_at_k_iou(samples, {1, 1.0}) == 0.0);
  }
  SUBCASE("top K beyond the ranking length is safe") {
    std::vector<SentenceSample> samples = {sample({"a"}, "a", {0, 4}, {0, 4})};
    CHECK(recall_at_k_iou(samples, {50, 0.5}) == 100.0);
  }
  SUBCASE("missing ground truth is rejected") {
    SentenceSample s = sample({"a"}, "a", {0, 4}, {0, 4});
    s.has_gt = false;
    CHECK_THROWS_AS(recall_at_k_iou({s}, {1, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(recall_at_k_iou({}, {1, 0.5}), std::invalid_argument);
  }
}

TEST_CASE("recall matches a nested-loop oracle on randomized corpora") {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nv = 2 + rng() % 9;  // up to 10 videos
    std::vector<std::string> ids;
    for (std::size_t v = 0; v < nv; ++v) ids.push_back("v" + std::to_string(v));

    std::vector<SentenceSample> samples;
    std::uniform_real_distribution<double> t(0.0, 30.0);
    for (std::size_t v = 0; v < nv; ++v) {
      std::vector<std::string> ranking = ids;
      std::shuffle(ranking.begin(), ranking.end(), rng);
      const std::size_t ns = 1 + rng() % 4;  // up to 4 sentences
      for (std::size_t m = 0; m < ns; ++m) {
        SentenceSample s;
        s.ranking = ranking;
        s.gt_video_id = ids[v];
        double a = t(rng), b = t(rng), c = t(rng), d = t(rng);
        s.predicted = {std::min(a, b), std::max(a, b)};
        s.gt = {std::min(c, d), std::max(c, d)};
        s.has_gt = true;
        samples.push_back(std::move(s));
      }
    }

    const std::vector<std::size_t> ks = {1, 5, 10};
    const std::vector<double> ms = {0.3, 0.5, 0.7};
    double grid[3][3];
    for (std::size_t i = 0; i < ks.size(); ++i)
      for (std::size_t j = 0; j < ms.size(); ++j) {
        grid[i][j] = recall_at_k_iou(samples, {ks[i], ms[j]});
        CHECK(grid[i][j] == recall_oracle(samples, ks[i], ms[j]));
      }
    for (std::size_t j = 0; j < ms.size(); ++j) {
      CHECK(grid[0][j] <= grid[1][j]);
      CHECK(grid[1][j] <= grid[2][j]);
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
      CHECK(grid[i][0] >= grid[i][1]);
      CHECK(grid[i][1] >= grid[i][2]);
    }
  }
}

TEST_CASE("corpus evaluation fills the grid and counts samples") {
  Corpus corpus = small_corpus(9);
  DmrJrgModel model(small_model_config(corpus), 17);

  EvalReport report = evaluate_corpus(model, corpus, {1, 3}, {0.3, 0.7});
  CHECK(report.paragraphs == 3);
  CHECK(report.sentence_samples == 6);
  CHECK(report.rank1_accuracy >= 0.0);
  CHECK(report.rank1_accuracy <= 1.0);
  REQUIRE(report.grid.size() == 4);
  for (const GridValue& g : report.grid) {
    CHECK(g.value >= 0.0);
    CHECK(g.value <= 100.0);
  }
  CHECK(report.grid[0].spec.top_k == 1);
  CHECK(report.grid[0].spec.iou == 0.3);
  // Same IoU, larger K: never worse.
  CHECK(report.grid[2].value >= report.grid[0].value);
  CHECK(report.grid[3].value >= report.grid[1].value);

  Corpus no_gt = corpus;
  no_gt.videos[1].paragraphs[0].gt = GtIntervals();
  CHECK_THROWS_AS(evaluate_corpus(model, no_gt, {1}, {0.5}), std::invalid_argument);
}

TEST_CASE("reports round trip through metrics.json") {
  fs::path dir = fresh_dir("report");
  EvalReport report;
  report.paragraphs = 4;
  report.sentence_samples = 12;
  report.rank1_accuracy = 0.75;
  report.grid = {{{1, 0.3}, 50.0}, {{1, 0.5}, 25.0},  {{1, 0.7}, 12.5},
                 {{5, 0.3}, 75.0}, {{5, 0.5}, 37.25}, {{5, 0.7}, 25.0}};
  emit_report(report, dir.string());

  std::ifstream in(dir / "metrics.json");
  REQUIRE(in.good());
  nlohmann::json doc = nlohmann::json::parse(in);
  CHECK(doc["paragraphs"] == 4);
  CHECK(doc["sentence_samples"] == 12);
  CHECK(doc["rank1_accuracy"] == 0.75);
  REQUIRE(doc["grid"].size() == 6);
  CHECK(doc["grid"][4]["top_k"] == 5);
  CHECK(doc["grid"][4]["iou"] == 0.5);
  CHECK(doc["grid"][4]["value"] == 37.25);

  std::ifstream txt(dir / "report.txt");
  std::stringstream table;
  table << txt.rdbuf();
  CHECK(table.str().find("R@K") != std::string::npos);
  CHECK(table.str().find("K=5") != std::string::npos);
  CHECK(table.str().find("IoU=0.50") != std::string::npos);
  CHECK(table.str().find("37.25") != std::string::npos);

  SUBCASE("empty grid still writes a header-only table") {
    EvalReport bare;
    bare.paragraphs = 1;
    bare.sentence_samples = 1;
    fs::path bare_dir = fresh_dir("report_bare");
    emit_report(bare, bare_dir.string());
    std::ifstream btxt(bare_dir / "report.txt");
    std::string first_line;
    std::getline(btxt, first_line);
    CHECK(first_line.find("R@K") != std::string::npos);
    std::ifstream bj(bare_dir / "metrics.json");
    nlohmann::json bdoc = nlohmann::json::parse(bj);
    CHECK(bdoc["grid"].empty());
  }
  SUBCASE("unwritable destination raises") {
    fs::path blocker = dir / "blocker";
    std::ofstream(blocker) << "x";
    CHECK_THROWS_AS(emit_report(report, (blocker / "sub").string()),
                    std::runtime_error);
  }
}

TEST_CASE("score map images carry the map in plain PGM") {
  fs::path dir = fresh_dir("pgm");
  ScoreMap map;
  map.values = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i; j < 4; ++j) map.values.at(i, j) = 0.2;
  map.values.at(1, 3) = 1.0;
  const fs::path path = dir / "map.pgm";
  write_score_map_pgm(map, path.string());

  std::ifstream in(path);
  std::string magic;
  std::size_t w, h;
  int maxval;
  in >> magic >> w >> h >> maxval;
  CHECK(magic == "P2");
  CHECK(w == 4);
  CHECK(h == 4);
  CHECK(maxval == 255);
  std::vector<int> pixels;
  int px;
  while (in >> px) pixels.push_back(px);
  REQUIRE(pixels.size() == 16);
  for (int p : pixels) {
    CHECK(p >= 0);
    CHECK(p <= 255);
  }
  CHECK(pixels[1 * 4 + 3] == 255);
  CHECK(pixels[1 * 4 + 0] == 0);  // below the diagonal
  CHECK(pixels[0 * 4 + 0] == 51);
}

TEST_CASE("retrieval reads nothing from the grounding branches") {
  Corpus corpus = small_corpus(21);
  DmrJrgModel model(small_model_config(corpus), 23);
  std::vector<VideoInput> videos = video_inputs(corpus);
  ParagraphInput query{"p2", corpus.videos[2].paragraphs[0].sentences};

  RankedRetrieval before = retrieve(query, videos, model);
  poison_params(model, {"fusion", "tan", "score_head", "reconstructor", "token_fusion",
                        "grounded_cls", "sync_forward", "sync_reverse",
                        "retrieval_log_scale", "global_log_scale"});
  RankedRetrieval after = retrieve(query, videos, model);
  REQUIRE(after.ranking.size() == before.ranking.size());
  for (std::size_t i = 0; i < before.ranking.size(); ++i) {
    CHECK(after.ranking[i].video_id == before.ranking[i].video_id);
    CHECK(after.ranking[i].score == before.ranking[i].score);
    CHECK(std::isfinite(after.ranking[i].score));
  }
}

TEST_CASE("grounding reads nothing from the retrieval-only extras") {
  Corpus corpus = small_corpus(25);
  DmrJrgModel model(small_model_config(corpus), 29);
  VideoInput video = video_inputs(corpus)[0];
  ParagraphInput query{"p0", corpus.videos[0].paragraphs[0].sentences};

  GroundingPrediction before = ground(query, video, model);
  poison_params(model, {"grounded_cls", "token_fusion", "reconstructor", "sync_forward",
                        "sync_reverse", "retrieval_log_scale", "global_log_scale"});
  GroundingPrediction after = ground(query, video, model);
  REQUIRE(after.sentences.size() == before.sentences.size());
  for (std::size_t m = 0; m < before.sentences.size(); ++m)
    CHECK(after.sentences[m].moment == before.sentences[m].moment);
}
