#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vprg/model.hpp"

using namespace vprg;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 12;
  cfg.video_width = 6;
  cfg.dim = 8;
  cfg.K = 4;
  cfg.heads = 2;
  cfg.depth = 1;
  return cfg;
}

VideoInput tiny_video(std::uint64_t seed, const ModelConfig& cfg, const std::string& id) {
  VideoInput v;
  v.id = id;
  v.duration = 20.0;
  v.segments = vprg::testing::randn({cfg.K, cfg.video_width}, seed);
  return v;
}

ParagraphInput tiny_paragraph(std::uint64_t seed, const ModelConfig& cfg,
                              const std::string& id) {
  ParagraphInput p;
  p.id = id;
  std::mt19937_64 rng(seed);
  for (std::size_t m = 0; m < 2; ++m) {
    std::vector<std::size_t> sent;
    for (std::size_t j = 0; j < 5; ++j)
      sent.push_back(2 + rng() % (cfg.vocab_size - 2));
    p.sentences.push_back(sent);
  }
  return p;
}

}  // namespace

TEST_CASE("model configs reject broken settings") {
  CHECK_NOTHROW(tiny_config().validate());
  ModelConfig c = tiny_config();
  c.vocab_size = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.heads = 3;  // does not divide dim
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.K = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.top_q = 200;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.label_theta_min = 0.9;
  c.label_theta_max = 0.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("training forward produces five finite non-negative components") {
  ModelConfig cfg = tiny_config();
  DmrJrgModel model(cfg, 5);
  std::vector<VideoInput> videos = {tiny_video(1, cfg, "v0"), tiny_video(2, cfg, "v1")};
  std::vector<ParagraphInput> paras = {tiny_paragraph(3, cfg, "p0"),
                                       tiny_paragraph(4, cfg, "p1")};

  LossBreakdown loss = model.forward_train(videos, paras, 99);
  for (const ad::Var* v : {&loss.retrieval, &loss.local, &loss.global, &loss.time,
                           &loss.coupling, &loss.total}) {
    REQUIRE(v->value().shape() == std::vector<std::size_t>({1, 1}));
    CHECK(std::isfinite(v->scalar()));
    CHECK(v->scalar() >= -1e-12);
  }
  double sum = loss.retrieval.scalar() + loss.local.scalar() + loss.global.scalar() +
               loss.time.scalar() + loss.coupling.scalar();
  CHECK(loss.total.scalar() == doctest::Approx(sum).epsilon(1e-12));

  CHECK_THROWS_AS(model.forward_train({}, {}, 0), std::invalid_argument);
  CHECK_THROWS_AS(model.forward_train(videos, {paras[0]}, 0), std::invalid_argument);
}

TEST_CASE("training forward is deterministic and seeds the masking") {
  ModelConfig cfg = tiny_config();
  DmrJrgModel model(cfg, 5);
  std::vector<VideoInput> videos = {tiny_video(1, cfg, "v0"), tiny_video(2, cfg, "v1")};
  std::vector<ParagraphInput> paras = {tiny_paragraph(3, cfg, "p0"),
                                       tiny_paragraph(4, cfg, "p1")};

  double a = model.forward_train(videos, paras, 99).total.scalar();
  double b = model.forward_train(videos, paras, 99).total.scalar();
  CHECK(a == b);

  // A different mask seed changes the reconstruction targets.
  double c = model.forward_train(videos, paras, 100).total.scalar();
  CHECK(a != c);
}

TEST_CASE("backward reaches the embedding table and the video projection") {
  ModelConfig cfg = tiny_config();
  DmrJrgModel model(cfg, 5);
  std::vector<VideoInput> videos = {tiny_video(1, cfg, "v0"), tiny_video(2, cfg, "v1")};
  std::vector<ParagraphInput> paras = {tiny_paragraph(3, cfg, "p0"),
                                       tiny_paragraph(4, cfg, "p1")};

  for (auto& [name, v] : model.params().items) v.zero_grad();
  LossBreakdown loss = model.forward_train(videos, paras, 99);
  ad::backward(loss.total);

  const ad::Var& emb = model.params().find("embeddings");
  REQUIRE(emb.has_grad());
  CHECK(emb.grad().max_abs() > 0.0);
  const ad::Var& proj = model.params().find("video_proj.w");
  REQUIRE(proj.has_grad());
  CHECK(proj.grad().max_abs() > 0.0);
  // The order-aware heads only feed the argmax that makes pseudo labels, so
  // no gradient path reaches them.
  const ad::Var& sync_w = model.params().find("sync_forward.w");
  CHECK((!sync_w.has_grad() || sync_w.grad().max_abs() == 0.0));
  const ad::Var& scale = model.params().find("retrieval_log_scale");
  REQUIRE(scale.has_grad());
  CHECK(scale.grad().max_abs() > 0.0);
}

TEST_CASE("inference tokens and maps are finite and well formed") {
  ModelConfig cfg = tiny_config();
  DmrJrgModel model(cfg, 5);
  VideoInput video = tiny_video(1, cfg, "v0");
  ParagraphInput para = tiny_paragraph(3, cfg, "p0");

  Tensor vt = model.video_token(video);
  Tensor pt = model.paragraph_token(para);
  REQUIRE(vt.shape() == std::vector<std::size_t>({1, cfg.dim}));
  REQUIRE(pt.shape() == std::vector<std::size_t>({1, cfg.dim}));
  CHECK(vt.all_finite());
  CHECK(pt.all_finite());

  std::vector<ScoreMap> maps = model.ground_maps(para, video);
  REQUIRE(maps.size() == para.sentences.size());
  for (const ScoreMap& P : maps) {
    REQUIRE(P.K() == cfg.K);
    for (std::size_t i = 0; i < cfg.K; ++i)
      for (std::size_t j = 0; j < cfg.K; ++j) {
        if (i <= j) {
          CHECK(P.values.at(i, j) > 0.0);
          CHECK(P.values.at(i, j) < 1.0);
        } else {
          CHECK(P.values.at(i, j) == 0.0);
        }
      }
  }

  // Repeated calls agree bit for bit.
  std::vector<ScoreMap> again = model.ground_maps(para, video);
  for (std::size_t m = 0; m < maps.size(); ++m)
    for (std::size_t i = 0; i < cfg.K; ++i)
      for (std::size_t j = 0; j < cfg.K; ++j)
        CHECK(maps[m].values.at(i, j) == again[m].values.at(i, j));
}

TEST_CASE("inference never reads the auxiliary training branches") {
  ModelConfig cfg = tiny_config();
  DmrJrgModel model(cfg, 5);
  VideoInput video = tiny_video(1, cfg, "v0");
  ParagraphInput para = tiny_paragraph(3, cfg, "p0");

  Tensor vt = model.video_token(video);
  Tensor pt = model.paragraph_token(para);
  std::vector<ScoreMap> maps = model.ground_maps(para, video);

  // Poison everything the retrieval-and-ground path is supposed to skip. If
  // any of it were read, NaNs would spread into the outputs.
  double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> poisoned_prefixes = {
      "grounded_cls", "token_fusion", "reconstructor", "sync_forward",
      "sync_reverse", "retrieval_log_scale", "global_log_scale"};
  std::size_t poisoned = 0;
  for (auto& [name, v] : model.params().items) {
    for (const auto& prefix : poisoned_prefixes) {
      if (name.rfind(prefix, 0) == 0) {
        v.mutable_value().fill(nan);
        ++poisoned;
        break;
      }
    }
  }
  REQUIRE(poisoned > 0);

  Tensor vt2 = model.video_token(video);
  Tensor pt2 = model.paragraph_token(para);
  std::vector<ScoreMap> maps2 = model.ground_maps(para, video);
  CHECK(vt2.all_finite());
  CHECK(pt2.all_finite());
  for (std::size_t c = 0; c < cfg.dim; ++c) {
    CHECK(vt2.at(0, c) == vt.at(0, c));
    CHECK(pt2.at(0, c) == pt.at(0, c));
  }
  for (std::size_t m = 0; m < maps.size(); ++m)
    for (std::size_t i = 0; i < cfg.K; ++i)
      for (std::size_t j = 0; j < cfg.K; ++j)
        CHECK(maps2[m].values.at(i, j) == maps[m].values.at(i, j));
}
