#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "gradcheck.hpp"
#include "vprg/grounding_local.hpp"

using namespace vprg;
using testing::max_rel_grad_error;
using testing::randn;

TEST_CASE("sentence-moment fusion") {
  FusionParams p;
  p.w_s = ad::Var::param(Tensor({1, 1}, {2.0}));
  p.w_v = ad::Var::param(Tensor({1, 1}, {3.0}));
  auto h = ad::Var::constant(Tensor({1, 1}, {1.0}));
  auto cells = ad::Var::constant(Tensor({3, 1}, {1.0, 2.0, -1.0}));
  ad::Var fused = fuse_sentence_moment_cells(h, cells, p);
  CHECK(fused.value()[0] == 6.0);
  CHECK(fused.value()[1] == 12.0);
  CHECK(fused.value()[2] == -6.0);

  // Zero sentence projection annihilates the map.
  p.w_s = ad::Var::param(Tensor({1, 1}, {0.0}));
  ad::Var zero = fuse_sentence_moment_cells(h, cells, p);
  for (std::size_t i = 0; i < 3; ++i) CHECK(zero.value()[i] == 0.0);

  // All-ones sentence projection leaves the projected map unchanged.
  FusionParams q = FusionParams::make(4, 5, 6, 7);
  auto hq = ad::Var::constant(randn({1, 4}, 8));
  auto cq = ad::Var::constant(randn({2, 5}, 9));
  Tensor ones_w = Tensor::zeros({4, 6});
  // Against w_s with columns summing so that h*w_s = 1 exactly: simpler to
  // override the projection product by using h = e_0 and w_s row 0 = ones.
  for (std::size_t c = 0; c < 6; ++c) ones_w.at(0, c) = 1.0;
  q.w_s = ad::Var::param(ones_w);
  Tensor e0 = Tensor::zeros({1, 4});
  e0[0] = 1.0;
  ad::Var fused_q = fuse_sentence_moment_cells(ad::Var::constant(e0), cq, q);
  ad::Var proj_only = ad::matmul(cq, q.w_v);
  for (std::size_t i = 0; i < fused_q.value().numel(); ++i)
    CHECK(fused_q.value()[i] == doctest::Approx(proj_only.value()[i]));

  CHECK_THROWS_AS(fuse_sentence_moment_cells(ad::Var::constant(randn({1, 3}, 10)), cq, q),
                  std::invalid_argument);
}

TEST_CASE("tan stack shape, zero map, and masking") {
  TanStack tan(4, 3, 11);
  auto grid = ad::Var::constant(randn({4, 4, 3}, 12));
  ad::Var out = tan.refine(grid);
  CHECK(out.value().dim(0) == 4);
  CHECK(out.value().dim(1) == 4);
  CHECK(out.value().dim(2) == 3);

  // Invalid cells are exactly zero after refinement.
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < i; ++j)
      for (std::size_t c = 0; c < 3; ++c) CHECK(out.value().at3(i, j, c) == 0.0);

  // Zero input stays zero: biases initialize to zero.
  ad::Var zout = tan.refine(ad::Var::constant(Tensor::zeros({4, 4, 3})));
  for (std::size_t i = 0; i < zout.value().numel(); ++i) CHECK(zout.value()[i] == 0.0);

  CHECK_THROWS_AS(tan.refine(ad::Var::constant(randn({3, 3, 3}, 13))), std::invalid_argument);
}

TEST_CASE("tan stack locality: four layers reach at most four cells away") {
  const std::size_t K = 12, d = 2;
  TanStack tan(K, d, 14);
  Tensor base = randn({K, K, d}, 15);
  Tensor poked = base;
  const std::size_t pi = 2, pj = 9;
  poked.at3(pi, pj, 0) += 1.0;

  Tensor a = tan.refine(ad::Var::constant(base)).value();
  Tensor b = tan.refine(ad::Var::constant(poked)).value();
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      const std::size_t dist = std::max(i > pi ? i - pi : pi - i, j > pj ? j - pj : pj - j);
      if (dist > 4) {
        for (std::size_t c = 0; c < d; ++c) CHECK(a.at3(i, j, c) == b.at3(i, j, c));
      }
    }
  }
}

TEST_CASE("score prediction stays inside the open unit interval") {
  PredictionLayer pl = PredictionLayer::make(5, 16);
  auto cells = ad::Var::constant(randn({10, 5}, 17));
  ad::Var p = pl.predict_cells(cells);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(p.value()[i] > 0.0);
    CHECK(p.value()[i] < 1.0);
  }

  PredictionLayer zero;
  zero.w = ad::Var::param(Tensor::zeros({5, 1}));
  zero.b = ad::Var::param(Tensor::zeros({1, 1}));
  ad::Var half = zero.predict_cells(cells);
  for (std::size_t i = 0; i < 10; ++i) CHECK(half.value()[i] == 0.5);

  PredictionLayer hot;
  hot.w = ad::Var::param(Tensor::zeros({5, 1}));
  hot.b = ad::Var::param(Tensor({1, 1}, {50.0}));
  ad::Var sat = hot.predict_cells(cells);
  for (std::size_t i = 0; i < 10; ++i) CHECK(sat.value()[i] == doctest::Approx(1.0));

  ScoreMap map = score_map_from_cells(half.value(), 4);
  CHECK(map.values.at(0, 0) == 0.5);
  CHECK(map.values.at(1, 0) == 0.0);
  CHECK(map.values.at(3, 2) == 0.0);
}

TEST_CASE("top-q selection") {
  ScoreMap P{Tensor::zeros({3, 3})};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i; j < 3; ++j) P.values.at(i, j) = 0.1;
  P.values.at(0, 1) = 0.9;
  P.values.at(1, 2) = 0.8;
  P.values.at(0, 0) = 0.7;

  auto top = select_top_q(P, 3);
  REQUIRE(top.size() == 3);
  CHECK(top[0].first == MomentIndex{0, 1});
  CHECK(top[1].first == MomentIndex{1, 2});
  CHECK(top[2].first == MomentIndex{0, 0});
  CHECK(top[0].second == 0.9);
  CHECK(top[1].second >= top[2].second);

  ScoreMap flat{Tensor::zeros({2, 2})};
  flat.values.at(0, 0) = flat.values.at(0, 1) = flat.values.at(1, 1) = 0.4;
  auto tied = select_top_q(flat, 2);
  CHECK(tied[0].first == MomentIndex{0, 0});
  CHECK(tied[1].first == MomentIndex{0, 1});

  ScoreMap tiny{Tensor::zeros({1, 1})};
  CHECK_THROWS_AS(select_top_q(tiny, 2), std::invalid_argument);
}

TEST_CASE("reconstructor emits row distributions") {
  Reconstructor rec(8, 11, 18);
  auto words = ad::Var::constant(randn({5, 8}, 19));
  auto span = ad::Var::constant(randn({3, 8}, 20));
  ad::Var dist = rec.word_distributions(words, span);
  CHECK(dist.value().rows() == 5);
  CHECK(dist.value().cols() == 11);
  for (std::size_t j = 0; j < 5; ++j) {
    double sum = 0.0;
    for (std::size_t v = 0; v < 11; ++v) {
      sum += dist.value().at(j, v);
      CHECK(dist.value().at(j, v) >= 0.0);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(rec.word_distributions(words, ad::Var::constant(Tensor({0, 8}))),
                  std::invalid_argument);
}

TEST_CASE("reconstruction loss closed forms") {
  // One-hot on target: zero loss.
  Tensor hot = Tensor::zeros({1, 4});
  hot[2] = 1.0;
  ReconstructionTerm t1{ad::Var::constant(hot), {2}, {0}};
  CHECK(reconstruction_loss({t1}).scalar() == 0.0);

  // Uniform over 4 tokens, one word: log 4.
  ReconstructionTerm t2{ad::Var::constant(Tensor::full({1, 4}, 0.25)), {1}, {0}};
  CHECK(reconstruction_loss({t2}).scalar() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // Two uniform words: 2 log 4.
  ReconstructionTerm t3{ad::Var::constant(Tensor::full({2, 4}, 0.25)), {0, 3}, {0, 1}};
  CHECK(reconstruction_loss({t3}).scalar() ==
        doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));

  // Averaging over terms.
  CHECK(reconstruction_loss({t2, t3}).scalar() ==
        doctest::Approx(1.5 * std::log(4.0)).epsilon(1e-12));

  // Down-weighted unmasked positions: only position 1 is masked.
  ReconstructionTerm t4{ad::Var::constant(Tensor::full({2, 4}, 0.25)), {0, 3}, {1}};
  CHECK(reconstruction_loss({t4}, 0.0).scalar() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  ReconstructionTerm bad{ad::Var::constant(hot), {4}, {0}};
  CHECK_THROWS_AS(reconstruction_loss({bad}), std::invalid_argument);
}

TEST_CASE("reward schedule") {
  RewardSchedule r3 = RewardSchedule::make(3);
  REQUIRE(r3.rewards.size() == 3);
  CHECK(r3.rewards[0] == 1.0);
  CHECK(r3.rewards[1] == 0.5);
  CHECK(r3.rewards[2] == 0.0);

  RewardSchedule r5 = RewardSchedule::make(5);
  CHECK(r5.rewards[1] == doctest::Approx(0.75));
  CHECK(r5.rewards[4] == 0.0);

  CHECK_THROWS_AS(RewardSchedule::make(1), std::invalid_argument);
}

TEST_CASE("rank loss closed forms") {
  RewardSchedule r = RewardSchedule::make(3);
  auto p = ad::Var::constant(Tensor({1, 3}, {0.9, 0.8, 0.7}));
  const double got = rank_loss({p}, r).scalar();
  CHECK(got == doctest::Approx(0.5177).epsilon(1e-3));

  // Exact value straight from the definition.
  const double e1 = std::exp(0.9), e2 = std::exp(0.8), e3 = std::exp(0.7);
  const double z = e1 + e2 + e3;
  const double expect = -(std::log(e1 / z) + 0.5 * std::log(e2 / z)) / 3.0;
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));

  auto flat = ad::Var::constant(Tensor::full({1, 3}, 0.4));
  CHECK(rank_loss({flat}, r).scalar() ==
        doctest::Approx(1.5 * std::log(3.0) / 3.0).epsilon(1e-12));

  RewardSchedule zero = RewardSchedule::make(3);
  zero.rewards = {0.0, 0.0, 0.0};
  CHECK(rank_loss({p}, zero).scalar() == 0.0);

  // Average over sentences.
  CHECK(rank_loss({p, flat}, r).scalar() ==
        doctest::Approx((expect + 1.5 * std::log(3.0) / 3.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("local loss is the plain sum of its parts") {
  auto a = ad::Var::constant(Tensor({1, 1}, {1.3863}));
  auto b = ad::Var::constant(Tensor({1, 1}, {0.5177}));
  LocalLoss l = local_loss(a, b);
  CHECK(l.total.scalar() == doctest::Approx(1.9040).epsilon(1e-4));
  CHECK(local_loss(b, a).total.scalar() == doctest::Approx(l.total.scalar()));
  auto z = ad::Var::constant(Tensor({1, 1}, {0.0}));
  CHECK(local_loss(z, z).total.scalar() == 0.0);
}

TEST_CASE("fuse-refine-predict pipeline gradients") {
  const std::size_t K = 8, d = 8, d_s = 8;
  FusionParams fuse = FusionParams::make(d_s, d, d, 31);
  TanStack tan(K, d, 32);
  PredictionLayer pl = PredictionLayer::make(d, 33);
  auto segments = ad::Var::param(randn({K, d}, 34));
  auto h = ad::Var::param(randn({1, d_s}, 35));
  const auto spans = moment_slots(K);

  ParamRegistry reg;
  fuse.register_params(reg, "fuse");
  tan.register_params(reg, "tan");
  pl.register_params(reg, "pl");
  std::vector<ad::Var> leaves{segments, h};
  for (auto& [n, v] : reg.items) leaves.push_back(v);

  auto build = [&] {
    ad::Var cells = ad::span_max_rows(segments, spans);
    ad::Var fused = fuse_sentence_moment_cells(h, cells, fuse);
    ad::Var refined = tan.refine_cells(fused);
    ad::Var scores = pl.predict_cells(refined);
    return ad::sum_all(ad::mul(scores, ad::Var::constant(randn(scores.value().shape(), 36))));
  };
  CHECK(max_rel_grad_error(build, leaves) < 1e-3);
}

TEST_CASE("rank and reconstruction loss gradients") {
  auto scores = ad::Var::param(randn({1, 3}, 41));
  RewardSchedule r = RewardSchedule::make(3);
  CHECK(max_rel_grad_error([&] { return rank_loss({scores}, r); }, {scores}) < 1e-3);

  auto logits = ad::Var::param(randn({3, 5}, 42));
  auto build = [&] {
    ReconstructionTerm t{ad::softmax_rows(logits), {1, 4, 0}, {0, 2}};
    return reconstruction_loss({t}, 0.1);
  };
  CHECK(max_rel_grad_error(build, {logits}) < 1e-3);
}

TEST_CASE("reconstructor memorizes a single pair") {
  const std::size_t dim = 8, n_v = 8, J = 3;
  Reconstructor rec(dim, n_v, 51);
  ParamRegistry reg;
  rec.register_params(reg, "rec");

  auto words = ad::Var::constant(randn({J, dim}, 52));
  auto span = ad::Var::constant(randn({2, dim}, 53));
  const std::vector<std::size_t> targets{3, 5, 2};
  const std::vector<std::size_t> masked{0, 2};

  double prev = 1e9;
  int increases = 0;
  double lr = 0.2;
  for (int step = 0; step < 500; ++step) {
    for (auto& [n, v] : reg.items) v.zero_grad();
    ReconstructionTerm t{rec.word_distributions(words, span), targets, masked};
    ad::Var loss = reconstruction_loss({t});
    ad::backward(loss);
    for (auto& [n, v] : reg.items)
      if (v.has_grad()) v.mutable_value().add_scaled(v.grad(), -lr);
    if (step < 200) {
      if (loss.scalar() > prev) ++increases;
      prev = loss.scalar();
    }
  }
  CHECK(increases <= 10);  // at most 5% non-monotone over the first 200 steps

  ad::Var final_dist = rec.word_distributions(words, span);
  for (std::size_t p : masked) {
    std::size_t argmax = 0;
    for (std::size_t v = 1; v < n_v; ++v)
      if (final_dist.value().at(p, v) > final_dist.value().at(p, argmax)) argmax = v;
    CHECK(argmax == targets[p]);
  }
}
