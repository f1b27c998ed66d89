#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "photon/flat.h"
#include "photon/losses.h"
#include "photon/training.h"
#include "test_support.h"

using namespace photon;
using photon::testing::gradcheck;
using photon::testing::gradcheck_config;
using photon::testing::random_tokens;
using photon::testing::toy_config;

namespace {

Tensor gaussian(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Tensor t(std::move(s));
  for (auto& x : t.data()) x = n(rng);
  return t;
}

// Direct triple-loop versions of the auxiliary losses.
real brute_mse(const Tensor& a, const Tensor& b) {
  real s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

real brute_cos(const Tensor& a, const Tensor& b) {
  const std::size_t rows = a.shape()[0], d = a.shape()[1];
  real s = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    real ab = 0, aa = 0, bb = 0;
    for (std::size_t j = 0; j < d; ++j) {
      ab += a[r * d + j] * b[r * d + j];
      aa += a[r * d + j] * a[r * d + j];
      bb += b[r * d + j] * b[r * d + j];
    }
    s += 1 - ab / std::sqrt(aa * bb);
  }
  return s;
}

Tensor row_range(const Tensor& t, std::size_t first, std::size_t n) {
  const std::size_t d = t.shape()[1];
  return Tensor({n, d}, std::vector<real>(t.data().begin() + static_cast<std::ptrdiff_t>(first * d),
                                          t.data().begin() + static_cast<std::ptrdiff_t>((first + n) * d)));
}

}  // namespace

TEST(TokenNll, UniformLogitsGiveLogVocab) {
  ad::Tape tape(false);
  const std::vector<TokenId> tokens{1, 4, 5, 6};
  std::size_t scored = 0;
  auto l = token_nll(tape, ad::constant(Tensor({4, 256}, 0)), tokens, 0, &scored);
  EXPECT_NEAR(l.value()[0], std::log(256.0), 1e-12);
  EXPECT_EQ(scored, 3u);
}

TEST(TokenNll, PaddingIsSkippedAndEdgeCasesThrow) {
  ad::Tape tape(false);
  Tensor logits = gaussian({4, 5}, 1);
  const std::vector<TokenId> padded{2, 3, 0, 0};
  std::size_t scored = 0;
  auto l = token_nll(tape, ad::constant(logits), padded, 0, &scored);
  EXPECT_EQ(scored, 1u);
  real lse = 0;
  for (std::size_t k = 0; k < 5; ++k) lse += std::exp(logits[5 + k]);
  EXPECT_NEAR(l.value()[0], std::log(lse) - logits[5 + 3], 1e-12);

  const std::vector<TokenId> one{3};
  EXPECT_THROW(token_nll(tape, ad::constant(Tensor({1, 5})), one, 0), ContractError);
  const std::vector<TokenId> all_pad{3, 0, 0};
  EXPECT_THROW(token_nll(tape, ad::constant(Tensor({3, 5})), all_pad, 0), ContractError);
}

TEST(Dissimilarity, ConstantOffsetGivesSquaredOffset) {
  ad::Tape tape(false);
  const Tensor x = gaussian({3, 4}, 2);
  Tensor y = x;
  for (auto& v : y.data()) v += 0.5;
  LevelState lo{ad::Var(), ad::constant(x), ad::constant(y)};
  LevelState hi{ad::constant(x), ad::constant(x), ad::Var()};
  const auto rec = reconstruction_loss(tape, {lo, hi}, LossOptions{});
  EXPECT_NEAR(rec.value()[0], 0.25, 1e-12);
}

TEST(Dissimilarity, MatchesBruteForce) {
  ad::Tape tape(false);
  const Tensor a = gaussian({5, 6}, 3), b = gaussian({5, 6}, 4);
  EXPECT_NEAR(dissimilarity_sum(tape, ad::constant(a), ad::constant(b), Dissimilarity::mse).value()[0],
              brute_mse(a, b), 1e-10);
  EXPECT_NEAR(dissimilarity_sum(tape, ad::constant(a), ad::constant(b), Dissimilarity::cosine).value()[0],
              brute_cos(a, b), 1e-6);
  EXPECT_NEAR(dissimilarity_sum(tape, ad::constant(a), ad::constant(a), Dissimilarity::cosine).value()[0], 0, 1e-6);
}

TEST(AuxLosses, MatchBruteForceOnAModel) {
  PhotonModel m(toy_config({2, 2}, {2, 2}, 4), 3);
  const auto tokens = random_tokens(16, 17, 1);
  ad::Tape tape(false);
  auto res = m.forward(tape, tokens);
  for (auto kind : {Dissimilarity::mse, Dissimilarity::cosine}) {
    LossOptions o;
    o.dissimilarity = kind;
    real rec = 0, ctx = 0;
    std::size_t rec_n = 0;
    for (std::size_t l = 0; l < 2; ++l) {
      const Tensor& x = res.levels[l].contextual.value();
      const Tensor& xr = res.levels[l].reconstructed.value();
      if (xr.shape() != x.shape()) continue;  // bottom decoder is wider than the token embedding
      rec += kind == Dissimilarity::mse ? brute_mse(xr, x) : brute_cos(xr, x);
      rec_n += kind == Dissimilarity::mse ? x.numel() : x.shape()[0];
    }
    for (std::size_t l = 1; l <= 2; ++l) {
      const Tensor& x = res.levels[l].contextual.value();
      const Tensor& a = res.levels[l].aggregated.value();
      const std::size_t mm = x.shape()[0], d = x.shape()[1];
      const Tensor p = row_range(x, 0, mm - 1), t = row_range(a, 1, mm - 1);
      ctx += (kind == Dissimilarity::mse ? brute_mse(p, t) : brute_cos(p, t)) /
             static_cast<real>((mm - 1) * (kind == Dissimilarity::mse ? d : 1));
    }
    EXPECT_NEAR(reconstruction_loss(tape, res.levels, o).value()[0], rec / static_cast<real>(rec_n), 1e-6);
    EXPECT_NEAR(next_context_loss(tape, res.levels, o).value()[0], ctx, 1e-6);
  }
}

TEST(AuxLosses, SingleTopUnitHasNoContextTerm) {
  PhotonModel m(toy_config({2, 2}, {2, 2}, 4), 3);
  ad::Tape tape(false);
  auto res = m.forward(tape, random_tokens(4, 17, 1));
  // Level 1 has two units, level 2 only one.
  const Tensor& x = res.levels[1].contextual.value();
  const Tensor& a = res.levels[1].aggregated.value();
  const real expect = brute_mse(row_range(x, 0, 1), row_range(a, 1, 1)) / 8;
  EXPECT_NEAR(next_context_loss(tape, res.levels, LossOptions{}).value()[0], expect, 1e-12);
}

TEST(TotalLoss, WeightsCombineTerms) {
  PhotonModel m(toy_config({2, 2}, {2, 2}, 4), 5);
  const auto tokens = random_tokens(16, 17, 2);
  ad::Tape tape(false);
  LossOptions o;
  o.weights = {0.3, 0.7};
  auto b = m.loss(tape, tokens, o);
  EXPECT_NEAR(b.total_value(), b.token_nll_value() + 0.3 * b.rec_value() + 0.7 * b.context_value(), 1e-12);
  o.weights = {-1, 0};
  EXPECT_THROW(m.loss(tape, tokens, o), ContractError);
}

TEST(TotalLoss, ZeroWeightsAreExactlyTheTokenLoss) {
  PhotonModel m(gradcheck_config(), 6);
  const auto tokens = random_tokens(16, 17, 3);
  auto grads = [&](bool via_total) {
    m.params().zero_grad();
    ad::Tape tape;
    auto b = m.loss(tape, tokens, LossOptions{});
    tape.backward(via_total ? b.total : b.token_nll);
    std::vector<Tensor> g;
    for (const auto& n : m.params().names()) {
      g.push_back(m.params().get(n).has_grad() ? m.params().get(n).grad() : Tensor(m.params().get(n).shape()));
    }
    return std::make_pair(b.total_value() == b.token_nll_value(), g);
  };
  const auto [same_value, a] = grads(true);
  const auto [unused, b] = grads(false);
  EXPECT_TRUE(same_value);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << m.params().names()[i];
}

TEST(Gradients, WholeModelMatchesFiniteDifferences) {
  PhotonModel m(gradcheck_config(), 7);
  LossOptions o;
  o.weights = {0.5, 0.5};
  o.stop_target_grad = false;
  const auto r = gradcheck(m, random_tokens(16, 17, 4), o, 30, 1);
  EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
}

TEST(Gradients, StopGradientDropsTheTargetPath) {
  // With only the reconstruction term and detached targets, the encoder-side
  // embedding gets gradient solely through the decoders, which finite
  // differences of the full objective do not reproduce.
  PhotonModel m(gradcheck_config(), 8);
  const auto tokens = random_tokens(16, 17, 5);
  LossOptions o;
  o.weights = {1, 0};
  o.stop_target_grad = false;
  EXPECT_LT(gradcheck(m, tokens, o, 20, 2).max_rel_err, 1e-4);
  o.stop_target_grad = true;
  EXPECT_GT(gradcheck(m, tokens, o, 60, 2).max_rel_err, 1e-3);
}

TEST(Schedule, WarmupEndpoints) {
  TrainConfig c;
  c.lr = 0.01;
  c.warmup = 100;
  EXPECT_EQ(lr_at(c, 0), 0);
  EXPECT_DOUBLE_EQ(lr_at(c, 50), 0.005);
  EXPECT_EQ(lr_at(c, 100), 0.01);
  EXPECT_EQ(lr_at(c, 5000), 0.01);
  c.warmup = 0;
  EXPECT_EQ(lr_at(c, 1), 0.01);
}

TEST(Adam, FirstStepMovesBySignedLearningRate) {
  ParamStore store;
  auto& p = store.constant("w", {3}, 1);
  p.grad() = Tensor({3}, {0.5, -2, 0});
  Adam opt(0.9, 0.95, 1e-8);
  opt.step(store, 0.1);
  // m-hat = g, v-hat = g^2: the update is lr * g / (|g| + eps).
  EXPECT_NEAR(p.value()[0], 1 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value()[1], 1 + 0.1 * 2 / (2 + 1e-8), 1e-15);
  EXPECT_EQ(p.value()[2], 1);

  // Second step with a new gradient, against the textbook recurrences.
  p.grad() = Tensor({3}, {1, 1, 1});
  opt.step(store, 0.1);
  const real m = 0.9 * 0.1 * 0.5 + 0.1 * 1, v = 0.95 * 0.05 * 0.25 + 0.05 * 1;
  const real mh = m / (1 - 0.81), vh = v / (1 - 0.9025);
  EXPECT_NEAR(p.value()[0], 1 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
}

TEST(Windows, SampledDeterministicallyAndPadded) {
  std::vector<TokenId> stream{5, 6, 7};
  std::mt19937_64 rng(1);
  auto w = sample_windows(stream, 5, 2, 0, rng);
  EXPECT_EQ(w[0], (std::vector<TokenId>{5, 6, 7, 0, 0}));
  std::vector<TokenId> longer(100);
  for (std::size_t i = 0; i < 100; ++i) longer[i] = static_cast<TokenId>(i + 2);
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(sample_windows(longer, 8, 3, 0, a), sample_windows(longer, 8, 3, 0, b));
}

TEST(Train, ReplayIsBitIdentical) {
  const auto stream = random_tokens(300, 17, 6);
  TrainConfig c;
  c.steps = 4;
  c.batch = 2;
  c.context = 8;
  c.warmup = 2;
  c.lr = 1e-2;
  c.seed = 3;
  auto run = [&] {
    PhotonModel m(toy_config({2, 2}, {2, 2}, 4), 11);
    std::ostringstream log;
    auto steps = train(m, stream, c, {&log, {}, {}});
    return std::make_pair(log.str(), m.params().get("lm_head").value());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.first.find("\n4\t"), std::string::npos) << a.first;
}

TEST(Train, LossFallsOnARepeatedPattern) {
  std::vector<TokenId> stream;
  for (int i = 0; i < 40; ++i)
    for (TokenId t : {2u, 3u, 4u, 5u}) stream.push_back(t);
  TrainConfig c;
  c.steps = 60;
  c.batch = 2;
  c.context = 8;
  c.warmup = 5;
  c.lr = 1e-2;
  PhotonModel m(toy_config({2, 2}, {2, 2}, 4), 12);
  const real before = evaluate(m, stream, 8).mean_nll;
  train(m, stream, c);
  EXPECT_LT(evaluate(m, stream, 8).mean_nll, before * 0.5);
}

TEST(Train, FlatModelTrainsThroughTheSameLoop) {
  const auto stream = random_tokens(200, 17, 7);
  FlatModel f(FlatConfig{17, 8, 16, 1, 2, 1, 0}, 1);
  TrainConfig c;
  c.steps = 3;
  c.context = 8;
  c.batch = 1;
  EXPECT_EQ(train(f, stream, c).size(), 3u);
}

TEST(Evaluate, ContextMustMatchTheModelMultiple) {
  PhotonModel m(toy_config({2, 2}, {2, 2}, 4), 13);
  EXPECT_THROW(evaluate(m, random_tokens(40, 17, 1), 6), ConfigError);
  const auto r = evaluate(m, random_tokens(40, 17, 1), 8);
  EXPECT_EQ(r.scored_tokens, 5u * 7u);
  EXPECT_NEAR(r.perplexity, std::exp(r.mean_nll), 1e-9);
}
