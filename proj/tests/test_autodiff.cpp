#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "photon/autodiff.h"
#include "test_support.h"

using namespace photon;
using photon::testing::central_diff;
using photon::testing::rel_err;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, real lo = -2, real hi = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = static_cast<real>(d(rng));
  return t;
}

// Builds f(inputs) -> tensor, reduces it against fixed random weights, and
// compares every input gradient with central differences.
real max_fd_error(std::vector<Shape> shapes, const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& f,
                  std::uint64_t seed = 1) {
  std::vector<ad::Param> params;
  for (std::size_t i = 0; i < shapes.size(); ++i) params.emplace_back(uniform(shapes[i], seed + i));
  Tensor weights;
  auto loss = [&](ad::Tape& tape) {
    std::vector<ad::Var> vars;
    for (auto& p : params) vars.push_back(p.var());
    auto out = f(tape, vars);
    if (weights.empty()) weights = uniform(out.shape(), seed + 100);
    return ad::sum(tape, ad::mul(tape, out, ad::constant(weights)));
  };
  {
    ad::Tape tape;
    tape.backward(loss(tape));
  }
  real worst = 0;
  for (auto& p : params) {
    const Tensor analytic = p.grad();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const real num = central_diff(
          [&] {
            ad::Tape tape(false);
            return loss(tape).value()[0];
          },
          p.value()[i]);
      worst = std::max(worst, rel_err(analytic[i], num));
    }
  }
  return worst;
}

constexpr real kTol = 1e-6;

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<real>(5)), DimensionError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at({1, 2}), 1.5);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Matmul, IdentityAndSmallProduct) {
  ad::Tape tape(false);
  auto b = uniform({3, 4}, 7);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1;
  auto out = ad::matmul(tape, ad::constant(eye), ad::constant(b));
  EXPECT_EQ(out.value(), b);

  auto p = ad::matmul(tape, ad::constant(Tensor({1, 2}, {1, 2})), ad::constant(Tensor({2, 1}, {3, 4})));
  EXPECT_EQ(p.value()[0], 11);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  ad::Tape tape(false);
  try {
    ad::matmul(tape, ad::constant(Tensor({2, 3})), ad::constant(Tensor({4, 2})));
    FAIL() << "expected a dimension error";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  EXPECT_LT(max_fd_error({{4, 5}, {5, 2}}, [](ad::Tape& t, const auto& v) { return ad::matmul(t, v[0], v[1]); }), kTol);
  EXPECT_LT(max_fd_error({{2, 3, 4}, {2, 4, 3}}, [](ad::Tape& t, const auto& v) { return ad::matmul(t, v[0], v[1]); }),
            kTol);
  EXPECT_LT(max_fd_error({{2, 3, 4}, {4, 3}}, [](ad::Tape& t, const auto& v) { return ad::matmul(t, v[0], v[1]); }),
            kTol);
}

TEST(Softmax, Examples) {
  ad::Tape tape(false);
  auto y = ad::softmax_rows(tape, ad::constant(Tensor({1, 2}, {0, 0})));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);

  // Row 0 may only see key 0.
  auto m = ad::softmax_rows(tape, ad::constant(Tensor({2, 2}, {3, 100, 1, 2})), ad::CausalMask{0, 0});
  EXPECT_EQ(m.value()[0], 1);
  EXPECT_EQ(m.value()[1], 0);

  auto r = ad::softmax_rows(tape, ad::constant(uniform({3, 7}, 3)));
  for (std::size_t i = 0; i < 3; ++i) {
    real s = 0;
    for (std::size_t k = 0; k < 7; ++k) s += r.value()[i * 7 + k];
    EXPECT_NEAR(s, 1, 1e-12);
  }
}

TEST(Softmax, FullyMaskedRowIsAnError) {
  ad::Tape tape(false);
  EXPECT_THROW(ad::softmax_rows(tape, ad::constant(Tensor({2, 2})), ad::CausalMask{-1, 0}), ContractError);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  EXPECT_LT(max_fd_error({{3, 7}}, [](ad::Tape& t, const auto& v) { return ad::softmax_rows(t, v[0]); }), kTol);
  EXPECT_LT(max_fd_error({{2, 4, 4}},
                         [](ad::Tape& t, const auto& v) { return ad::softmax_rows(t, v[0], ad::CausalMask{0, 0}); }),
            kTol);
  EXPECT_LT(max_fd_error({{3, 5}},
                         [](ad::Tape& t, const auto& v) { return ad::softmax_rows(t, v[0], ad::CausalMask{2, 0}); }),
            kTol);
}

TEST(RmsNorm, Examples) {
  ad::Tape tape(false);
  auto ones = ad::constant(Tensor({4}, 1));
  auto y = ad::rmsnorm(tape, ad::constant(Tensor({2, 4}, 1)), ones);
  for (real v : y.value().data()) EXPECT_NEAR(v, 1, 1e-6);
  auto z = ad::rmsnorm(tape, ad::constant(Tensor({1, 4}, 0)), ones);
  for (real v : z.value().data()) EXPECT_EQ(v, 0);
  EXPECT_THROW(ad::rmsnorm(tape, ad::constant(Tensor({1, 4})), ad::constant(Tensor({3}, 1))), DimensionError);
}

TEST(RmsNorm, GradientMatchesFiniteDifferences) {
  EXPECT_LT(max_fd_error({{3, 6}, {6}}, [](ad::Tape& t, const auto& v) { return ad::rmsnorm(t, v[0], v[1]); }), kTol);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  EXPECT_LT(max_fd_error({{3, 4}, {3, 4}}, [](ad::Tape& t, const auto& v) { return ad::add(t, v[0], v[1]); }), kTol);
  EXPECT_LT(max_fd_error({{2, 3, 4}, {4}}, [](ad::Tape& t, const auto& v) { return ad::add(t, v[0], v[1]); }), kTol);
  EXPECT_LT(max_fd_error({{3, 4}, {3, 4}}, [](ad::Tape& t, const auto& v) { return ad::sub(t, v[0], v[1]); }), kTol);
  EXPECT_LT(max_fd_error({{3, 4}, {3, 4}}, [](ad::Tape& t, const auto& v) { return ad::mul(t, v[0], v[1]); }), kTol);
  EXPECT_LT(max_fd_error({{3, 4}, {3, 4}}, [](ad::Tape& t, const auto& v) { return ad::mul(t, v[0], v[1]); }), kTol);
  EXPECT_LT(max_fd_error({{2, 3, 4}, {3, 4}}, [](ad::Tape& t, const auto& v) { return ad::mul(t, v[0], v[1]); }), kTol);
  EXPECT_LT(max_fd_error({{3, 4}}, [](ad::Tape& t, const auto& v) { return ad::scale(t, v[0], -1.75); }), kTol);
  EXPECT_LT(max_fd_error({{3, 4}}, [](ad::Tape& t, const auto& v) { return ad::silu(t, v[0]); }), kTol);
}

TEST(Elementwise, OnlyTrailingSuffixBroadcasts) {
  ad::Tape tape(false);
  EXPECT_THROW(ad::add(tape, ad::constant(Tensor({3, 4})), ad::constant(Tensor({3}))), DimensionError);
}

TEST(Layout, GradientsMatchFiniteDifferences) {
  EXPECT_LT(max_fd_error({{2, 3, 4}}, [](ad::Tape& t, const auto& v) { return ad::transpose(t, v[0]); }), kTol);
  EXPECT_LT(max_fd_error({{3, 2}, {3, 5}}, [](ad::Tape& t, const auto& v) { return ad::concat(t, {v[0], v[1]}); }),
            kTol);
  EXPECT_LT(max_fd_error({{3, 7}},
                         [](ad::Tape& t, const auto& v) {
                           auto parts = ad::split(t, v[0], {2, 5});
                           return ad::concat(t, {parts[1], ad::scale(t, parts[0], 3)});
                         }),
            kTol);
  EXPECT_LT(max_fd_error({{2, 6}}, [](ad::Tape& t, const auto& v) { return ad::slice_last(t, v[0], 1, 3); }), kTol);
  EXPECT_LT(max_fd_error({{2, 6}}, [](ad::Tape& t, const auto& v) { return ad::reshape(t, v[0], {3, 4}); }), kTol);
  EXPECT_LT(max_fd_error({{2, 6}}, [](ad::Tape& t, const auto& v) { return ad::sum(t, v[0]); }), kTol);
}

TEST(Embedding, GatherAndGradient) {
  const std::vector<std::uint32_t> ids{2, 0, 2};
  EXPECT_LT(max_fd_error({{4, 3}}, [&](ad::Tape& t, const auto& v) { return ad::embedding(t, v[0], ids); }), kTol);
  ad::Tape tape(false);
  const std::vector<std::uint32_t> bad{4};
  EXPECT_THROW(ad::embedding(tape, ad::constant(Tensor({4, 3})), bad), DimensionError);
}

TEST(CrossEntropy, ValueAndGradient) {
  // Uniform logits over 256 classes: ln 256 per row.
  ad::Tape tape(false);
  const std::vector<std::uint32_t> targets{5, 9};
  const std::vector<real> w{1, 1};
  auto l = ad::cross_entropy(tape, ad::constant(Tensor({2, 256}, 0)), targets, w);
  EXPECT_NEAR(l.value()[0], 2 * std::log(256.0), 1e-12);

  const std::vector<std::uint32_t> t3{0, 3, 1};
  const std::vector<real> w3{1, 0.5, 0};
  EXPECT_LT(max_fd_error({{3, 4}}, [&](ad::Tape& t, const auto& v) { return ad::cross_entropy(t, v[0], t3, w3); }), kTol);
}

TEST(Backward, SquareAtThree) {
  ad::Param x(Tensor::scalar(3));
  ad::Tape tape;
  tape.backward(ad::mul(tape, x.var(), x.var()));
  EXPECT_EQ(x.grad()[0], 6);
}

TEST(Backward, SumOfRmsNormMatchesFiniteDifferences) {
  EXPECT_LT(max_fd_error({{2, 5}, {5}},
                         [](ad::Tape& t, const auto& v) {
                           return ad::reshape(t, ad::sum(t, ad::rmsnorm(t, v[0], v[1])), {1});
                         }),
            kTol);
}

TEST(Backward, NonScalarOutputIsAContractError) {
  ad::Param x(Tensor({2}, 1));
  ad::Tape tape;
  auto y = ad::scale(tape, x.var(), 2);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, GradientsAccumulateUntilCleared) {
  ad::Param x(Tensor::scalar(2));
  for (int i = 0; i < 2; ++i) {
    ad::Tape tape;
    tape.backward(ad::scale(tape, x.var(), 3));
  }
  EXPECT_EQ(x.grad()[0], 6);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Numerics, NonFiniteOutputIsReported) {
  ad::Tape tape(false);
  auto big = ad::constant(Tensor({1, 1}, 1e300));
  EXPECT_THROW(ad::mul(tape, big, big), NumericError);
  auto nan = ad::constant(Tensor({1, 1}, std::nan("")));
  EXPECT_THROW(ad::add(tape, nan, big), NumericError);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto run = [] {
    ad::Tape tape(false);
    auto a = ad::constant(uniform({4, 6}, 11));
    auto b = ad::constant(uniform({6, 6}, 12));
    return ad::softmax_rows(tape, ad::matmul(tape, a, b), ad::CausalMask{2, 0}).value();
  };
  EXPECT_EQ(run(), run());
}
