#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "maneuver/nn.hpp"
#include "test_util.hpp"

namespace maneuver::nn {
namespace {

using maneuver::testing::random_vector;
using maneuver::testing::randomize;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ---- dense ----------------------------------------------------------------

TEST(Dense, Identity) {
  Param<double> W("W", Tensor<double>({2, 2}, {1, 0, 0, 1}));
  Param<double> b("b", Shape{2});
  const std::vector<double> x{3, -1};
  EXPECT_EQ(dense<double>(x, W, b), (std::vector<double>{3, -1}));
}

TEST(Dense, HandArithmetic) {
  Param<double> W("W", Tensor<double>({2, 2}, {1, 2, 3, 4}));
  Param<double> b("b", Tensor<double>({2}, {1, 1}));
  EXPECT_EQ(dense<double>(std::vector<double>{1, 1}, W, b), (std::vector<double>{4, 8}));
  EXPECT_EQ(dense<double>(std::vector<double>{0, 0}, W, b), (std::vector<double>{1, 1}));
}

TEST(Dense, ShapeMismatch) {
  Param<double> W("W", Shape{2, 3});
  Param<double> b("b", Shape{2});
  EXPECT_ERROR_KIND(dense<double>(std::vector<double>{1, 2}, W, b), ErrorKind::ShapeMismatch);
}

TEST(Dense, GradCheck) {
  std::mt19937_64 rng(1);
  Param<double> W("W", Shape{4, 3});
  Param<double> b("b", Shape{4});
  randomize(W, rng);
  randomize(b, rng);
  auto x = random_vector(3, rng);
  const auto r = random_vector(4, rng);
  auto loss = [&] { return dot(r, dense<double>(x, W, b)); };
  std::vector<double> dx(3);
  dense_backward<double>(x, r, W, b, dx);
  EXPECT_TRUE(grad_check("dx", x, dx, loss).passed);
  const auto gw = W.grad.values();
  const auto gb = b.grad.values();
  const auto rw = grad_check("dW", W.value.span(), gw, loss);
  const auto rb = grad_check("db", b.value.span(), gb, loss);
  EXPECT_LT(rw.max_rel_error, 1e-4);
  EXPECT_LT(rb.max_rel_error, 1e-4);
}

TEST(GradCheck, FlagsWrongGradient) {
  std::mt19937_64 rng(2);
  Param<double> W("W", Shape{4, 3});
  Param<double> b("b", Shape{4});
  randomize(W, rng);
  auto x = random_vector(3, rng);
  const auto r = random_vector(4, rng);
  auto loss = [&] { return dot(r, dense<double>(x, W, b)); };
  std::vector<double> dx(3);
  dense_backward<double>(x, r, W, b, dx);
  dx[1] *= 1.01;
  const auto report = grad_check("dx", x, dx, loss);
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_rel_error, 1e-3);
}

// ---- conv1x1 --------------------------------------------------------------

TEST(Conv1x1, ReducesImageFeatureDepth) {
  std::mt19937_64 rng(3);
  Tensor<double> x({8, 8, 1536});
  x.values() = random_vector(x.size(), rng);
  Param<double> W("W", Shape{1536, 20});
  Param<double> b("b", Shape{20});
  const auto y = conv1x1(x, W, b);
  EXPECT_EQ(y.shape(), (Shape{8, 8, 20}));
}

TEST(Conv1x1, IdentityKernel) {
  std::mt19937_64 rng(4);
  Tensor<double> x({3, 2, 4});
  x.values() = random_vector(x.size(), rng);
  Param<double> W("W", Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) W.value(i, i) = 1.0;
  Param<double> b("b", Shape{4});
  EXPECT_EQ(conv1x1(x, W, b), x);
}

TEST(Conv1x1, SinglePositionEqualsDense) {
  std::mt19937_64 rng(5);
  Tensor<double> x({1, 1, 5});
  x.values() = random_vector(5, rng);
  Param<double> W("W", Shape{5, 3});
  Param<double> b("b", Shape{3});
  randomize(W, rng);
  randomize(b, rng);
  // dense takes [out x in]; transpose the pointwise kernel.
  Param<double> Wd("Wd", Shape{3, 5});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t o = 0; o < 3; ++o) Wd.value(o, i) = W.value(i, o);
  const auto y = conv1x1(x, W, b);
  const auto yd = dense<double>(x.values(), Wd, b);
  for (std::size_t o = 0; o < 3; ++o) EXPECT_EQ(y[o], yd[o]);
}

TEST(Conv1x1, MatchesBruteForcePerPosition) {
  std::mt19937_64 rng(6);
  for (std::size_t cin : {1u, 3u, 7u}) {
    Tensor<double> x({3, 3, cin});
    x.values() = random_vector(x.size(), rng);
    Param<double> W("W", Shape{cin, 4});
    Param<double> b("b", Shape{4});
    randomize(W, rng);
    randomize(b, rng);
    const auto y = conv1x1(x, W, b);
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t w = 0; w < 3; ++w)
        for (std::size_t o = 0; o < 4; ++o) {
          double acc = b.value[o];
          for (std::size_t i = 0; i < cin; ++i) acc += x[(h * 3 + w) * cin + i] * W.value(i, o);
          EXPECT_NEAR(y[(h * 3 + w) * 4 + o], acc, 1e-12);
        }
  }
}

TEST(Conv1x1, ChannelMismatch) {
  Tensor<double> x({2, 2, 3});
  Param<double> W("W", Shape{4, 2});
  Param<double> b("b", Shape{2});
  EXPECT_ERROR_KIND(conv1x1(x, W, b), ErrorKind::ShapeMismatch);
}

TEST(Conv1x1, GradCheck) {
  std::mt19937_64 rng(7);
  Tensor<double> x({3, 2, 4});
  x.values() = random_vector(x.size(), rng);
  Param<double> W("W", Shape{4, 3});
  Param<double> b("b", Shape{3});
  randomize(W, rng);
  randomize(b, rng);
  Tensor<double> r({3, 2, 3});
  r.values() = random_vector(r.size(), rng);
  auto loss = [&] { return dot(r.values(), conv1x1(x, W, b).values()); };
  Tensor<double> dx;
  conv1x1_backward(x, r, W, b, &dx);
  EXPECT_LT(grad_check("dx", x.span(), dx.values(), loss).max_rel_error, 1e-4);
  const auto gw = W.grad.values();
  EXPECT_LT(grad_check("dW", W.value.span(), gw, loss).max_rel_error, 1e-4);
  const auto gb = b.grad.values();
  EXPECT_LT(grad_check("db", b.value.span(), gb, loss).max_rel_error, 1e-4);
}

// ---- batchnorm ------------------------------------------------------------

TEST(BatchNorm, TwoRowColumn) {
  BatchNormState<double> bn(1, 0.1, 1e-12);
  const auto y = batchnorm_forward(Tensor<double>({2, 1}, {1, 3}), bn);
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(BatchNorm, ConstantColumnGivesBeta) {
  BatchNormState<double> bn(2);
  bn.beta.value[0] = 0.5;
  bn.beta.value[1] = -2.0;
  const auto y = batchnorm_forward(Tensor<double>({3, 2}, {4, 1, 4, 1, 4, 1}), bn);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_DOUBLE_EQ(y(r, 0), 0.5);
    EXPECT_DOUBLE_EQ(y(r, 1), -2.0);
  }
}

TEST(BatchNorm, EvalIdentityStats) {
  BatchNormState<double> bn(3, 0.1, 0.0);
  bn.mode = Mode::Eval;
  const Tensor<double> x({1, 3}, {0.3, -4.0, 7.5});
  EXPECT_EQ(batchnorm_forward(x, bn), x);
}

TEST(BatchNorm, TrainNeedsTwoRows) {
  BatchNormState<double> bn(2);
  EXPECT_ERROR_KIND(batchnorm_forward(Tensor<double>({1, 2}, {1, 2}), bn), ErrorKind::BatchTooSmall);
}

TEST(BatchNorm, RunningStatisticsUpdate) {
  BatchNormState<double> bn(1, 0.5, 1e-5);
  batchnorm_forward(Tensor<double>({2, 1}, {1, 3}), bn);
  EXPECT_DOUBLE_EQ(bn.running_mean[0], 0.5 * 0.0 + 0.5 * 2.0);
  EXPECT_DOUBLE_EQ(bn.running_var[0], 0.5 * 1.0 + 0.5 * 2.0);  // unbiased var of {1,3} is 2
}

TEST(BatchNorm, StandardizesEveryFeature) {
  std::mt19937_64 rng(8);
  for (std::size_t B : {2u, 3u, 7u, 16u}) {
    BatchNormState<double> bn(5);
    bn.eps = 1e-12;
    Tensor<double> x({B, 5});
    x.values() = random_vector(x.size(), rng, 3.0);
    const auto y = batchnorm_forward(x, bn);
    for (std::size_t d = 0; d < 5; ++d) {
      double m = 0.0, v = 0.0;
      for (std::size_t r = 0; r < B; ++r) m += y(r, d);
      m /= static_cast<double>(B);
      for (std::size_t r = 0; r < B; ++r) v += (y(r, d) - m) * (y(r, d) - m);
      v /= static_cast<double>(B);
      EXPECT_LT(std::abs(m), 1e-8);
      EXPECT_NEAR(v, 1.0, 1e-6);
    }
  }
}

TEST(BatchNorm, MaskedRowsDoNotInfluenceStatistics) {
  BatchNormState<double> bn(1, 0.1, 1e-12);
  const std::vector<std::uint8_t> valid{1, 0, 1};
  auto y = batchnorm_forward(Tensor<double>({3, 1}, {1, 1000, 3}), bn, nullptr, valid);
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[2], 1.0, 1e-9);
}

void check_batchnorm_gradients(Mode mode, std::uint64_t seed, std::vector<std::uint8_t> valid = {}) {
  std::mt19937_64 rng(seed);
  const std::size_t B = valid.empty() ? 4 : valid.size(), D = 3;
  BatchNormState<double> bn(D);
  bn.mode = mode;
  randomize(bn.gamma, rng);
  randomize(bn.beta, rng);
  bn.running_mean = random_vector(D, rng);
  for (auto& v : bn.running_var) v = 0.5 + std::abs(random_vector(1, rng)[0]);
  Tensor<double> x({B, D});
  x.values() = random_vector(x.size(), rng, 2.0);
  Tensor<double> r({B, D});
  r.values() = random_vector(r.size(), rng);
  auto loss = [&] {
    auto y = batchnorm_forward(x, bn, nullptr, valid, false, false);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (valid.empty() || valid[i / D]) s += r[i] * y[i];
    }
    return s;
  };
  BatchNormCache<double> cache;
  batchnorm_forward(x, bn, &cache, valid, false, false);
  Tensor<double> masked_r = r;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!valid.empty() && !valid[i / D]) masked_r[i] = 0.0;
  }
  const auto dx = batchnorm_backward(masked_r, bn, cache);
  EXPECT_LT(grad_check("dx", x.span(), dx.values(), loss).max_rel_error, 1e-4);
  const auto gg = bn.gamma.grad.values();
  const auto gb = bn.beta.grad.values();
  EXPECT_LT(grad_check("dgamma", bn.gamma.value.span(), gg, loss).max_rel_error, 1e-4);
  EXPECT_LT(grad_check("dbeta", bn.beta.value.span(), gb, loss).max_rel_error, 1e-4);
}

TEST(BatchNorm, GradCheckTrain) { check_batchnorm_gradients(Mode::Train, 9); }
TEST(BatchNorm, GradCheckEval) { check_batchnorm_gradients(Mode::Eval, 10); }
TEST(BatchNorm, GradCheckMaskedTrain) { check_batchnorm_gradients(Mode::Train, 11, {1, 0, 1, 1, 0}); }

// ---- lstm -----------------------------------------------------------------

TEST(Lstm, ZeroEverythingStaysZero) {
  LstmParams<double> p(3, 4);
  const auto out = lstm_cell_forward<double>(std::vector<double>(3, 0.0), LstmState<double>(4), p);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(out.h[k], 0.0);
    EXPECT_EQ(out.c[k], 0.0);
  }
}

TEST(Lstm, SaturatedGatesHoldCell) {
  LstmParams<double> p(1, 1);
  p.b.value[0] = -20.0;  // input
  p.b.value[1] = 20.0;   // forget
  p.b.value[3] = -20.0;  // output
  LstmState<double> s(1);
  s.c[0] = 0.7;
  const auto out = lstm_cell_forward<double>(std::vector<double>{0.0}, s, p);
  EXPECT_NEAR(out.c[0], 0.7, 1e-6);
  EXPECT_NEAR(out.h[0], 0.0, 1e-6);
}

TEST(Lstm, ShapeMismatch) {
  LstmParams<double> p(3, 4);
  EXPECT_ERROR_KIND(lstm_cell_forward<double>(std::vector<double>(2, 0.0), LstmState<double>(4), p),
                    ErrorKind::ShapeMismatch);
}

TEST(Lstm, GradCheck) {
  for (std::uint64_t seed : {12u, 13u, 14u}) {
    std::mt19937_64 rng(seed);
    const std::size_t D = 4, H = 5;
    LstmParams<double> p(D, H);
    randomize(p.Wx, rng, 0.5);
    randomize(p.Wh, rng, 0.5);
    randomize(p.b, rng, 0.5);
    auto x = random_vector(D, rng);
    LstmState<double> s(H);
    s.h = random_vector(H, rng);
    s.c = random_vector(H, rng);
    const auto rh = random_vector(H, rng);
    const auto rc = random_vector(H, rng);
    auto loss = [&] {
      const auto out = lstm_cell_forward<double>(x, s, p);
      return dot(rh, out.h) + dot(rc, out.c);
    };
    LstmCache<double> cache;
    lstm_cell_forward<double>(x, s, p, &cache);
    const auto g = lstm_cell_backward<double>(rh, rc, p, cache);
    EXPECT_LT(grad_check("dx", x, g.dx, loss).max_rel_error, 1e-4);
    EXPECT_LT(grad_check("dh", s.h, g.dh_prev, loss).max_rel_error, 1e-4);
    EXPECT_LT(grad_check("dc", s.c, g.dc_prev, loss).max_rel_error, 1e-4);
    const auto gwx = p.Wx.grad.values();
    const auto gwh = p.Wh.grad.values();
    const auto gb = p.b.grad.values();
    EXPECT_LT(grad_check("dWx", p.Wx.value.span(), gwx, loss).max_rel_error, 1e-4);
    EXPECT_LT(grad_check("dWh", p.Wh.value.span(), gwh, loss).max_rel_error, 1e-4);
    EXPECT_LT(grad_check("db", p.b.value.span(), gb, loss).max_rel_error, 1e-4);
  }
}

// ---- softmax / focal --------------------------------------------------------

TEST(Softmax, Uniform) {
  const auto p = softmax(std::vector<double>(5, 1.3));
  for (double v : p) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Softmax, HandValue) {
  const auto p = softmax(std::vector<double>{0.0, std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    auto z = random_vector(12, rng, 30.0);
    const auto p = softmax(z);
    double sum = 0.0;
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    const double c = random_vector(1, rng, 500.0)[0];
    for (auto& v : z) v += c;
    const auto q = softmax(z);
    for (std::size_t k = 0; k < 12; ++k) EXPECT_NEAR(p[k], q[k], 1e-12);
  }
}

TEST(FocalLoss, CrossEntropyDegeneracy) {
  const std::vector<double> probs{0.5, 0.5};
  const auto r = focal_loss(probs, 0, 0.0, std::vector<double>{1.0, 1.0});
  EXPECT_NEAR(r.loss, std::numbers::ln2, 1e-15);
  EXPECT_NEAR(r.loss, 0.693147, 5e-7);
}

TEST(FocalLoss, HandValueGammaTwo) {
  const std::vector<double> probs{0.9, 0.1};
  const auto r = focal_loss(probs, 0, 2.0, std::vector<double>{1.0, 1.0});
  EXPECT_NEAR(r.loss, 0.00105361, 5e-9);
}

TEST(FocalLoss, PerfectPredictionIsFree) {
  for (double pt : {0.999, 0.999999, 1.0}) {
    const std::vector<double> probs{pt, 1.0 - pt};
    EXPECT_LT(focal_loss(probs, 0, 2.0, std::vector<double>{}).loss, 1e-5);
  }
  const std::vector<double> certain{1.0, 0.0};
  EXPECT_EQ(focal_loss(certain, 0, 2.0, std::vector<double>{}).loss, 0.0);
}

TEST(FocalLoss, ClampsZeroProbability) {
  const std::vector<double> probs{1.0, 0.0};
  const auto r = focal_loss(probs, 1, 0.0, std::vector<double>{});
  EXPECT_NEAR(r.loss, -std::log(1e-12), 1e-9);
}

TEST(FocalLoss, AlphaScalesLoss) {
  const std::vector<double> probs{0.3, 0.7};
  const auto a = focal_loss(probs, 0, 2.0, std::vector<double>{0.25, 1.0});
  const auto b = focal_loss(probs, 0, 2.0, std::vector<double>{1.0, 1.0});
  EXPECT_NEAR(a.loss, 0.25 * b.loss, 1e-15);
}

TEST(FocalLoss, BadTarget) {
  const std::vector<double> probs{0.5, 0.5};
  EXPECT_ERROR_KIND(focal_loss(probs, 2, 2.0, std::vector<double>{}), ErrorKind::BadTarget);
  EXPECT_ERROR_KIND(focal_loss(probs, -1, 2.0, std::vector<double>{}), ErrorKind::BadTarget);
}

TEST(FocalLoss, GammaZeroEqualsCrossEntropyRandomized) {
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<int> target(0, 11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto probs = softmax(random_vector(12, rng, 6.0));
    const int t = target(rng);
    const auto r = focal_loss(probs, t, 0.0, std::vector<double>(12, 1.0));
    EXPECT_NEAR(r.loss, cross_entropy<double>(probs, t), 1e-9);
  }
}

TEST(FocalLoss, SoftmaxCompositionGradCheck) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> target(0, 11);
  for (double gamma : {0.0, 0.5, 2.0}) {
    for (int trial = 0; trial < 20; ++trial) {
      auto z = random_vector(12, rng, 2.0);
      const int t = target(rng);
      const auto alpha = random_vector(12, rng, 1.0);
      std::vector<double> a(12);
      for (std::size_t k = 0; k < 12; ++k) a[k] = 0.2 + std::abs(alpha[k]);
      auto loss = [&] { return focal_loss(softmax(z), t, gamma, a).loss; };
      const auto g = focal_loss(softmax(z), t, gamma, a).grad_logits;
      EXPECT_LT(grad_check("dz", z, g, loss).max_rel_error, 1e-4) << "gamma " << gamma;
    }
  }
}

// ---- adam -----------------------------------------------------------------

TEST(Adam, ZeroGradientIsFixedPoint) {
  Param<double> p("p", Tensor<double>({3}, {1.0, -2.0, 0.5}));
  const auto before = p.value;
  std::vector<AdamMoments<double>> m;
  for (int t = 1; t <= 5; ++t) adam_step<double>({&p}, m, AdamConfig{}, t);
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Param<double> p("p", Tensor<double>({1}, {0.25}));
  p.grad[0] = 1.0;
  std::vector<AdamMoments<double>> m;
  AdamConfig cfg;
  cfg.lr = 1e-3;
  adam_step<double>({&p}, m, cfg, 1);
  EXPECT_NEAR(0.25 - p.value[0], cfg.lr, 1e-8);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Adam, ParamsUpdateIndependently) {
  Param<double> a("a", Tensor<double>({2}, {1.0, 2.0}));
  Param<double> b("b", Tensor<double>({1}, {-1.0}));
  Param<double> a1 = a, b1 = b;
  std::vector<AdamMoments<double>> m, ma, mb;
  for (int t = 1; t <= 3; ++t) {
    for (Param<double>* p : {&a, &a1}) {
      p->grad[0] = 0.3 * t;
      p->grad[1] = -0.1;
    }
    for (Param<double>* p : {&b, &b1}) p->grad[0] = 2.0 / t;
    adam_step<double>({&a, &b}, m, AdamConfig{}, t);
    adam_step<double>({&a1}, ma, AdamConfig{}, t);
    adam_step<double>({&b1}, mb, AdamConfig{}, t);
  }
  EXPECT_EQ(a.value, a1.value);
  EXPECT_EQ(b.value, b1.value);
}

}  // namespace
}  // namespace maneuver::nn
