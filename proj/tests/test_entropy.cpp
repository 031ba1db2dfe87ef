#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "arc/entropy.hpp"
#include "arc/error.hpp"
#include "support.hpp"

using namespace arc;
using arc::testing::linear_model;
using arc::testing::numeric_gradient;
using arc::testing::relative_error;

namespace {

const double kLn3 = std::log(3.0);

FactorizedEntropyModel random_model(int channels, std::uint64_t seed) {
  Rng rng(seed);
  return FactorizedEntropyModel(channels, rng);
}

}  // namespace

TEST(Quantize, TrainNoiseBoundedAndSeeded) {
  Tensor<float> y({2, 8, 8});
  Rng init(1);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>(init.uniform(-5, 5));
  Rng a(42), b(42);
  const auto qa = quantize_train(y, a);
  EXPECT_EQ(qa, quantize_train(y, b));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_LE(std::abs(qa[i] - y[i]), 0.5f);
}

TEST(Quantize, TrainNoiseIsCentred) {
  // Uniform on [-0.5, 0.5): sigma of the mean over n samples is sqrt(1/12/n).
  const int n = 1'000'000;
  Tensor<float> y({1, 1000, 1000});
  Rng rng(7);
  const auto q = quantize_train(y, rng);
  double sum = 0;
  for (std::size_t i = 0; i < q.size(); ++i) sum += q[i];
  EXPECT_LT(std::abs(sum / n), 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Quantize, EvalRounding) {
  Tensor<float> y({3, 1, 2}, std::vector<float>{2.4f, -1.5f, 3.0f, -7.0f, 1.5f, 0.75f});
  const std::vector<float> zero{0, 0, 0};
  const auto q = quantize_eval(y, zero);
  EXPECT_EQ(q.symbols, (std::vector<std::int32_t>{2, -2, 3, -7, 2, 1}));
  const std::vector<float> offsets{0.25f, 0.5f, -0.25f};
  // 2.4-.25=2.15->2, -1.5-.25=-1.75->-2, 3-.5=2.5->3, -7-.5=-7.5->-8, 1.5+.25=1.75->2, .75+.25=1->1
  EXPECT_EQ(quantize_eval(y, offsets).symbols, (std::vector<std::int32_t>{2, -2, 3, -8, 2, 1}));
  const auto back = dequantize(quantize_eval(y, offsets), offsets);
  EXPECT_FLOAT_EQ(back[0], 2.25f);
  EXPECT_FLOAT_EQ(back[3], -7.5f);
}

TEST(EntropyModel, LinearConstructionHasExpectedLogits) {
  const auto m = linear_model({kLn3, 2.0});
  EXPECT_NEAR(m.logits(0, 1.0), kLn3, 1e-12);
  EXPECT_NEAR(m.logits(1, -0.7), -1.4, 1e-12);
  EXPECT_NEAR(m.cdf(0, 1.0), 0.75, 1e-12);
}

TEST(EntropyModel, UnitBoxLikelihood) {
  // A near-step CDF at 0 puts all mass of the bin [-0.5, 0.5) on symbol 0.
  const auto m = linear_model({200.0});
  EXPECT_NEAR(m.likelihood(0, 0.0), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(m.likelihood(0, 5.0), kLikelihoodFloor);
}

TEST(EntropyModel, SymmetricCdfGivesSymmetricLikelihood) {
  // Zero biases make every stage odd, so the CDF is symmetric about 0.
  auto m = random_model(3, 5);
  const auto& l = FactorizedEntropyModel::layout();
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < FactorizedEntropyModel::kLayers; ++k) {
      for (int o = 0; o < FactorizedEntropyModel::kFilters[k + 1]; ++o) m.theta()[c * l.per_channel + l.bias[k] + o] = 0;
    }
  }
  for (double v : {0.3, 1.0, 2.5, 7.0}) {
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(m.likelihood(c, v), m.likelihood(c, -v), 1e-12);
  }
}

TEST(EntropyModel, LikelihoodFloorAndNaN) {
  const auto m = random_model(2, 1);
  for (double v : {-1e6, -30.0, 0.0, 30.0, 1e6}) EXPECT_GE(m.likelihood(0, v), kLikelihoodFloor);
  EXPECT_THROW(m.likelihood(0, std::nan("")), NumericError);
}

TEST(EntropyModel, CdfIsMonotone) {
  const auto m = random_model(4, 2);
  Rng rng(3);
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 10000; ++i) {
      double a = rng.uniform(-30, 30), b = rng.uniform(-30, 30);
      if (a > b) std::swap(a, b);
      ASSERT_LE(m.cdf(c, a), m.cdf(c, b));
    }
    EXPECT_LT(m.cdf(c, -1e4), 1e-9);
    EXPECT_GT(m.cdf(c, 1e4), 1 - 1e-9);
  }
}

TEST(EntropyModel, MedianSolvesHalf) {
  const auto m = random_model(3, 9);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(m.cdf(c, m.median(c)), 0.5, 1e-9);
}

TEST(EntropyModel, StoreRoundTrip) {
  ParameterStore store;
  Rng rng(4);
  add_entropy_parameters(store, 5, rng);
  const auto m = FactorizedEntropyModel::from_store(store);
  EXPECT_EQ(m.channels(), 5);
  ParameterStore again;
  m.to_store(again);
  EXPECT_EQ(again, store);
}

TEST(Rate, OracleSums) {
  // channel 0: slope ln 3, p(0.5) = sigmoid(ln 3) - sigmoid(0) = 0.25
  // channel 1: near-step, p(0.5) = cdf(1) - cdf(0) = 0.5
  const auto m = linear_model({kLn3, 400.0});
  EXPECT_NEAR(m.likelihood(0, 0.5), 0.25, 1e-12);
  EXPECT_NEAR(m.likelihood(1, 0.5), 0.5, 1e-12);
  Tensor<double> two({2, 1, 1}, std::vector<double>{0.5, 0.5});
  EXPECT_NEAR(rate_bits(two, m), 3.0, 1e-9);

  const auto half = linear_model({400.0});
  Tensor<double> ten({1, 2, 5}, 0.5);
  EXPECT_NEAR(rate_bits(ten, half), 10.0, 1e-9);
  Tensor<double> certain({1, 1, 1}, 0.0);
  EXPECT_NEAR(rate_bits(certain, half), 0.0, 1e-12);
}

TEST(Rate, MatchesLikelihoodSum) {
  const auto m = random_model(3, 4);
  Tensor<float> v({3, 4, 4});
  Rng rng(2);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(rng.uniform(-6, 6));
  double expected = 0;
  for (double p : likelihood(v, m)) expected -= std::log2(p);
  EXPECT_NEAR(rate_bits(v, m), expected, 1e-9);
  EXPECT_GE(rate_bits(v, m), 0.0);
}

TEST(Rate, GradientMatchesFiniteDifferences) {
  auto m = random_model(2, 6);
  Rng rng(8);
  Tensor<double> v({2, 2, 2});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform(-3, 3);
  const double scale = 0.7;
  Tensor<double> dv;
  std::vector<double> dtheta(m.theta().size(), 0.0);
  rate_bits_backward(v, m, scale, dv, dtheta);

  std::vector<double> theta(m.theta().begin(), m.theta().end());
  auto loss_theta = [&] { return scale * rate_bits(v, FactorizedEntropyModel(2, theta)); };
  EXPECT_LT(relative_error(dtheta, numeric_gradient(loss_theta, theta)), 1e-4);

  std::vector<double> values(v.data(), v.data() + v.size());
  auto loss_v = [&] {
    Tensor<double> t(v.shape(), values);
    return scale * rate_bits(t, m);
  };
  EXPECT_LT(relative_error(dv.vec(), numeric_gradient(loss_v, values)), 1e-4);
}

TEST(Freeze, TableInvariants) {
  const auto m = random_model(6, 11);
  const auto t = freeze_cdf(m);
  ASSERT_EQ(t.channels.size(), 6u);
  EXPECT_NO_THROW(t.validate());
  for (int c = 0; c < 6; ++c) {
    const auto& ch = t.channels[c];
    EXPECT_EQ(ch.cumulative.back(), kCdfTotal);
    for (int s = ch.min_symbol; s <= ch.max_symbol(); ++s) EXPECT_GE(ch.frequency(s), 1u);
    // Probability mass over the table range (continuous model) >= 1 - 2 tail.
    double mass = 0;
    for (int s = ch.min_symbol; s <= ch.max_symbol(); ++s) mass += m.likelihood(c, s + ch.offset);
    EXPECT_GE(mass, 1.0 - 2 * kDefaultTailMass);
    EXPECT_FLOAT_EQ(ch.offset, static_cast<float>(m.median(c)));
  }
  EXPECT_EQ(freeze_cdf(m), t);
}

TEST(Freeze, CoversConcentratedChannelAndObservedRange) {
  const auto m = linear_model({12.0});  // nearly all mass on symbols -1..1
  const auto t = freeze_cdf(m);
  EXPECT_LE(t.channels[0].min_symbol, -1);
  EXPECT_GE(t.channels[0].max_symbol(), 1);
  LatentRange range;
  range.update(Tensor<float>({1, 1, 2}, std::vector<float>{-40.0f, 25.0f}));
  const auto wide = freeze_cdf(m, &range);
  EXPECT_LE(wide.channels[0].min_symbol, -40);
  EXPECT_GE(wide.channels[0].max_symbol(), 25);
}

TEST(Freeze, DegenerateChannelFails) {
  const auto m = linear_model({0.001});  // mass spread over thousands of symbols
  FreezeOptions o;
  o.max_symbols = 3;
  EXPECT_THROW(freeze_cdf(m, nullptr, o), FreezeError);
}

TEST(Freeze, QuantizePmf) {
  const std::vector<double> pmf{0.5, 0.25, 0.25, 0.0, 1e-12};
  const auto f = quantize_pmf(pmf);
  std::uint64_t total = 0;
  for (auto v : f) {
    EXPECT_GE(v, 1u);
    total += v;
  }
  EXPECT_EQ(total, kCdfTotal);
  EXPECT_NEAR(f[0], 0.5 * kCdfTotal, 3);
  EXPECT_EQ(f[1], f[2]);
}

TEST(Freeze, TableRateUsesQuantizedProbabilities) {
  CdfTable t;
  t.channels.push_back(ChannelCdf{-1, 0.0f, {0, 16384, 49152, 65536}});
  QuantizedLatent q{{1, 1, 3}, {-1, 0, 1}};
  EXPECT_NEAR(table_rate_bits(q, t), 2.0 + 1.0 + 2.0, 1e-12);
  q.symbols[0] = 2;
  EXPECT_THROW(table_rate_bits(q, t), EncodeError);
}
