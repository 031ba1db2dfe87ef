#include <gtest/gtest.h>

#include <cmath>

#include "arc/error.hpp"
#include "arc/model.hpp"
#include "arc/random.hpp"

using namespace arc;

namespace {

ImageTensor random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor img({3, h, w});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.uniform());
  return img;
}

ModelConfig small_config(int n, int m) {
  ModelConfig c;
  c.width_n = n;
  c.hidden_layers_m = m;
  c.input_size = 1 << (m + 2);
  return c;
}

ParameterStore zero_biases(ParameterStore p) {
  for (auto& [name, t] : p) {
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0 && name.rfind("entropy", 0) != 0) {
      t.fill(0.0f);
    }
  }
  return p;
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.input_size = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.width_n = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.hidden_layers_m = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.kernel_size = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, LatentShapeRule) {
  ModelConfig c = small_config(256, 2);
  EXPECT_EQ(c.latent_shape(512, 512), (Shape{256, 32, 32}));
  c = small_config(128, 1);
  EXPECT_EQ(c.latent_shape(64, 64), (Shape{128, 8, 8}));
  EXPECT_THROW(c.latent_shape(60, 64), InputError);
}

TEST(Model, ParameterNamesAndShapes) {
  const ModelConfig c = small_config(8, 2);
  const ParameterStore p = init_parameters(c, 1);
  EXPECT_EQ(p.at("analysis.conv0.weight").shape(), (Shape{8, 3, 5, 5}));
  EXPECT_EQ(p.at("analysis.conv3.weight").shape(), (Shape{8, 8, 5, 5}));
  EXPECT_FALSE(p.contains("analysis.conv4.weight"));
  EXPECT_EQ(p.at("analysis.gdn2.gamma").shape(), (Shape{8, 8}));
  EXPECT_FALSE(p.contains("analysis.gdn3.beta"));
  EXPECT_EQ(p.at("synthesis.deconv3.bias").shape(), (Shape{3}));
  EXPECT_TRUE(p.contains("synthesis.igdn2.beta"));
  EXPECT_FALSE(p.contains("synthesis.igdn3.beta"));
  EXPECT_NO_THROW(check_parameters(p, c));
  EXPECT_THROW(check_parameters(p, small_config(8, 1)), ConfigError);
}

TEST(Model, InitialisationValues) {
  const ParameterStore p = init_parameters(small_config(4, 1), 3);
  const auto& gamma = p.at("analysis.gdn0.gamma");
  for (int i = 0; i < 4; ++i) {
    EXPECT_FLOAT_EQ(p.at("analysis.gdn0.beta")[i], 1.0f);
    for (int j = 0; j < 4; ++j) EXPECT_FLOAT_EQ(gamma[i * 4 + j], i == j ? 0.1f : 0.0f);
  }
  // uniform with variance 1/fan_in: |w| <= sqrt(3/fan_in)
  const auto& w = p.at("analysis.conv0.weight");
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LE(std::abs(w[i]), std::sqrt(3.0 / 75.0) + 1e-6);
  EXPECT_EQ(init_parameters(small_config(4, 1), 3), p);
}

TEST(Model, FullSizeShapes) {
  const ModelConfig c = small_config(256, 2);
  const ParameterStore p = init_parameters(c, 1);
  const ImageTensor img = random_image(512, 512, 1);
  const Tensor<float> y = analysis_forward(img, p, c);
  EXPECT_EQ(y.shape(), (Shape{256, 32, 32}));
  const ImageTensor back = synthesis_forward(y, p, c);
  EXPECT_EQ(back.shape(), (Shape{3, 512, 512}));
}

TEST(Model, SmallShapesAndDuality) {
  const ModelConfig c = small_config(128, 1);
  const ParameterStore p = init_parameters(c, 2);
  EXPECT_EQ(analysis_forward(random_image(64, 64, 2), p, c).shape(), (Shape{128, 8, 8}));
  for (auto [h, w] : {std::pair{8, 8}, std::pair{16, 40}, std::pair{64, 24}}) {
    const ImageTensor img = random_image(h, w, 3);
    EXPECT_EQ(synthesis_forward(analysis_forward(img, p, c), p, c).shape(), img.shape());
  }
  EXPECT_THROW(analysis_forward(random_image(12, 16, 1), p, c), InputError);
}

TEST(Model, ZeroCases) {
  const ModelConfig c = small_config(6, 1);
  const ParameterStore p = zero_biases(init_parameters(c, 5));
  const Tensor<float> y = analysis_forward(ImageTensor({3, 16, 16}), p, c);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 0.0f);
  const ImageTensor x = synthesis_forward(Tensor<float>({6, 2, 2}), p, c, Exec::kParallel, false);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], 0.0f);
}

TEST(Model, ClampedOutputInUnitRange) {
  const ModelConfig c = small_config(6, 1);
  const ParameterStore p = init_parameters(c, 5);
  Rng rng(2);
  Tensor<float> y({6, 2, 2});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>(rng.uniform(-40, 40));
  const ImageTensor x = synthesis_forward(y, p, c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_GE(x[i], 0.0f);
    EXPECT_LE(x[i], 1.0f);
  }
}

TEST(Model, DeterministicAndPathsAgree) {
  const ModelConfig c = small_config(16, 1);
  const ParameterStore p = init_parameters(c, 9);
  const ImageTensor img = random_image(32, 32, 4);
  const auto a = analysis_forward(img, p, c, Exec::kParallel);
  EXPECT_EQ(a, analysis_forward(img, p, c, Exec::kParallel));
  const auto r = analysis_forward(img, p, c, Exec::kReference);
  EXPECT_EQ(r, analysis_forward(img, p, c, Exec::kReference));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], r[i], 1e-4f);
}

TEST(Model, TrainPassMatchesInference) {
  const ModelConfig c = small_config(8, 1);
  const ParameterStore p = init_parameters(c, 9);
  const ImageTensor img = random_image(16, 16, 4);
  AnalysisTrace at;
  SynthesisTrace st;
  const auto y = analysis_forward_train(img, p, c, at);
  EXPECT_EQ(y, analysis_forward(img, p, c));
  EXPECT_EQ(synthesis_forward_train(y, p, c, st), synthesis_forward(y, p, c, Exec::kParallel, false));
}

// Directional-derivative check of the whole chain (float, so loose
// tolerance); per-layer double-precision checks live in test_kernels.
TEST(Model, BackwardMatchesDirectionalDerivative) {
  const ModelConfig c = small_config(4, 1);
  ParameterStore p = init_parameters(c, 13);
  // Move gamma off its initial diagonal so off-diagonal gradients matter.
  Rng rng(6);
  for (auto& [name, t] : p) {
    if (name.find("gamma") != std::string::npos) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += static_cast<float>(rng.uniform(0.05, 0.2));
    }
  }
  const ImageTensor img = random_image(16, 16, 8);
  Tensor<float> r({3, 16, 16});
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<float>(rng.uniform(-1, 1));

  auto loss = [&](const ParameterStore& q) {
    const auto out = synthesis_forward(analysis_forward(img, q, c), q, c, Exec::kParallel, false);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out[i]) * r[i];
    return s;
  };

  AnalysisTrace at;
  SynthesisTrace st;
  ParameterStore grads = p.zeros_like();
  const auto y = analysis_forward_train(img, p, c, at);
  synthesis_forward_train(y, p, c, st);
  const auto dy = synthesis_backward(st, r, p, c, grads);
  analysis_backward(at, dy, p, c, grads);

  for (const auto& name : {"analysis.conv0.weight", "analysis.gdn0.gamma", "analysis.conv2.bias",
                           "synthesis.igdn1.beta", "synthesis.deconv2.weight", "synthesis.deconv0.bias"}) {
    ParameterStore up = p, down = p;
    double predicted = 0;
    // |x| in GDN makes the loss piecewise smooth; a small step keeps most
    // units on one side of their kink while staying above float noise.
    const double h = 3e-3;
    Rng dir_rng(7);
    for (std::size_t i = 0; i < p.at(name).size(); ++i) {
      const double d = dir_rng.uniform(-1, 1);
      up.at(name)[i] += static_cast<float>(h * d);
      down.at(name)[i] -= static_cast<float>(h * d);
      predicted += d * grads.at(name)[i];
    }
    const double numeric = (loss(up) - loss(down)) / (2 * h);
    EXPECT_NEAR(predicted, numeric, 2e-2 * std::max(1.0, std::abs(numeric))) << name;
  }
}

TEST(Model, BoundGradientRule) {
  ParameterStore params, grads;
  params.add("analysis.gdn0.beta", Tensor<float>({3}, std::vector<float>{1.0f, 0.0f, 0.0f}));
  params.add("analysis.gdn0.gamma", Tensor<float>({1, 1}, std::vector<float>{-0.5f}));
  grads.add("analysis.gdn0.beta", Tensor<float>({3}, std::vector<float>{2.0f, 2.0f, -2.0f}));
  grads.add("analysis.gdn0.gamma", Tensor<float>({1, 1}, std::vector<float>{-1.0f}));
  apply_bound_gradients(params, grads);
  // Above the bound: unchanged. Below: only gradients that raise the value.
  EXPECT_EQ(grads.at("analysis.gdn0.beta")[0], 2.0f);
  EXPECT_EQ(grads.at("analysis.gdn0.beta")[1], 0.0f);
  EXPECT_EQ(grads.at("analysis.gdn0.beta")[2], -2.0f);
  EXPECT_EQ(grads.at("analysis.gdn0.gamma")[0], -1.0f);
  const auto eff = lower_bounded(params.at("analysis.gdn0.beta"), kBetaMin);
  EXPECT_EQ(eff[1], kBetaMin);
  EXPECT_EQ(lower_bounded(params.at("analysis.gdn0.gamma"), kGammaMin)[0], 0.0f);
}
