#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "arc/parallel.hpp"
#include "arc/tensor.hpp"

namespace arc {

struct ModelConfig {
  int width_n = 128;
  int hidden_layers_m = 1;
  int kernel_size = 5;
  int stride = 2;
  int input_channels = 3;
  int input_size = 512;

  // Throws ConfigError when an invariant is violated.
  void validate() const;

  // Conv layers per transform: input conv, M hidden convs, latent projection.
  int layer_count() const { return hidden_layers_m + 2; }
  int downsample_factor() const { return 1 << layer_count(); }
  bool divides(int h, int w) const {
    return h > 0 && w > 0 && h % downsample_factor() == 0 && w % downsample_factor() == 0;
  }
  Shape latent_shape(int image_h, int image_w) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr float kBetaMin = 1e-6f;
inline constexpr float kGammaMin = 0.0f;

// Named learnable arrays. Names are hierarchical ("analysis.conv0.weight")
// and iterate in lexicographic order, which fixes serialization order.
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<float>>;

  void add(const std::string& name, Tensor<float> value);
  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  Tensor<float>& at(const std::string& name);
  const Tensor<float>& at(const std::string& name) const;

  std::size_t size() const { return arrays_.size(); }
  std::size_t total_elements() const;
  Map::iterator begin() { return arrays_.begin(); }
  Map::iterator end() { return arrays_.end(); }
  Map::const_iterator begin() const { return arrays_.begin(); }
  Map::const_iterator end() const { return arrays_.end(); }

  // Same names and shapes, all zeros.
  ParameterStore zeros_like() const;
  void set_zero();
  bool all_finite() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.arrays_ == b.arrays_;
  }

 private:
  Map arrays_;
};

// Conv kernels use variance scaling (uniform, variance 1/fan_in), biases 0,
// GDN1 beta 1 and gamma 0.1 * identity. Also creates the entropy-model
// parameters. Deterministic in `seed`.
ParameterStore init_parameters(const ModelConfig& config, std::uint64_t seed);

// Verifies every expected name is present with the shape `config` implies.
void check_parameters(const ParameterStore& params, const ModelConfig& config);

// Effective (bounded) value of a reparameterized array: max(raw, bound).
std::vector<float> lower_bounded(const Tensor<float>& raw, float bound);

// Converts gradients w.r.t. effective GDN1 parameters into gradients w.r.t.
// the raw stored values: below the bound the gradient only passes when it
// would move the raw value back up.
void apply_bound_gradients(const ParameterStore& params, ParameterStore& grads);

// Inference transforms. analysis_forward requires image dims divisible by
// 2^(M+2); synthesis_forward clamps its output to [0, 1] when `clamp` is set.
Tensor<float> analysis_forward(const ImageTensor& image, const ParameterStore& params,
                               const ModelConfig& config, Exec exec = Exec::kParallel);
ImageTensor synthesis_forward(const Tensor<float>& latent, const ParameterStore& params,
                              const ModelConfig& config, Exec exec = Exec::kParallel,
                              bool clamp = true);

// Activations kept by the training-mode passes for backpropagation.
struct AnalysisTrace {
  std::vector<Tensor<float>> conv_inputs;
  std::vector<Tensor<float>> gdn_inputs;
};

struct SynthesisTrace {
  std::vector<Tensor<float>> deconv_inputs;
  std::vector<Tensor<float>> igdn_inputs;
};

Tensor<float> analysis_forward_train(const ImageTensor& image, const ParameterStore& params,
                                     const ModelConfig& config, AnalysisTrace& trace,
                                     Exec exec = Exec::kParallel);
// Accumulates parameter gradients into `grads` (effective-parameter space for
// GDN1 arrays; see apply_bound_gradients).
void analysis_backward(const AnalysisTrace& trace, const Tensor<float>& latent_grad,
                       const ParameterStore& params, const ModelConfig& config,
                       ParameterStore& grads, Exec exec = Exec::kParallel);

// Returns the unclamped reconstruction.
Tensor<float> synthesis_forward_train(const Tensor<float>& latent, const ParameterStore& params,
                                      const ModelConfig& config, SynthesisTrace& trace,
                                      Exec exec = Exec::kParallel);
// Accumulates parameter gradients; returns the gradient w.r.t. the latent.
Tensor<float> synthesis_backward(const SynthesisTrace& trace, const Tensor<float>& output_grad,
                                 const ParameterStore& params, const ModelConfig& config,
                                 ParameterStore& grads, Exec exec = Exec::kParallel);

}  // namespace arc
