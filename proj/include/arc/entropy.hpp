#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "arc/model.hpp"
#include "arc/random.hpp"
#include "arc/tensor.hpp"

namespace arc {

inline constexpr double kLikelihoodFloor = 1e-9;
inline constexpr double kDefaultTailMass = 1e-9;
inline constexpr int kCdfPrecisionBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecisionBits;

// Fully factorized density over latent channels: one monotone scalar network
// per channel whose sigmoid output is the CDF.
//
//   h0 = v;  z_k = softplus(M_k) h_k + b_k;  h_{k+1} = z_k + tanh(a_k) * tanh(z_k)
//
// with layer widths 1 -> 3 -> 3 -> 3 -> 1 and no gate on the last layer.
// softplus keeps the matrices positive and |tanh(a)| < 1 keeps the gates
// monotone, so the CDF is non-decreasing in v.
class FactorizedEntropyModel {
 public:
  static constexpr std::array<int, 5> kFilters = {1, 3, 3, 3, 1};
  static constexpr int kLayers = 4;

  // Offsets of each parameter group inside one channel's block.
  struct Layout {
    std::array<int, kLayers> matrix{};
    std::array<int, kLayers> bias{};
    std::array<int, kLayers - 1> factor{};
    int per_channel = 0;
  };
  static const Layout& layout();

  FactorizedEntropyModel() = default;
  // Initial parameters (matrices such that the initial density spans roughly
  // +-10, biases uniform on [-0.5, 0.5), gates zero).
  FactorizedEntropyModel(int channels, Rng& rng);
  FactorizedEntropyModel(int channels, std::vector<double> theta);

  static FactorizedEntropyModel from_store(const ParameterStore& store);
  // Writes the parameters into `store` as entropy.* arrays (adding them if absent).
  void to_store(ParameterStore& store) const;
  // Adds a gradient block shaped like theta() to the matching entropy.* arrays.
  static void add_gradient_to_store(std::span<const double> grad, ParameterStore& store);

  int channels() const { return channels_; }
  std::span<const double> theta() const { return theta_; }
  std::span<double> theta() { return theta_; }
  std::span<const double> channel_theta(int c) const {
    return std::span<const double>(theta_).subspan(static_cast<std::size_t>(c) * layout().per_channel,
                                                   layout().per_channel);
  }

  // Cumulative logit; cdf(v) = sigmoid(logits(c, v)).
  double logits(int c, double v) const;
  double cdf(int c, double v) const;
  // Floored probability mass of the unit bin centered on v.
  double likelihood(int c, double v) const;
  // Likelihood plus gradients: accumulates dL/dtheta into theta_grad (full
  // layout) given dL/dp, and returns dL/dv. The floor passes gradient only
  // when it pushes the probability up.
  double likelihood_backward(int c, double v, double p_grad, std::span<double> theta_grad,
                             double* p_out = nullptr) const;

  // Solves logits(c, v) = target by bisection.
  double solve_logit(int c, double target) const;
  double median(int c) const { return solve_logit(c, 0.0); }

 private:
  int channels_ = 0;
  std::vector<double> theta_;
};

// Adds freshly initialized entropy.* arrays for `channels` channels.
void add_entropy_parameters(ParameterStore& store, int channels, Rng& rng);

// Training-mode quantization proxy: y + u with u ~ U[-0.5, 0.5).
Tensor<float> quantize_train(const Tensor<float>& y, Rng& rng);

// Integer symbols of a latent [C, H, W], channel-major.
struct QuantizedLatent {
  Shape shape;
  std::vector<std::int32_t> symbols;

  int channels() const { return shape.at(0); }
  std::size_t plane() const { return static_cast<std::size_t>(shape.at(1)) * shape.at(2); }
  friend bool operator==(const QuantizedLatent&, const QuantizedLatent&) = default;
};

// round(y - offset[c]) with ties away from zero.
QuantizedLatent quantize_eval(const Tensor<float>& y, std::span<const float> offsets);
// symbol + offset[c].
Tensor<float> dequantize(const QuantizedLatent& q, std::span<const float> offsets);

// Per-element floored likelihoods of `values` ([C, ...], channel-major).
template <typename T>
std::vector<double> likelihood(const Tensor<T>& values, const FactorizedEntropyModel& model);

// Sum of -log2 p over all elements.
template <typename T>
double rate_bits(const Tensor<T>& values, const FactorizedEntropyModel& model);

// rate_bits plus gradients of (scale * bits): written to value_grad (same
// shape as values, overwritten) and accumulated into theta_grad.
template <typename T>
double rate_bits_backward(const Tensor<T>& values, const FactorizedEntropyModel& model,
                          double scale, Tensor<T>& value_grad, std::span<double> theta_grad);

// Running per-channel min/max of continuous latents seen during freezing.
struct LatentRange {
  std::vector<float> min;
  std::vector<float> max;
  void update(const Tensor<float>& y);
  bool empty() const { return min.empty(); }
};

// Integer-precision CDF for one channel. cumulative has (symbol count + 1)
// entries from 0 to kCdfTotal, strictly increasing.
struct ChannelCdf {
  std::int32_t min_symbol = 0;
  float offset = 0.0f;
  std::vector<std::uint32_t> cumulative;

  int symbol_count() const { return static_cast<int>(cumulative.size()) - 1; }
  std::int32_t max_symbol() const { return min_symbol + symbol_count() - 1; }
  std::uint32_t frequency(std::int32_t symbol) const {
    const auto i = static_cast<std::size_t>(symbol - min_symbol);
    return cumulative[i + 1] - cumulative[i];
  }
  friend bool operator==(const ChannelCdf&, const ChannelCdf&) = default;
};

struct CdfTable {
  std::vector<ChannelCdf> channels;

  std::vector<float> offsets() const;
  // Throws FormatError when any channel violates the table invariants.
  void validate() const;
  friend bool operator==(const CdfTable&, const CdfTable&) = default;
};

struct FreezeOptions {
  double tail_mass = kDefaultTailMass;
  int max_symbols = 4096;
  int margin = 1;
};

// Freezes the learned density into integer tables. Each channel covers the
// central (1 - tail_mass) quantile range of the model, widened by the
// observed latent range (when given) plus `margin` symbols.
CdfTable freeze_cdf(const FactorizedEntropyModel& model, const LatentRange* observed = nullptr,
                    const FreezeOptions& options = {});

// Converts per-symbol probabilities to frequencies summing to kCdfTotal with
// every frequency >= 1 (largest-remainder rounding, ties to lower index).
std::vector<std::uint32_t> quantize_pmf(std::span<const double> pmf);

// Ideal code length of `q` under the table's quantized probabilities.
double table_rate_bits(const QuantizedLatent& q, const CdfTable& table);

}  // namespace arc
