#pragma once

#include <span>

#include "arc/parallel.hpp"

namespace arc::kernels {

// Geometry of a strided 2-D convolution mapping a "wide" tensor
// [wide_channels, wide_h, wide_w] to a "narrow" one
// [narrow_channels, narrow_h, narrow_w]. Weights are laid out
// [narrow_channels, wide_channels, kernel, kernel].
//
// A transposed convolution with the same geometry maps narrow -> wide and
// shares the weight layout, so one geometry describes a conv layer and its
// mirrored upsampling layer.
struct ConvGeometry {
  int wide_channels = 0;
  int narrow_channels = 0;
  int kernel = 5;
  int stride = 2;
  int pad = 2;
  int wide_h = 0;
  int wide_w = 0;
  int narrow_h = 0;
  int narrow_w = 0;

  // Downsampling geometry for a wide input of size h x w; narrow dims follow
  // the usual floor((h + 2p - k) / s) + 1 rule.
  static ConvGeometry downsample(int wide_channels, int narrow_channels, int h, int w,
                                 int kernel = 5, int stride = 2);

  std::size_t wide_size() const {
    return static_cast<std::size_t>(wide_channels) * wide_h * wide_w;
  }
  std::size_t narrow_size() const {
    return static_cast<std::size_t>(narrow_channels) * narrow_h * narrow_w;
  }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(narrow_channels) * wide_channels * kernel * kernel;
  }
};

// narrow = conv(wide) + bias. `bias` may be empty.
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> wide, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> narrow, Exec exec = Exec::kParallel);

// wide_grad = d(conv)/d(wide)^T * narrow_grad. Overwrites wide_grad. This is
// also the forward pass of the transposed convolution (without bias).
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> narrow_grad,
                           std::span<const T> weight, std::span<T> wide_grad,
                           Exec exec = Exec::kParallel);

// weight_grad += narrow_grad (x) patches(wide); bias_grad += sum(narrow_grad).
// `bias_grad` may be empty.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> wide,
                            std::span<const T> narrow_grad, std::span<T> weight_grad,
                            std::span<T> bias_grad, Exec exec = Exec::kParallel);

// Transposed convolution narrow -> wide, with per-wide-channel bias.
template <typename T>
void conv_transpose2d_forward(const ConvGeometry& g, std::span<const T> narrow,
                              std::span<const T> weight, std::span<const T> bias,
                              std::span<T> wide, Exec exec = Exec::kParallel);

// narrow_grad = conv(wide_grad). Overwrites narrow_grad.
template <typename T>
void conv_transpose2d_backward_input(const ConvGeometry& g, std::span<const T> wide_grad,
                                     std::span<const T> weight, std::span<T> narrow_grad,
                                     Exec exec = Exec::kParallel);

// weight_grad += ..., bias_grad += per-channel sum of wide_grad.
template <typename T>
void conv_transpose2d_backward_weight(const ConvGeometry& g, std::span<const T> narrow,
                                      std::span<const T> wide_grad, std::span<T> weight_grad,
                                      std::span<T> bias_grad, Exec exec = Exec::kParallel);

}  // namespace arc::kernels
