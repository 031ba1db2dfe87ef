#include <string>

#include "arc/error.hpp"
#include "conv_impl.hpp"

namespace arc::kernels {

ConvGeometry ConvGeometry::downsample(int wide_channels, int narrow_channels, int h, int w,
                                      int kernel, int stride) {
  ConvGeometry g;
  g.wide_channels = wide_channels;
  g.narrow_channels = narrow_channels;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = kernel / 2;
  g.wide_h = h;
  g.wide_w = w;
  g.narrow_h = (h + 2 * g.pad - kernel) / stride + 1;
  g.narrow_w = (w + 2 * g.pad - kernel) / stride + 1;
  return g;
}

namespace {

template <typename T>
void check_sizes(const ConvGeometry& g, std::size_t wide, std::size_t weight, std::size_t narrow,
                 std::size_t bias, std::size_t bias_expected) {
  if (wide != g.wide_size() || narrow != g.narrow_size() || weight != g.weight_size() ||
      (bias != 0 && bias != bias_expected)) {
    throw ConfigError("convolution buffer sizes do not match geometry (" +
                      std::to_string(g.wide_channels) + "x" + std::to_string(g.wide_h) + "x" +
                      std::to_string(g.wide_w) + " <-> " + std::to_string(g.narrow_channels) + "x" +
                      std::to_string(g.narrow_h) + "x" + std::to_string(g.narrow_w) + ")");
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> wide, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> narrow, Exec exec) {
  check_sizes<T>(g, wide.size(), weight.size(), narrow.size(), bias.size(),
                 static_cast<std::size_t>(g.narrow_channels));
  if (exec == Exec::kReference) {
    reference::conv2d_forward(g, wide, weight, bias, narrow);
  } else {
    parallel::conv2d_forward(g, wide, weight, bias, narrow);
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> narrow_grad,
                           std::span<const T> weight, std::span<T> wide_grad, Exec exec) {
  check_sizes<T>(g, wide_grad.size(), weight.size(), narrow_grad.size(), 0, 0);
  if (exec == Exec::kReference) {
    reference::conv2d_backward_input(g, narrow_grad, weight, wide_grad);
  } else {
    parallel::conv2d_backward_input(g, narrow_grad, weight, wide_grad);
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> wide,
                            std::span<const T> narrow_grad, std::span<T> weight_grad,
                            std::span<T> bias_grad, Exec exec) {
  check_sizes<T>(g, wide.size(), weight_grad.size(), narrow_grad.size(), bias_grad.size(),
                 static_cast<std::size_t>(g.narrow_channels));
  if (exec == Exec::kReference) {
    reference::conv2d_backward_weight(g, wide, narrow_grad, weight_grad, bias_grad);
  } else {
    parallel::conv2d_backward_weight(g, wide, narrow_grad, weight_grad, bias_grad);
  }
}

template <typename T>
void conv_transpose2d_forward(const ConvGeometry& g, std::span<const T> narrow,
                              std::span<const T> weight, std::span<const T> bias,
                              std::span<T> wide, Exec exec) {
  check_sizes<T>(g, wide.size(), weight.size(), narrow.size(), bias.size(),
                 static_cast<std::size_t>(g.wide_channels));
  conv2d_backward_input<T>(g, narrow, weight, wide, exec);
  if (!bias.empty()) {
    const std::size_t plane = static_cast<std::size_t>(g.wide_h) * g.wide_w;
    for (int c = 0; c < g.wide_channels; ++c) {
      T* p = wide.data() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
    }
  }
}

template <typename T>
void conv_transpose2d_backward_input(const ConvGeometry& g, std::span<const T> wide_grad,
                                     std::span<const T> weight, std::span<T> narrow_grad,
                                     Exec exec) {
  conv2d_forward<T>(g, wide_grad, weight, {}, narrow_grad, exec);
}

template <typename T>
void conv_transpose2d_backward_weight(const ConvGeometry& g, std::span<const T> narrow,
                                      std::span<const T> wide_grad, std::span<T> weight_grad,
                                      std::span<T> bias_grad, Exec exec) {
  // d/dW of <wide_grad, convT(narrow)> = d/dW of <narrow, conv(wide_grad)>.
  conv2d_backward_weight<T>(g, wide_grad, narrow, weight_grad, {}, exec);
  if (!bias_grad.empty()) {
    if (bias_grad.size() != static_cast<std::size_t>(g.wide_channels)) {
      throw ConfigError("transposed convolution bias gradient has wrong size");
    }
    const std::size_t plane = static_cast<std::size_t>(g.wide_h) * g.wide_w;
    for (int c = 0; c < g.wide_channels; ++c) {
      const T* p = wide_grad.data() + c * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      bias_grad[c] += acc;
    }
  }
}

#define ARC_INSTANTIATE(T)                                                                       \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,     \
                                  std::span<const T>, std::span<T>, Exec);                       \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,                \
                                         std::span<const T>, std::span<T>, Exec);                \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,               \
                                          std::span<const T>, std::span<T>, std::span<T>, Exec); \
  template void conv_transpose2d_forward<T>(const ConvGeometry&, std::span<const T>,             \
                                            std::span<const T>, std::span<const T>,              \
                                            std::span<T>, Exec);                                 \
  template void conv_transpose2d_backward_input<T>(const ConvGeometry&, std::span<const T>,      \
                                                   std::span<const T>, std::span<T>, Exec);      \
  template void conv_transpose2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,     \
                                                    std::span<const T>, std::span<T>,            \
                                                    std::span<T>, Exec);

ARC_INSTANTIATE(float)
ARC_INSTANTIATE(double)
#undef ARC_INSTANTIATE

}  // namespace arc::kernels
