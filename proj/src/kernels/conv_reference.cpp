// Direct loop-nest convolutions. Slow, serial and obviously correct; the
// parallel kernels are tested against these.
#include <algorithm>

#include "conv_impl.hpp"

namespace arc::kernels::reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> wide, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> narrow) {
  const int k = g.kernel;
  for (int o = 0; o < g.narrow_channels; ++o) {
    for (int oy = 0; oy < g.narrow_h; ++oy) {
      for (int ox = 0; ox < g.narrow_w; ++ox) {
        T acc = bias.empty() ? T(0) : bias[o];
        for (int i = 0; i < g.wide_channels; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.wide_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.wide_w) continue;
              acc += weight[((static_cast<std::size_t>(o) * g.wide_channels + i) * k + ky) * k + kx] *
                     wide[(static_cast<std::size_t>(i) * g.wide_h + iy) * g.wide_w + ix];
            }
          }
        }
        narrow[(static_cast<std::size_t>(o) * g.narrow_h + oy) * g.narrow_w + ox] = acc;
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> narrow_grad,
                           std::span<const T> weight, std::span<T> wide_grad) {
  const int k = g.kernel;
  std::fill(wide_grad.begin(), wide_grad.end(), T(0));
  for (int o = 0; o < g.narrow_channels; ++o) {
    for (int oy = 0; oy < g.narrow_h; ++oy) {
      for (int ox = 0; ox < g.narrow_w; ++ox) {
        const T gv = narrow_grad[(static_cast<std::size_t>(o) * g.narrow_h + oy) * g.narrow_w + ox];
        for (int i = 0; i < g.wide_channels; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.wide_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.wide_w) continue;
              wide_grad[(static_cast<std::size_t>(i) * g.wide_h + iy) * g.wide_w + ix] +=
                  weight[((static_cast<std::size_t>(o) * g.wide_channels + i) * k + ky) * k + kx] * gv;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> wide,
                            std::span<const T> narrow_grad, std::span<T> weight_grad,
                            std::span<T> bias_grad) {
  const int k = g.kernel;
  for (int o = 0; o < g.narrow_channels; ++o) {
    for (int oy = 0; oy < g.narrow_h; ++oy) {
      for (int ox = 0; ox < g.narrow_w; ++ox) {
        const T gv = narrow_grad[(static_cast<std::size_t>(o) * g.narrow_h + oy) * g.narrow_w + ox];
        if (!bias_grad.empty()) bias_grad[o] += gv;
        for (int i = 0; i < g.wide_channels; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.wide_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.wide_w) continue;
              weight_grad[((static_cast<std::size_t>(o) * g.wide_channels + i) * k + ky) * k + kx] +=
                  gv * wide[(static_cast<std::size_t>(i) * g.wide_h + iy) * g.wide_w + ix];
            }
          }
        }
      }
    }
  }
}

#define ARC_INSTANTIATE(T)                                                                   \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<const T>, std::span<T>);                         \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,            \
                                         std::span<const T>, std::span<T>);                  \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,           \
                                          std::span<const T>, std::span<T>, std::span<T>);

ARC_INSTANTIATE(float)
ARC_INSTANTIATE(double)
#undef ARC_INSTANTIATE

}  // namespace arc::kernels::reference
