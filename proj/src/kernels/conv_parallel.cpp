// im2col + GEMM convolutions. Patch extraction and scatter run OpenMP-parallel
// over wide channels; the GEMMs go through Eigen, which parallelizes with
// OpenMP on its own when not nested inside another parallel region.
#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "conv_impl.hpp"

namespace arc::kernels::parallel {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

// Cap on the patch matrix size; larger problems are processed in bands of
// narrow rows.
constexpr std::size_t kMaxColsElements = std::size_t{1} << 22;

int band_rows(const ConvGeometry& g) {
  const std::size_t per_row =
      static_cast<std::size_t>(g.wide_channels) * g.kernel * g.kernel * g.narrow_w;
  if (per_row == 0) return std::max(1, g.narrow_h);
  return static_cast<int>(std::clamp<std::size_t>(kMaxColsElements / per_row, 1,
                                                  static_cast<std::size_t>(std::max(1, g.narrow_h))));
}

// cols[(i*k + ky)*k + kx, (oy - row0)*narrow_w + ox] = wide[i, oy*s - p + ky, ox*s - p + kx]
template <typename T>
void im2col(const ConvGeometry& g, const T* wide, int row0, int row1, T* cols) {
  const int k = g.kernel;
  const std::size_t ncols = static_cast<std::size_t>(row1 - row0) * g.narrow_w;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < g.wide_channels; ++i) {
    const T* plane = wide + static_cast<std::size_t>(i) * g.wide_h * g.wide_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(i) * k + ky) * k + kx) * ncols;
        for (int oy = row0; oy < row1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy - row0) * g.narrow_w;
          if (iy < 0 || iy >= g.wide_h) {
            std::fill(dst, dst + g.narrow_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.wide_w;
          for (int ox = 0; ox < g.narrow_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.wide_w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Inverse scatter of im2col: wide[...] += cols[...].
template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, int row0, int row1, T* wide) {
  const int k = g.kernel;
  const std::size_t ncols = static_cast<std::size_t>(row1 - row0) * g.narrow_w;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < g.wide_channels; ++i) {
    T* plane = wide + static_cast<std::size_t>(i) * g.wide_h * g.wide_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(i) * k + ky) * k + kx) * ncols;
        for (int oy = row0; oy < row1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.wide_h) continue;
          const T* src = row + static_cast<std::size_t>(oy - row0) * g.narrow_w;
          T* dst = plane + static_cast<std::size_t>(iy) * g.wide_w;
          for (int ox = 0; ox < g.narrow_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.wide_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> wide, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> narrow) {
  const int patch = g.wide_channels * g.kernel * g.kernel;
  const std::size_t plane = static_cast<std::size_t>(g.narrow_h) * g.narrow_w;
  const int band = band_rows(g);
  std::vector<T> cols(static_cast<std::size_t>(patch) * band * g.narrow_w);
  ConstMap<T> w(weight.data(), g.narrow_channels, patch, Eigen::OuterStride<>(patch));
  for (int row0 = 0; row0 < g.narrow_h; row0 += band) {
    const int row1 = std::min(g.narrow_h, row0 + band);
    const int ncols = (row1 - row0) * g.narrow_w;
    im2col(g, wide.data(), row0, row1, cols.data());
    ConstMap<T> c(cols.data(), patch, ncols, Eigen::OuterStride<>(ncols));
    MutMap<T> out(narrow.data() + static_cast<std::size_t>(row0) * g.narrow_w, g.narrow_channels,
                  ncols, Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
    out.noalias() = w * c;
    if (!bias.empty()) {
      for (int o = 0; o < g.narrow_channels; ++o) out.row(o).array() += bias[o];
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> narrow_grad,
                           std::span<const T> weight, std::span<T> wide_grad) {
  const int patch = g.wide_channels * g.kernel * g.kernel;
  const std::size_t plane = static_cast<std::size_t>(g.narrow_h) * g.narrow_w;
  const int band = band_rows(g);
  std::fill(wide_grad.begin(), wide_grad.end(), T(0));
  std::vector<T> cols(static_cast<std::size_t>(patch) * band * g.narrow_w);
  ConstMap<T> w(weight.data(), g.narrow_channels, patch, Eigen::OuterStride<>(patch));
  for (int row0 = 0; row0 < g.narrow_h; row0 += band) {
    const int row1 = std::min(g.narrow_h, row0 + band);
    const int ncols = (row1 - row0) * g.narrow_w;
    ConstMap<T> dn(narrow_grad.data() + static_cast<std::size_t>(row0) * g.narrow_w,
                   g.narrow_channels, ncols, Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
    MutMap<T> c(cols.data(), patch, ncols, Eigen::OuterStride<>(ncols));
    c.noalias() = w.transpose() * dn;
    col2im_add(g, cols.data(), row0, row1, wide_grad.data());
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> wide,
                            std::span<const T> narrow_grad, std::span<T> weight_grad,
                            std::span<T> bias_grad) {
  const int patch = g.wide_channels * g.kernel * g.kernel;
  const std::size_t plane = static_cast<std::size_t>(g.narrow_h) * g.narrow_w;
  const int band = band_rows(g);
  std::vector<T> cols(static_cast<std::size_t>(patch) * band * g.narrow_w);
  MutMap<T> dw(weight_grad.data(), g.narrow_channels, patch, Eigen::OuterStride<>(patch));
  for (int row0 = 0; row0 < g.narrow_h; row0 += band) {
    const int row1 = std::min(g.narrow_h, row0 + band);
    const int ncols = (row1 - row0) * g.narrow_w;
    im2col(g, wide.data(), row0, row1, cols.data());
    ConstMap<T> c(cols.data(), patch, ncols, Eigen::OuterStride<>(ncols));
    ConstMap<T> dn(narrow_grad.data() + static_cast<std::size_t>(row0) * g.narrow_w,
                   g.narrow_channels, ncols, Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
    dw.noalias() += dn * c.transpose();
    if (!bias_grad.empty()) {
      // Plain loop: Eigen's vectorized sum peels by address, which would make
      // the rounding depend on where the buffer happens to live.
      for (int o = 0; o < g.narrow_channels; ++o) {
        T acc = 0;
        for (int j = 0; j < ncols; ++j) acc += dn(o, j);
        bias_grad[o] += acc;
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

}  // namespace arc::kernels::parallel
