#include "arc/kernels/gdn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "arc/error.hpp"

namespace arc::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

void check(int channels, std::size_t plane, std::size_t x, std::size_t beta, std::size_t gamma,
           std::size_t out) {
  const std::size_t c = static_cast<std::size_t>(channels);
  if (beta != c || gamma != c * c || x != c * plane || out != c * plane) {
    throw ConfigError("GDN1 shape mismatch: " + std::to_string(channels) +
                      " channels but beta has " + std::to_string(beta) + " entries");
  }
}

enum class Mode { kDivide, kMultiply };

template <typename T>
T reference_denom(int channels, std::size_t plane, const T* x, const T* beta, const T* gamma,
                  int i, std::size_t p) {
  T d = beta[i];
  for (int j = 0; j < channels; ++j) {
    d += gamma[static_cast<std::size_t>(i) * channels + j] * std::abs(x[j * plane + p]);
  }
  return d;
}

template <typename T>
void forward_impl(Mode mode, int channels, std::size_t plane, std::span<const T> x,
                  std::span<const T> beta, std::span<const T> gamma, std::span<T> y, Exec exec) {
  check(channels, plane, x.size(), beta.size(), gamma.size(), y.size());
  if (exec == Exec::kReference) {
    for (std::size_t p = 0; p < plane; ++p) {
      for (int i = 0; i < channels; ++i) {
        const T d = reference_denom(channels, plane, x.data(), beta.data(), gamma.data(), i, p);
        const T v = x[i * plane + p];
        y[i * plane + p] = mode == Mode::kDivide ? v / d : v * d;
      }
    }
    return;
  }
  ConstMap<T> xm(x.data(), channels, static_cast<Eigen::Index>(plane));
  ConstMap<T> gm(gamma.data(), channels, channels);
  MutMap<T> ym(y.data(), channels, static_cast<Eigen::Index>(plane));
  // y holds the denominator until the final elementwise pass.
  ym.noalias() = gm * xm.cwiseAbs();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < channels; ++i) {
    T* yr = y.data() + i * plane;
    const T* xr = x.data() + i * plane;
    const T b = beta[i];
    if (mode == Mode::kDivide) {
      for (std::size_t p = 0; p < plane; ++p) yr[p] = xr[p] / (yr[p] + b);
    } else {
      for (std::size_t p = 0; p < plane; ++p) yr[p] = xr[p] * (yr[p] + b);
    }
  }
}

template <typename T>
void backward_impl(Mode mode, int channels, std::size_t plane, std::span<const T> x,
                   std::span<const T> beta, std::span<const T> gamma, std::span<const T> y_grad,
                   std::span<T> x_grad, std::span<T> beta_grad, std::span<T> gamma_grad,
                   Exec exec) {
  check(channels, plane, x.size(), beta.size(), gamma.size(), y_grad.size());
  check(channels, plane, x_grad.size(), beta_grad.size(), gamma_grad.size(), y_grad.size());
  const std::size_t c = static_cast<std::size_t>(channels);

  if (exec == Exec::kReference) {
    std::fill(x_grad.begin(), x_grad.end(), T(0));
    for (std::size_t p = 0; p < plane; ++p) {
      for (int i = 0; i < channels; ++i) {
        const T d = reference_denom(channels, plane, x.data(), beta.data(), gamma.data(), i, p);
        const T v = x[i * plane + p];
        const T gy = y_grad[i * plane + p];
        // g = dL/d(denom[i,p])
        T g;
        if (mode == Mode::kDivide) {
          x_grad[i * plane + p] += gy / d;
          g = -gy * v / (d * d);
        } else {
          x_grad[i * plane + p] += gy * d;
          g = gy * v;
        }
        beta_grad[i] += g;
        for (int j = 0; j < channels; ++j) {
          const T xj = x[j * plane + p];
          gamma_grad[i * c + j] += g * std::abs(xj);
          x_grad[j * plane + p] += g * gamma[i * c + j] * sign_of(xj);
        }
      }
    }
    return;
  }

  ConstMap<T> xm(x.data(), channels, static_cast<Eigen::Index>(plane));
  ConstMap<T> gm(gamma.data(), channels, channels);
  ConstMap<T> dym(y_grad.data(), channels, static_cast<Eigen::Index>(plane));
  MutMap<T> dxm(x_grad.data(), channels, static_cast<Eigen::Index>(plane));
  MutMap<T> dgm(gamma_grad.data(), channels, channels);

  const RowMat<T> abs_x = xm.cwiseAbs();
  RowMat<T> denom = gm * abs_x;
  RowMat<T> g(channels, static_cast<Eigen::Index>(plane));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < channels; ++i) {
    const T b = beta[i];
    for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(plane); ++p) {
      const T d = denom(i, p) + b;
      const T v = xm(i, p);
      const T gy = dym(i, p);
      if (mode == Mode::kDivide) {
        dxm(i, p) = gy / d;
        g(i, p) = -gy * v / (d * d);
      } else {
        dxm(i, p) = gy * d;
        g(i, p) = gy * v;
      }
    }
  }
  for (int i = 0; i < channels; ++i) beta_grad[i] += g.row(i).sum();
  dgm.noalias() += g * abs_x.transpose();
  const RowMat<T> back = gm.transpose() * g;
  dxm.array() += back.array() * xm.array().sign();
}

}  // namespace

template <typename T>
void gdn1_forward(int channels, std::size_t plane, std::span<const T> x, std::span<const T> beta,
                  std::span<const T> gamma, std::span<T> y, Exec exec) {
  forward_impl(Mode::kDivide, channels, plane, x, beta, gamma, y, exec);
}

template <typename T>
void igdn1_forward(int channels, std::size_t plane, std::span<const T> x,
                   std::span<const T> beta, std::span<const T> gamma, std::span<T> y, Exec exec) {
  forward_impl(Mode::kMultiply, channels, plane, x, beta, gamma, y, exec);
}

template <typename T>
void gdn1_backward(int channels, std::size_t plane, std::span<const T> x,
                   std::span<const T> beta, std::span<const T> gamma, std::span<const T> y_grad,
                   std::span<T> x_grad, std::span<T> beta_grad, std::span<T> gamma_grad,
                   Exec exec) {
  backward_impl(Mode::kDivide, channels, plane, x, beta, gamma, y_grad, x_grad, beta_grad,
                gamma_grad, exec);
}

template <typename T>
void igdn1_backward(int channels, std::size_t plane, std::span<const T> x,
                    std::span<const T> beta, std::span<const T> gamma, std::span<const T> y_grad,
                    std::span<T> x_grad, std::span<T> beta_grad, std::span<T> gamma_grad,
                    Exec exec) {
  backward_impl(Mode::kMultiply, channels, plane, x, beta, gamma, y_grad, x_grad, beta_grad,
                gamma_grad, exec);
}

#define ARC_INSTANTIATE(T)                                                                       \
  template void gdn1_forward<T>(int, std::size_t, std::span<const T>, std::span<const T>,        \
                                std::span<const T>, std::span<T>, Exec);                         \
  template void igdn1_forward<T>(int, std::size_t, std::span<const T>, std::span<const T>,       \
                                 std::span<const T>, std::span<T>, Exec);                        \
  template void gdn1_backward<T>(int, std::size_t, std::span<const T>, std::span<const T>,       \
                                 std::span<const T>, std::span<const T>, std::span<T>,           \
                                 std::span<T>, std::span<T>, Exec);                              \
  template void igdn1_backward<T>(int, std::size_t, std::span<const T>, std::span<const T>,      \
                                  std::span<const T>, std::span<const T>, std::span<T>,          \
                                  std::span<T>, std::span<T>, Exec);

ARC_INSTANTIATE(float)
ARC_INSTANTIATE(double)
#undef ARC_INSTANTIATE

}  // namespace arc::kernels
