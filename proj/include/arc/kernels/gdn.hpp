#pragma once

#include <span>

#include "arc/parallel.hpp"

namespace arc::kernels {

// Simplified divisive normalization (GDN1) over an activation laid out as
// [channels, plane]:
//
//   denom[i,p] = beta[i] + sum_j gamma[i,j] * |x[j,p]|
//   gdn1:  y[i,p] = x[i,p] / denom[i,p]
//   igdn1: y[i,p] = x[i,p] * denom[i,p]
//
// beta/gamma are the effective (already bounded) parameters; gamma is
// row-major [channels, channels].
template <typename T>
void gdn1_forward(int channels, std::size_t plane, std::span<const T> x, std::span<const T> beta,
                  std::span<const T> gamma, std::span<T> y, Exec exec = Exec::kParallel);

template <typename T>
void igdn1_forward(int channels, std::size_t plane, std::span<const T> x,
                   std::span<const T> beta, std::span<const T> gamma, std::span<T> y,
                   Exec exec = Exec::kParallel);

// Overwrites x_grad; accumulates into beta_grad and gamma_grad.
template <typename T>
void gdn1_backward(int channels, std::size_t plane, std::span<const T> x,
                   std::span<const T> beta, std::span<const T> gamma, std::span<const T> y_grad,
                   std::span<T> x_grad, std::span<T> beta_grad, std::span<T> gamma_grad,
                   Exec exec = Exec::kParallel);

template <typename T>
void igdn1_backward(int channels, std::size_t plane, std::span<const T> x,
                    std::span<const T> beta, std::span<const T> gamma, std::span<const T> y_grad,
                    std::span<T> x_grad, std::span<T> beta_grad, std::span<T> gamma_grad,
                    Exec exec = Exec::kParallel);

}  // namespace arc::kernels
