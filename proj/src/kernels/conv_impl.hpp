#pragma once

#include <span>

#include "arc/kernels/conv.hpp"

namespace arc::kernels {

namespace reference {
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> wide, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> narrow);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> narrow_grad,
                           std::span<const T> weight, std::span<T> wide_grad);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> wide,
                            std::span<const T> narrow_grad, std::span<T> weight_grad,
                            std::span<T> bias_grad);
}  // namespace reference

namespace parallel {
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> wide, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> narrow);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> narrow_grad,
                           std::span<const T> weight, std::span<T> wide_grad);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> wide,
                            std::span<const T> narrow_grad, std::span<T> weight_grad,
                            std::span<T> bias_grad);
}  // namespace parallel

}  // namespace arc::kernels
