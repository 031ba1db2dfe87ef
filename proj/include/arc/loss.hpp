#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "arc/error.hpp"
#include "arc/tensor.hpp"

namespace arc {

enum class BoxRole { kHead, kVisible };

// Pixel-space rectangle. Coordinates are real-valued (rescaling keeps
// fractional positions); crops use the rounded pixel rectangle.
struct BoundingBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
  BoxRole role = BoxRole::kVisible;

  struct Pixels {
    int x0, y0, x1, y1;  // half-open
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
  };
  Pixels pixels() const {
    return {static_cast<int>(std::round(x)), static_cast<int>(std::round(y)),
            static_cast<int>(std::round(x + w)), static_cast<int>(std::round(y + h))};
  }
  double area() const { return w * h; }

  // x, y >= 0, w, h >= 1 and the box fits inside width x height.
  bool valid_for(int width, int height) const {
    return x >= 0 && y >= 0 && w >= 1 && h >= 1 && x + w <= width + 1e-9 &&
           y + h <= height + 1e-9;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

using BoxSet = std::vector<BoundingBox>;

BoxSet filter_role(const BoxSet& boxes, BoxRole role);

struct RoiLossSpec {
  int k = 0;
  void validate() const {
    if (k != 0 && k != 1) throw ConfigError("ROI loss k must be 0 or 1, got " + std::to_string(k));
  }
};

struct LossWeights {
  double lambda_r = 0.04;
  double lambda_bg = 1.0;
  double lambda_hbox = 0.6;
  double lambda_vbox = 1.0;
  void validate() const;
};

struct LossBreakdown {
  double rate = 0;  // bits per pixel
  double bg = 0;
  double hbox = 0;
  double vbox = 0;
  double total = 0;
};

// Weighted sum; throws NumericError naming the first non-finite component.
LossBreakdown combine_losses(double rate, double bg, double hbox, double vbox,
                             const LossWeights& weights);

namespace detail {
inline BoundingBox::Pixels checked_pixels(const BoundingBox& b, int width, int height) {
  const auto p = b.pixels();
  if (p.x0 < 0 || p.y0 < 0 || p.x1 > width || p.y1 > height || p.width() < 1 || p.height() < 1) {
    throw InputError("box (" + std::to_string(b.x) + ", " + std::to_string(b.y) + ", " +
                     std::to_string(b.w) + ", " + std::to_string(b.h) + ") outside " +
                     std::to_string(width) + "x" + std::to_string(height) + " image");
  }
  return p;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw InputError("shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

// Sum of squared differences over a box and its element count.
template <typename T>
T box_squared_error(const Tensor<T>& a, const Tensor<T>& b, const BoundingBox::Pixels& p) {
  T acc = 0;
  for (int c = 0; c < a.channels(); ++c) {
    for (int y = p.y0; y < p.y1; ++y) {
      for (int x = p.x0; x < p.x1; ++x) {
        const T d = a.at(c, y, x) - b.at(c, y, x);
        acc += d * d;
      }
    }
  }
  return acc;
}
}  // namespace detail

// [C, h, w] sub-block of `t` under `box`.
template <typename T>
Tensor<T> crop(const Tensor<T>& t, const BoundingBox& box) {
  const auto p = detail::checked_pixels(box, t.width(), t.height());
  Tensor<T> out({t.channels(), p.height(), p.width()});
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < p.height(); ++y) {
      for (int x = 0; x < p.width(); ++x) out.at(c, y, x) = t.at(c, p.y0 + y, p.x0 + x);
    }
  }
  return out;
}

template <typename T>
T mse(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b);
  if (a.empty()) return T(0);
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<T>(a.size());
}

// grad += scale * d mse(a, b) / d b
template <typename T>
void mse_backward(const Tensor<T>& a, const Tensor<T>& b, T scale, Tensor<T>& grad) {
  detail::check_same_shape(a, b);
  detail::check_same_shape(a, grad);
  if (a.empty()) return;
  const T f = T(2) * scale / static_cast<T>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) grad[i] += f * (b[i] - a[i]);
}

// Per-box ROI loss, k + (-1)^k * mse over the crop.
template <typename T>
T box_roi_loss(const Tensor<T>& x, const Tensor<T>& x_hat, const BoundingBox& box,
               const RoiLossSpec& spec) {
  spec.validate();
  const auto p = detail::checked_pixels(box, x.width(), x.height());
  const T n = static_cast<T>(x.channels()) * p.width() * p.height();
  const T m = detail::box_squared_error(x, x_hat, p) / n;
  return spec.k == 0 ? m : T(1) - m;
}

// Mean of box_roi_loss over `boxes`; 0 for an empty set.
template <typename T>
T roi_loss(const Tensor<T>& x, const Tensor<T>& x_hat, std::span<const BoundingBox> boxes,
           const RoiLossSpec& spec) {
  spec.validate();
  detail::check_same_shape(x, x_hat);
  if (boxes.empty()) return T(0);
  T acc = 0;
  for (const auto& b : boxes) acc += box_roi_loss(x, x_hat, b, spec);
  return acc / static_cast<T>(boxes.size());
}

// grad += scale * d box_roi_loss / d x_hat
template <typename T>
void box_roi_loss_backward(const Tensor<T>& x, const Tensor<T>& x_hat, const BoundingBox& box,
                           const RoiLossSpec& spec, T scale, Tensor<T>& grad) {
  spec.validate();
  const auto p = detail::checked_pixels(box, x.width(), x.height());
  const T n = static_cast<T>(x.channels()) * p.width() * p.height();
  const T sign = spec.k == 0 ? T(1) : T(-1);
  const T f = sign * T(2) * scale / n;
  for (int c = 0; c < x.channels(); ++c) {
    for (int y = p.y0; y < p.y1; ++y) {
      for (int xx = p.x0; xx < p.x1; ++xx) grad.at(c, y, xx) += f * (x_hat.at(c, y, xx) - x.at(c, y, xx));
    }
  }
}

// grad += scale * d roi_loss / d x_hat
template <typename T>
void roi_loss_backward(const Tensor<T>& x, const Tensor<T>& x_hat,
                       std::span<const BoundingBox> boxes, const RoiLossSpec& spec, T scale,
                       Tensor<T>& grad) {
  detail::check_same_shape(x, x_hat);
  detail::check_same_shape(x, grad);
  if (boxes.empty()) return;
  const T per_box = scale / static_cast<T>(boxes.size());
  for (const auto& b : boxes) box_roi_loss_backward(x, x_hat, b, spec, per_box, grad);
}

// Single-image objective: bg = mse over the full image, vbox = L0 over
// visible boxes, hbox = L1 over head boxes. `rate_bpp` is already per pixel.
LossBreakdown total_loss(double rate_bpp, const ImageTensor& x, const ImageTensor& x_hat,
                         const BoxSet& hboxes, const BoxSet& vboxes, const LossWeights& weights);

// One training sample as seen by the batch objective.
struct LossSample {
  const ImageTensor* x = nullptr;
  const ImageTensor* x_hat = nullptr;
  const BoxSet* boxes = nullptr;  // both roles
  double rate_bpp = 0;
};

// Batch objective. rate and bg are batch means of per-image values; the
// box terms average over all boxes of the role pooled across the batch, so
// images without boxes of a role do not dilute that term.
LossBreakdown batch_loss(std::span<const LossSample> samples, const LossWeights& weights);

// Gradients of the batch total w.r.t. each x_hat (distortion terms only;
// the rate gradient flows through the entropy model separately).
std::vector<ImageTensor> batch_loss_backward(std::span<const LossSample> samples,
                                             const LossWeights& weights);

}  // namespace arc
