#include "arc/loss.hpp"

namespace arc {

BoxSet filter_role(const BoxSet& boxes, BoxRole role) {
  BoxSet out;
  for (const auto& b : boxes) {
    if (b.role == role) out.push_back(b);
  }
  return out;
}

void LossWeights::validate() const {
  const double all[] = {lambda_r, lambda_bg, lambda_hbox, lambda_vbox};
  for (double v : all) {
    if (!std::isfinite(v) || v < 0) throw ConfigError("loss weights must be finite and non-negative");
  }
}

LossBreakdown combine_losses(double rate, double bg, double hbox, double vbox,
                             const LossWeights& weights) {
  weights.validate();
  const std::pair<const char*, double> parts[] = {
      {"rate", rate}, {"bg", bg}, {"hbox", hbox}, {"vbox", vbox}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + name + " loss component");
  }
  LossBreakdown out{rate, bg, hbox, vbox, 0.0};
  out.total = weights.lambda_r * rate + weights.lambda_bg * bg + weights.lambda_hbox * hbox +
              weights.lambda_vbox * vbox;
  return out;
}

LossBreakdown total_loss(double rate_bpp, const ImageTensor& x, const ImageTensor& x_hat,
                         const BoxSet& hboxes, const BoxSet& vboxes, const LossWeights& weights) {
  const double bg = mse(x, x_hat);
  const double hbox = roi_loss<float>(x, x_hat, hboxes, RoiLossSpec{1});
  const double vbox = roi_loss<float>(x, x_hat, vboxes, RoiLossSpec{0});
  return combine_losses(rate_bpp, bg, hbox, vbox, weights);
}

namespace {

struct Pooled {
  double rate = 0, bg = 0, hbox_sum = 0, vbox_sum = 0;
  std::size_t hbox_count = 0, vbox_count = 0;
};

void check_sample(const LossSample& s) {
  if (!s.x || !s.x_hat || !s.boxes) throw ConfigError("incomplete loss sample");
}

}  // namespace

LossBreakdown batch_loss(std::span<const LossSample> samples, const LossWeights& weights) {
  if (samples.empty()) return combine_losses(0, 0, 0, 0, weights);
  Pooled p;
  for (const auto& s : samples) {
    check_sample(s);
    p.rate += s.rate_bpp;
    p.bg += mse(*s.x, *s.x_hat);
    for (const auto& b : *s.boxes) {
      if (b.role == BoxRole::kHead) {
        p.hbox_sum += box_roi_loss<float>(*s.x, *s.x_hat, b, RoiLossSpec{1});
        ++p.hbox_count;
      } else {
        p.vbox_sum += box_roi_loss<float>(*s.x, *s.x_hat, b, RoiLossSpec{0});
        ++p.vbox_count;
      }
    }
  }
  const double n = static_cast<double>(samples.size());
  return combine_losses(p.rate / n, p.bg / n,
                        p.hbox_count ? p.hbox_sum / static_cast<double>(p.hbox_count) : 0.0,
                        p.vbox_count ? p.vbox_sum / static_cast<double>(p.vbox_count) : 0.0, weights);
}

std::vector<ImageTensor> batch_loss_backward(std::span<const LossSample> samples,
                                             const LossWeights& weights) {
  weights.validate();
  std::size_t hbox_count = 0, vbox_count = 0;
  for (const auto& s : samples) {
    check_sample(s);
    for (const auto& b : *s.boxes) ++(b.role == BoxRole::kHead ? hbox_count : vbox_count);
  }
  const auto n = static_cast<float>(samples.size());
  std::vector<ImageTensor> grads;
  grads.reserve(samples.size());
  for (const auto& s : samples) {
    ImageTensor g(s.x->shape());
    mse_backward(*s.x, *s.x_hat, static_cast<float>(weights.lambda_bg) / n, g);
    for (const auto& b : *s.boxes) {
      if (b.role == BoxRole::kHead) {
        box_roi_loss_backward(*s.x, *s.x_hat, b, RoiLossSpec{1},
                              static_cast<float>(weights.lambda_hbox / static_cast<double>(hbox_count)), g);
      } else {
        box_roi_loss_backward(*s.x, *s.x_hat, b, RoiLossSpec{0},
                              static_cast<float>(weights.lambda_vbox / static_cast<double>(vbox_count)), g);
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace arc
