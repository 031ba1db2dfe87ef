#include "arc/model.hpp"

#include <cmath>
#include <string>

#include "arc/entropy.hpp"
#include "arc/error.hpp"
#include "arc/kernels/conv.hpp"
#include "arc/kernels/gdn.hpp"
#include "arc/random.hpp"

namespace arc {

using kernels::ConvGeometry;

void ModelConfig::validate() const {
  if (width_n < 1) throw ConfigError("width N must be >= 1");
  if (hidden_layers_m < 1) throw ConfigError("hidden layer count M must be >= 1");
  if (hidden_layers_m > 12) throw ConfigError("hidden layer count M is unreasonably large");
  if (kernel_size != 5) throw ConfigError("kernel size is fixed to 5");
  if (stride != 2) throw ConfigError("stride is fixed to 2");
  if (input_channels < 1) throw ConfigError("input channel count must be >= 1");
  if (input_size % downsample_factor() != 0 || input_size <= 0) {
    throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by 2^" +
                      std::to_string(layer_count()) + " = " + std::to_string(downsample_factor()));
  }
}

Shape ModelConfig::latent_shape(int image_h, int image_w) const {
  if (!divides(image_h, image_w)) {
    throw InputError("image " + std::to_string(image_w) + "x" + std::to_string(image_h) +
                     " is not divisible by " + std::to_string(downsample_factor()));
  }
  return {width_n, image_h / downsample_factor(), image_w / downsample_factor()};
}

void ParameterStore::add(const std::string& name, Tensor<float> value) {
  if (!arrays_.emplace(name, std::move(value)).second) {
    throw ConfigError("duplicate parameter name " + name);
  }
}

Tensor<float>& ParameterStore::at(const std::string& name) {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

const Tensor<float>& ParameterStore::at(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : arrays_) n += t.size();
  return n;
}

ParameterStore ParameterStore::zeros_like() const {
  ParameterStore out;
  for (const auto& [name, t] : arrays_) out.add(name, Tensor<float>(t.shape()));
  return out;
}

void ParameterStore::set_zero() {
  for (auto& [name, t] : arrays_) t.fill(0.0f);
}

bool ParameterStore::all_finite() const {
  for (const auto& [name, t] : arrays_) {
    if (!t.all_finite()) return false;
  }
  return true;
}

namespace {

std::string conv_name(int i) { return "analysis.conv" + std::to_string(i); }
std::string gdn_name(int i) { return "analysis.gdn" + std::to_string(i); }
std::string deconv_name(int i) { return "synthesis.deconv" + std::to_string(i); }
std::string igdn_name(int i) { return "synthesis.igdn" + std::to_string(i); }

bool is_bounded_gdn(const std::string& name) {
  return name.rfind("analysis.gdn", 0) == 0 || name.rfind("synthesis.igdn", 0) == 0;
}

float bound_for(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".beta") == 0 ? kBetaMin : kGammaMin;
}

// Geometry of analysis layer i applied to an input of size h x w.
ConvGeometry analysis_geometry(const ModelConfig& cfg, int i, int h, int w) {
  const int in_c = i == 0 ? cfg.input_channels : cfg.width_n;
  return ConvGeometry::downsample(in_c, cfg.width_n, h, w, cfg.kernel_size, cfg.stride);
}

// Synthesis layer i (0 = latent side) upsamples h x w to 2h x 2w.
ConvGeometry synthesis_geometry(const ModelConfig& cfg, int i, int h, int w) {
  const int out_c = i == cfg.layer_count() - 1 ? cfg.input_channels : cfg.width_n;
  return ConvGeometry::downsample(out_c, cfg.width_n, h * cfg.stride, w * cfg.stride,
                                  cfg.kernel_size, cfg.stride);
}

void init_uniform(Tensor<float>& t, double limit, Rng& rng) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-limit, limit));
}

void add_gdn(ParameterStore& store, const std::string& name, int n) {
  store.add(name + ".beta", Tensor<float>({n}, 1.0f));
  Tensor<float> gamma({n, n});
  for (int i = 0; i < n; ++i) gamma[static_cast<std::size_t>(i) * n + i] = 0.1f;
  store.add(name + ".gamma", std::move(gamma));
}

struct GdnView {
  std::vector<float> beta;
  std::vector<float> gamma;
};

GdnView effective_gdn(const ParameterStore& params, const std::string& name) {
  return {lower_bounded(params.at(name + ".beta"), kBetaMin),
          lower_bounded(params.at(name + ".gamma"), kGammaMin)};
}

std::span<const float> cspan(const Tensor<float>& t) { return t.span(); }

void check_image(const ImageTensor& image, const ModelConfig& cfg) {
  if (image.rank() != 3 || image.channels() != cfg.input_channels) {
    throw InputError("image " + shape_string(image.shape()) + " does not have " +
                     std::to_string(cfg.input_channels) + " channels");
  }
  cfg.latent_shape(image.height(), image.width());
}

void check_latent(const Tensor<float>& latent, const ModelConfig& cfg) {
  if (latent.rank() != 3 || latent.channels() != cfg.width_n || latent.height() < 1 ||
      latent.width() < 1) {
    throw ConfigError("latent " + shape_string(latent.shape()) + " does not match N=" +
                      std::to_string(cfg.width_n));
  }
}

// Shared by the inference and training passes; `trace` may be null.
Tensor<float> run_analysis(const ImageTensor& image, const ParameterStore& params,
                           const ModelConfig& cfg, AnalysisTrace* trace, Exec exec) {
  cfg.validate();
  check_image(image, cfg);
  if (trace) {
    trace->conv_inputs.clear();
    trace->gdn_inputs.clear();
  }
  Tensor<float> h = image;
  for (int i = 0; i < cfg.layer_count(); ++i) {
    const auto g = analysis_geometry(cfg, i, h.height(), h.width());
    Tensor<float> z({g.narrow_channels, g.narrow_h, g.narrow_w});
    kernels::conv2d_forward<float>(g, h.span(), cspan(params.at(conv_name(i) + ".weight")),
                                   cspan(params.at(conv_name(i) + ".bias")), z.span(), exec);
    if (trace) trace->conv_inputs.push_back(std::move(h));
    if (i + 1 < cfg.layer_count()) {
      const auto gdn = effective_gdn(params, gdn_name(i));
      Tensor<float> out(z.shape());
      kernels::gdn1_forward<float>(g.narrow_channels, static_cast<std::size_t>(g.narrow_h) * g.narrow_w,
                                   z.span(), gdn.beta, gdn.gamma, out.span(), exec);
      if (trace) trace->gdn_inputs.push_back(std::move(z));
      h = std::move(out);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Tensor<float> run_synthesis(const Tensor<float>& latent, const ParameterStore& params,
                            const ModelConfig& cfg, SynthesisTrace* trace, Exec exec) {
  cfg.validate();
  check_latent(latent, cfg);
  if (trace) {
    trace->deconv_inputs.clear();
    trace->igdn_inputs.clear();
  }
  Tensor<float> h = latent;
  for (int i = 0; i < cfg.layer_count(); ++i) {
    const auto g = synthesis_geometry(cfg, i, h.height(), h.width());
    Tensor<float> z({g.wide_channels, g.wide_h, g.wide_w});
    kernels::conv_transpose2d_forward<float>(g, h.span(),
                                             cspan(params.at(deconv_name(i) + ".weight")),
                                             cspan(params.at(deconv_name(i) + ".bias")), z.span(), exec);
    if (trace) trace->deconv_inputs.push_back(std::move(h));
    if (i + 1 < cfg.layer_count()) {
      const auto gdn = effective_gdn(params, igdn_name(i));
      Tensor<float> out(z.shape());
      kernels::igdn1_forward<float>(g.wide_channels, static_cast<std::size_t>(g.wide_h) * g.wide_w,
                                    z.span(), gdn.beta, gdn.gamma, out.span(), exec);
      if (trace) trace->igdn_inputs.push_back(std::move(z));
      h = std::move(out);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

}  // namespace

std::vector<float> lower_bounded(const Tensor<float>& raw, float bound) {
  std::vector<float> out(raw.vec());
  for (float& v : out) v = std::max(v, bound);
  return out;
}

void apply_bound_gradients(const ParameterStore& params, ParameterStore& grads) {
  for (auto& [name, g] : grads) {
    if (!is_bounded_gdn(name)) continue;
    const auto& raw = params.at(name);
    const float bound = bound_for(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      // Descent moves raw by -g; keep the gradient only if that moves it up.
      if (raw[i] < bound && g[i] > 0.0f) g[i] = 0.0f;
    }
  }
}

ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParameterStore store;
  const int n = cfg.width_n;
  const int k = cfg.kernel_size;
  for (int i = 0; i < cfg.layer_count(); ++i) {
    const int in_c = i == 0 ? cfg.input_channels : n;
    Tensor<float> w({n, in_c, k, k});
    init_uniform(w, std::sqrt(3.0 / (in_c * k * k)), rng);
    store.add(conv_name(i) + ".weight", std::move(w));
    store.add(conv_name(i) + ".bias", Tensor<float>({n}));
    if (i + 1 < cfg.layer_count()) add_gdn(store, gdn_name(i), n);
  }
  for (int i = 0; i < cfg.layer_count(); ++i) {
    const int out_c = i == cfg.layer_count() - 1 ? cfg.input_channels : n;
    Tensor<float> w({n, out_c, k, k});
    // Each output pixel of a stride-2 transposed conv sees ~k*k/4 taps per input channel.
    const double fan_in = static_cast<double>(n) * k * k / (cfg.stride * cfg.stride);
    init_uniform(w, std::sqrt(3.0 / fan_in), rng);
    store.add(deconv_name(i) + ".weight", std::move(w));
    store.add(deconv_name(i) + ".bias", Tensor<float>({out_c}));
    if (i + 1 < cfg.layer_count()) add_gdn(store, igdn_name(i), n);
  }
  add_entropy_parameters(store, n, rng);
  return store;
}

void check_parameters(const ParameterStore& params, const ModelConfig& cfg) {
  cfg.validate();
  const ParameterStore expected = init_parameters(cfg, 0);
  if (expected.size() != params.size()) {
    throw ConfigError("parameter store has " + std::to_string(params.size()) + " arrays, config implies " +
                      std::to_string(expected.size()));
  }
  for (const auto& [name, t] : expected) {
    if (!params.contains(name)) throw ConfigError("parameter store lacks " + name);
    if (params.at(name).shape() != t.shape()) {
      throw ConfigError("parameter " + name + " has shape " + shape_string(params.at(name).shape()) +
                        ", config implies " + shape_string(t.shape()));
    }
  }
}

Tensor<float> analysis_forward(const ImageTensor& image, const ParameterStore& params,
                               const ModelConfig& config, Exec exec) {
  return run_analysis(image, params, config, nullptr, exec);
}

ImageTensor synthesis_forward(const Tensor<float>& latent, const ParameterStore& params,
                              const ModelConfig& config, Exec exec, bool clamp) {
  ImageTensor out = run_synthesis(latent, params, config, nullptr, exec);
  if (clamp) {
    for (float& v : out.vec()) v = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

Tensor<float> analysis_forward_train(const ImageTensor& image, const ParameterStore& params,
                                     const ModelConfig& config, AnalysisTrace& trace, Exec exec) {
  return run_analysis(image, params, config, &trace, exec);
}

Tensor<float> synthesis_forward_train(const Tensor<float>& latent, const ParameterStore& params,
                                      const ModelConfig& config, SynthesisTrace& trace, Exec exec) {
  return run_synthesis(latent, params, config, &trace, exec);
}

void analysis_backward(const AnalysisTrace& trace, const Tensor<float>& latent_grad,
                       const ParameterStore& params, const ModelConfig& cfg, ParameterStore& grads,
                       Exec exec) {
  if (static_cast<int>(trace.conv_inputs.size()) != cfg.layer_count()) {
    throw ConfigError("analysis trace does not match config");
  }
  Tensor<float> d = latent_grad;
  for (int i = cfg.layer_count() - 1; i >= 0; --i) {
    const auto& in = trace.conv_inputs[static_cast<std::size_t>(i)];
    const auto g = analysis_geometry(cfg, i, in.height(), in.width());
    if (i + 1 < cfg.layer_count()) {
      const auto& z = trace.gdn_inputs[static_cast<std::size_t>(i)];
      const auto gdn = effective_gdn(params, gdn_name(i));
      Tensor<float> dz(z.shape());
      kernels::gdn1_backward<float>(g.narrow_channels, static_cast<std::size_t>(g.narrow_h) * g.narrow_w,
                                    z.span(), gdn.beta, gdn.gamma, d.span(), dz.span(),
                                    grads.at(gdn_name(i) + ".beta").span(),
                                    grads.at(gdn_name(i) + ".gamma").span(), exec);
      d = std::move(dz);
    }
    kernels::conv2d_backward_weight<float>(g, in.span(), d.span(),
                                           grads.at(conv_name(i) + ".weight").span(),
                                           grads.at(conv_name(i) + ".bias").span(), exec);
    if (i > 0) {
      Tensor<float> din(in.shape());
      kernels::conv2d_backward_input<float>(g, d.span(), cspan(params.at(conv_name(i) + ".weight")),
                                            din.span(), exec);
      d = std::move(din);
    }
  }
}

Tensor<float> synthesis_backward(const SynthesisTrace& trace, const Tensor<float>& output_grad,
                                 const ParameterStore& params, const ModelConfig& cfg,
                                 ParameterStore& grads, Exec exec) {
  if (static_cast<int>(trace.deconv_inputs.size()) != cfg.layer_count()) {
    throw ConfigError("synthesis trace does not match config");
  }
  Tensor<float> d = output_grad;
  for (int i = cfg.layer_count() - 1; i >= 0; --i) {
    const auto& in = trace.deconv_inputs[static_cast<std::size_t>(i)];
    const auto g = synthesis_geometry(cfg, i, in.height(), in.width());
    if (i + 1 < cfg.layer_count()) {
      const auto& z = trace.igdn_inputs[static_cast<std::size_t>(i)];
      const auto gdn = effective_gdn(params, igdn_name(i));
      Tensor<float> dz(z.shape());
      kernels::igdn1_backward<float>(g.wide_channels, static_cast<std::size_t>(g.wide_h) * g.wide_w,
                                     z.span(), gdn.beta, gdn.gamma, d.span(), dz.span(),
                                     grads.at(igdn_name(i) + ".beta").span(),
                                     grads.at(igdn_name(i) + ".gamma").span(), exec);
      d = std::move(dz);
    }
    kernels::conv_transpose2d_backward_weight<float>(g, in.span(), d.span(),
                                                     grads.at(deconv_name(i) + ".weight").span(),
                                                     grads.at(deconv_name(i) + ".bias").span(), exec);
    Tensor<float> din(in.shape());
    kernels::conv_transpose2d_backward_input<float>(g, d.span(),
                                                    cspan(params.at(deconv_name(i) + ".weight")),
                                                    din.span(), exec);
    d = std::move(din);
  }
  return d;
}

}  // namespace arc
