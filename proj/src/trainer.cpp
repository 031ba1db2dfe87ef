#include "arc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "arc/entropy.hpp"
#include "arc/error.hpp"
#include "arc/random.hpp"

namespace arc {

namespace {

ImageTensor clamp_unit(const Tensor<float>& raw) {
  ImageTensor out = raw;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], 0.0f, 1.0f);
  return out;
}

// Outside [0, 1] the clamp has zero derivative, which would freeze saturated
// pixels for good. Gradients that push a saturated value back towards the
// valid range are passed through; the rest are dropped.
void clamp_backward(const Tensor<float>& raw, ImageTensor& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (raw[i] > 1.0f && grad[i] < 0.0f) grad[i] = 0.0f;
    if (raw[i] < 0.0f && grad[i] > 0.0f) grad[i] = 0.0f;
  }
}

void adam_update(TrainState& s, const ParameterStore& grads, const TrainConfig& c) {
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : s.params) {
    const auto& g = grads.at(name);
    auto& m = s.adam_m.at(name);
    auto& v = s.adam_v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] -= static_cast<float>(c.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + c.adam_epsilon));
    }
  }
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b, double w) {
  acc.rate += w * b.rate;
  acc.bg += w * b.bg;
  acc.hbox += w * b.hbox;
  acc.vbox += w * b.vbox;
  acc.total += w * b.total;
}

std::string first_non_finite(const ParameterStore& store) {
  for (const auto& [name, t] : store) {
    if (!t.all_finite()) return name;
  }
  return {};
}

}  // namespace

void TrainConfig::validate() const {
  weights.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint interval must be >= 0");
}

TrainState TrainState::fresh(const ModelConfig& config, std::uint64_t seed) {
  TrainState s;
  s.config = config;
  s.params = init_parameters(config, seed);
  s.adam_m = s.params.zeros_like();
  s.adam_v = s.params.zeros_like();
  return s;
}

EpochResult train_epoch(TrainState& state, const std::vector<AnnotatedImage>& data,
                        const TrainConfig& config) {
  if (data.empty()) throw InputError("training set is empty");
  config.weights.validate();
  if (config.batch_size < 1) throw ConfigError("batch size must be >= 1");
  for (const auto& item : data) {
    if (!state.config.divides(item.image.height(), item.image.width())) {
      throw InputError("image " + item.id + " dims are not divisible by 2^(M+2)");
    }
  }

  Rng rng(config.seed, static_cast<std::uint64_t>(state.epoch));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());

  const Exec exec = config.exec;
  EpochResult result;
  LossBreakdown sum;
  std::size_t seen = 0;

  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
    const std::size_t count = end - start;
    const auto batch_index = result.batches;

    const FactorizedEntropyModel entropy = FactorizedEntropyModel::from_store(state.params);
    std::vector<AnalysisTrace> atraces(count);
    std::vector<SynthesisTrace> straces(count);
    std::vector<Tensor<float>> noisy(count);
    std::vector<Tensor<float>> raw(count);
    std::vector<ImageTensor> x_hat(count);
    std::vector<LossSample> samples(count);

    LossBreakdown loss;
    try {
      for (std::size_t b = 0; b < count; ++b) {
        const auto& item = data[order[start + b]];
        const Tensor<float> y = analysis_forward_train(item.image, state.params, state.config, atraces[b], exec);
        noisy[b] = quantize_train(y, rng);
        if (!noisy[b].all_finite()) throw NumericError("non-finite latent feeding the rate term (image " + item.id + ")");
        raw[b] = synthesis_forward_train(noisy[b], state.params, state.config, straces[b], exec);
        x_hat[b] = clamp_unit(raw[b]);
        const double pixels = static_cast<double>(item.image.height()) * item.image.width();
        samples[b] = LossSample{&item.image, &x_hat[b], &item.boxes, rate_bits(noisy[b], entropy) / pixels};
      }
      loss = batch_loss(samples, config.weights);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(state.epoch) + " batch " + std::to_string(batch_index) +
                         ": " + e.what());
    }

    ParameterStore grads = state.params.zeros_like();
    std::vector<double> theta_grad(entropy.theta().size(), 0.0);
    std::vector<ImageTensor> out_grads = batch_loss_backward(samples, config.weights);
    for (std::size_t b = 0; b < count; ++b) {
      const auto& img = data[order[start + b]].image;
      clamp_backward(raw[b], out_grads[b]);
      Tensor<float> latent_grad = synthesis_backward(straces[b], out_grads[b], state.params, state.config, grads, exec);
      const double scale = config.weights.lambda_r / (static_cast<double>(count) * img.height() * img.width());
      Tensor<float> rate_grad(noisy[b].shape());
      rate_bits_backward(noisy[b], entropy, scale, rate_grad, theta_grad);
      for (std::size_t i = 0; i < latent_grad.size(); ++i) latent_grad[i] += rate_grad[i];
      analysis_backward(atraces[b], latent_grad, state.params, state.config, grads, exec);
    }
    FactorizedEntropyModel::add_gradient_to_store(theta_grad, grads);
    apply_bound_gradients(state.params, grads);

    if (const auto bad = first_non_finite(grads); !bad.empty()) {
      throw NumericError("epoch " + std::to_string(state.epoch) + " batch " + std::to_string(batch_index) +
                         ": non-finite gradient in " + bad);
    }
    adam_update(state, grads, config);
    if (const auto bad = first_non_finite(state.params); !bad.empty()) {
      throw NumericError("epoch " + std::to_string(state.epoch) + " batch " + std::to_string(batch_index) +
                         ": non-finite parameter " + bad + " after update");
    }

    accumulate(sum, loss, static_cast<double>(count));
    seen += count;
    ++result.batches;
  }

  accumulate(result.loss, sum, 1.0 / static_cast<double>(seen));
  ++state.epoch;
  return result;
}

CdfTable freeze_for(const TrainState& state, const std::vector<AnnotatedImage>& data, Exec exec) {
  const FactorizedEntropyModel entropy = FactorizedEntropyModel::from_store(state.params);
  LatentRange range;
  for (const auto& item : data) range.update(analysis_forward(item.image, state.params, state.config, exec));
  return freeze_cdf(entropy, range.empty() ? nullptr : &range);
}

ModelBundle export_bundle(const TrainState& state, const std::vector<AnnotatedImage>& data, Exec exec) {
  return ModelBundle::make(state.config, state.params, freeze_for(state, data, exec));
}

RegionErrors region_errors(const ImageTensor& x, const ImageTensor& x_hat, const BoxSet& boxes) {
  if (x.shape() != x_hat.shape()) throw InputError("region_errors: shape mismatch");
  const int h = x.height(), w = x.width();
  std::vector<std::uint8_t> head(static_cast<std::size_t>(h) * w, 0), any(head.size(), 0);
  for (const auto& b : boxes) {
    const auto p = detail::checked_pixels(b, w, h);
    for (int yy = p.y0; yy < p.y1; ++yy) {
      for (int xx = p.x0; xx < p.x1; ++xx) {
        const auto i = static_cast<std::size_t>(yy) * w + xx;
        any[i] = 1;
        if (b.role == BoxRole::kHead) head[i] = 1;
      }
    }
  }
  double head_sum = 0, out_sum = 0;
  std::size_t head_n = 0, out_n = 0;
  for (int c = 0; c < x.channels(); ++c) {
    for (std::size_t i = 0; i < head.size(); ++i) {
      const double d = static_cast<double>(x_hat.data()[c * head.size() + i]) - x.data()[c * head.size() + i];
      if (head[i]) {
        head_sum += d * d;
        ++head_n;
      }
      if (!any[i]) {
        out_sum += d * d;
        ++out_n;
      }
    }
  }
  RegionErrors r;
  if (head_n) r.head = head_sum / static_cast<double>(head_n);
  if (out_n) r.outside = out_sum / static_cast<double>(out_n);
  return r;
}

EvalResult evaluate(const TrainState& state, const std::vector<AnnotatedImage>& data,
                    const LossWeights& weights, Exec exec) {
  EvalResult r;
  if (data.empty()) return r;
  const ModelBundle bundle = export_bundle(state, data, exec);
  std::vector<double> rates;
  std::size_t head_images = 0, outside_images = 0;
  LossBreakdown sum;
  for (const auto& item : data) {
    const Bitstream bs = encode_image(item.image, bundle, exec);
    const ImageTensor x_hat = decode_image(bs.serialize(), bundle, exec);
    const double rate = bpp(bs);
    rates.push_back(rate);
    const LossBreakdown l = total_loss(rate, item.image, x_hat, filter_role(item.boxes, BoxRole::kHead),
                                       filter_role(item.boxes, BoxRole::kVisible), weights);
    accumulate(sum, l, 1.0);
    const RegionErrors e = region_errors(item.image, x_hat, item.boxes);
    if (e.head) {
      r.hbox_mse += *e.head;
      ++head_images;
    }
    if (e.outside) {
      r.outside_mse += *e.outside;
      ++outside_images;
    }
  }
  const double n = static_cast<double>(data.size());
  accumulate(r.loss, sum, 1.0 / n);
  r.images = data.size();
  r.mean_bpp = std::accumulate(rates.begin(), rates.end(), 0.0) / n;
  if (rates.size() > 1) {
    double ss = 0;
    for (double v : rates) ss += (v - r.mean_bpp) * (v - r.mean_bpp);
    r.bpp_std = std::sqrt(ss / (n - 1));
  }
  if (head_images) r.hbox_mse /= static_cast<double>(head_images);
  if (outside_images) r.outside_mse /= static_cast<double>(outside_images);
  return r;
}

Checkpoint to_checkpoint(const TrainState& state) {
  Checkpoint ckpt;
  ckpt.config = state.config;
  append_parameters(ckpt, state.params);
  append_parameters(ckpt, state.adam_m, "optim.m.");
  append_parameters(ckpt, state.adam_v, "optim.v.");
  const std::uint64_t step[1] = {state.step};
  const std::int32_t epoch[1] = {state.epoch};
  ckpt.arrays.push_back(NamedArray::from<std::uint64_t>("train.step", DType::kU64, {1}, step));
  ckpt.arrays.push_back(NamedArray::from<std::int32_t>("train.epoch", DType::kI32, {1}, epoch));
  return ckpt;
}

TrainState from_checkpoint(const Checkpoint& ckpt) {
  TrainState s;
  s.config = ckpt.config;
  s.params = extract_parameters(ckpt);
  check_parameters(s.params, s.config);
  if (ckpt.find("train.step") == nullptr) {
    // A bundle without optimizer state: start a fresh optimizer.
    s.adam_m = s.params.zeros_like();
    s.adam_v = s.params.zeros_like();
    return s;
  }
  s.adam_m = extract_parameters(ckpt, "optim.m.");
  s.adam_v = extract_parameters(ckpt, "optim.v.");
  for (const auto* moments : {&s.adam_m, &s.adam_v}) {
    if (moments->size() != s.params.size()) throw FormatError("checkpoint optimizer state is incomplete");
    for (const auto& [name, t] : s.params) {
      if (!moments->contains(name) || moments->at(name).shape() != t.shape()) {
        throw FormatError("checkpoint optimizer state does not match parameter " + name);
      }
    }
  }
  const auto& step = ckpt.get("train.step");
  const auto& epoch = ckpt.get("train.epoch");
  if (step.dtype != DType::kU64 || step.element_count() != 1 || epoch.dtype != DType::kI32 ||
      epoch.element_count() != 1) {
    throw FormatError("checkpoint training counters are malformed");
  }
  s.step = step.values<std::uint64_t>()[0];
  s.epoch = epoch.values<std::int32_t>()[0];
  return s;
}

void save_state(const std::filesystem::path& path, const TrainState& state) {
  write_checkpoint(path, to_checkpoint(state));
}

TrainState restore_state(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (expected && !(*expected == ckpt.config)) {
    throw ModelMismatchError("checkpoint model config (N=" + std::to_string(ckpt.config.width_n) +
                             ", M=" + std::to_string(ckpt.config.hidden_layers_m) +
                             ") does not match the requested config (N=" + std::to_string(expected->width_n) +
                             ", M=" + std::to_string(expected->hidden_layers_m) + ")");
  }
  return from_checkpoint(ckpt);
}

TrainLog::TrainLog(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw IoError("cannot write training log " + path.string());
  out_ << "epoch,rate,bg,hbox,vbox,total,val_bpp\n";
  out_.flush();
}

void TrainLog::append(int epoch, const LossBreakdown& l, std::optional<double> val_bpp) {
  out_ << epoch << ',' << l.rate << ',' << l.bg << ',' << l.hbox << ',' << l.vbox << ',' << l.total << ',';
  if (val_bpp) out_ << *val_bpp;
  out_ << '\n';
  out_.flush();
}

EpochResult train(TrainState& state, const std::vector<AnnotatedImage>& data, const TrainConfig& config,
                  const TrainRun& run) {
  config.validate();
  std::optional<TrainLog> log;
  if (!run.log.empty()) log.emplace(run.log);
  EpochResult last;
  while (state.epoch < config.epochs) {
    last = train_epoch(state, data, config);
    std::optional<double> val_bpp;
    const bool final_epoch = state.epoch == config.epochs;
    const bool periodic = config.checkpoint_interval > 0 && state.epoch % config.checkpoint_interval == 0;
    if (run.validation && !run.validation->empty() && (final_epoch || periodic)) {
      val_bpp = evaluate(state, *run.validation, config.weights, config.exec).mean_bpp;
    }
    if (log) log->append(state.epoch, last.loss, val_bpp);
    if (!run.checkpoint.empty() && (final_epoch || periodic)) save_state(run.checkpoint, state);
  }
  return last;
}

}  // namespace arc
