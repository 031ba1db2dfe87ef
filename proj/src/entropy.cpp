#include "arc/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "arc/error.hpp"

namespace arc {

namespace {

using Model = FactorizedEntropyModel;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Model::Layout make_layout() {
  Model::Layout l;
  int off = 0;
  for (int k = 0; k < Model::kLayers; ++k) {
    l.matrix[k] = off;
    off += Model::kFilters[k + 1] * Model::kFilters[k];
  }
  for (int k = 0; k < Model::kLayers; ++k) {
    l.bias[k] = off;
    off += Model::kFilters[k + 1];
  }
  for (int k = 0; k < Model::kLayers - 1; ++k) {
    l.factor[k] = off;
    off += Model::kFilters[k + 1];
  }
  l.per_channel = off;
  return l;
}

constexpr int kMaxWidth = 3;

// Activations of one logits evaluation.
struct Tape {
  std::array<std::array<double, kMaxWidth>, Model::kLayers + 1> h{};
  std::array<std::array<double, kMaxWidth>, Model::kLayers> z{};
};

double logits_forward(const double* th, double v, Tape& t) {
  const auto& l = Model::layout();
  t.h[0][0] = v;
  for (int k = 0; k < Model::kLayers; ++k) {
    const int in = Model::kFilters[k];
    const int out = Model::kFilters[k + 1];
    for (int o = 0; o < out; ++o) {
      double acc = th[l.bias[k] + o];
      for (int i = 0; i < in; ++i) acc += softplus(th[l.matrix[k] + o * in + i]) * t.h[k][i];
      t.z[k][o] = acc;
      t.h[k + 1][o] =
          k + 1 < Model::kLayers ? acc + std::tanh(th[l.factor[k] + o]) * std::tanh(acc) : acc;
    }
  }
  return t.h[Model::kLayers][0];
}

// Accumulates d(out)/d(theta) * dout into g; returns d(out)/dv * dout.
double logits_backward(const double* th, const Tape& t, double dout, double* g) {
  const auto& l = Model::layout();
  std::array<double, kMaxWidth> dh{};
  dh[0] = dout;
  for (int k = Model::kLayers - 1; k >= 0; --k) {
    const int in = Model::kFilters[k];
    const int out = Model::kFilters[k + 1];
    std::array<double, kMaxWidth> dz{};
    for (int o = 0; o < out; ++o) {
      if (k + 1 < Model::kLayers) {
        const double ta = std::tanh(th[l.factor[k] + o]);
        const double tz = std::tanh(t.z[k][o]);
        dz[o] = dh[o] * (1.0 + ta * (1.0 - tz * tz));
        g[l.factor[k] + o] += dh[o] * tz * (1.0 - ta * ta);
      } else {
        dz[o] = dh[o];
      }
      g[l.bias[k] + o] += dz[o];
    }
    std::array<double, kMaxWidth> dprev{};
    for (int o = 0; o < out; ++o) {
      for (int i = 0; i < in; ++i) {
        const double raw = th[l.matrix[k] + o * in + i];
        g[l.matrix[k] + o * in + i] += dz[o] * t.h[k][i] * sigmoid(raw);
        dprev[i] += softplus(raw) * dz[o];
      }
    }
    dh = dprev;
  }
  return dh[0];
}

std::string matrix_name(int k) { return "entropy.matrix" + std::to_string(k); }
std::string bias_name(int k) { return "entropy.bias" + std::to_string(k); }
std::string factor_name(int k) { return "entropy.factor" + std::to_string(k); }

// Calls fn(name, shape, offset_in_block, count) for every entropy array.
template <typename Fn>
void for_each_group(int channels, Fn&& fn) {
  const auto& l = Model::layout();
  for (int k = 0; k < Model::kLayers; ++k) {
    const int in = Model::kFilters[k];
    const int out = Model::kFilters[k + 1];
    fn(matrix_name(k), Shape{channels, out, in}, l.matrix[k], out * in);
    fn(bias_name(k), Shape{channels, out}, l.bias[k], out);
    if (k + 1 < Model::kLayers) fn(factor_name(k), Shape{channels, out}, l.factor[k], out);
  }
}

int store_channels(const ParameterStore& store) {
  if (!store.contains(bias_name(0))) throw ConfigError("parameter store has no entropy model");
  return store.at(bias_name(0)).dim(0);
}

}  // namespace

const Model::Layout& Model::layout() {
  static const Layout l = make_layout();
  return l;
}

Model::FactorizedEntropyModel(int channels, Rng& rng)
    : channels_(channels), theta_(static_cast<std::size_t>(channels) * layout().per_channel) {
  const auto& l = layout();
  constexpr double kInitScale = 10.0;
  const double scale = std::pow(kInitScale, 1.0 / (kLayers));
  for (int c = 0; c < channels; ++c) {
    double* th = theta_.data() + static_cast<std::size_t>(c) * l.per_channel;
    for (int k = 0; k < kLayers; ++k) {
      const double init = std::log(std::expm1(1.0 / scale / kFilters[k + 1]));
      for (int i = 0; i < kFilters[k + 1] * kFilters[k]; ++i) th[l.matrix[k] + i] = init;
      for (int o = 0; o < kFilters[k + 1]; ++o) th[l.bias[k] + o] = rng.uniform(-0.5, 0.5);
      if (k + 1 < kLayers) {
        for (int o = 0; o < kFilters[k + 1]; ++o) th[l.factor[k] + o] = 0.0;
      }
    }
  }
}

Model::FactorizedEntropyModel(int channels, std::vector<double> theta)
    : channels_(channels), theta_(std::move(theta)) {
  if (theta_.size() != static_cast<std::size_t>(channels) * layout().per_channel) {
    throw ConfigError("entropy model parameter vector has wrong length");
  }
}

Model Model::from_store(const ParameterStore& store) {
  const int channels = store_channels(store);
  const auto& l = layout();
  std::vector<double> theta(static_cast<std::size_t>(channels) * l.per_channel);
  for_each_group(channels, [&](const std::string& name, const Shape& shape, int off, int count) {
    const auto& t = store.at(name);
    if (t.shape() != shape) throw ConfigError("entropy array " + name + " has wrong shape");
    for (int c = 0; c < channels; ++c) {
      for (int i = 0; i < count; ++i) {
        theta[static_cast<std::size_t>(c) * l.per_channel + off + i] =
            t[static_cast<std::size_t>(c) * count + i];
      }
    }
  });
  return Model(channels, std::move(theta));
}

void Model::to_store(ParameterStore& store) const {
  const auto& l = layout();
  for_each_group(channels_, [&](const std::string& name, const Shape& shape, int off, int count) {
    Tensor<float> t(shape);
    for (int c = 0; c < channels_; ++c) {
      for (int i = 0; i < count; ++i) {
        t[static_cast<std::size_t>(c) * count + i] =
            static_cast<float>(theta_[static_cast<std::size_t>(c) * l.per_channel + off + i]);
      }
    }
    if (store.contains(name)) {
      store.at(name) = std::move(t);
    } else {
      store.add(name, std::move(t));
    }
  });
}

void Model::add_gradient_to_store(std::span<const double> grad, ParameterStore& store) {
  const int channels = store_channels(store);
  const auto& l = layout();
  if (grad.size() != static_cast<std::size_t>(channels) * l.per_channel) {
    throw ConfigError("entropy gradient has wrong length");
  }
  for_each_group(channels, [&](const std::string& name, const Shape&, int off, int count) {
    auto& t = store.at(name);
    for (int c = 0; c < channels; ++c) {
      for (int i = 0; i < count; ++i) {
        t[static_cast<std::size_t>(c) * count + i] +=
            static_cast<float>(grad[static_cast<std::size_t>(c) * l.per_channel + off + i]);
      }
    }
  });
}

double Model::logits(int c, double v) const {
  Tape t;
  return logits_forward(channel_theta(c).data(), v, t);
}

double Model::cdf(int c, double v) const { return sigmoid(logits(c, v)); }

double Model::likelihood(int c, double v) const {
  if (std::isnan(v)) throw NumericError("likelihood of NaN latent value");
  const double lower = logits(c, v - 0.5);
  const double upper = logits(c, v + 0.5);
  // Evaluate on the side of the sigmoid with the smaller magnitude.
  const double s = (lower + upper) > 0.0 ? -1.0 : 1.0;
  const double p = s * (sigmoid(s * upper) - sigmoid(s * lower));
  return std::max(p, kLikelihoodFloor);
}

double Model::likelihood_backward(int c, double v, double p_grad, std::span<double> theta_grad,
                                  double* p_out) const {
  if (std::isnan(v)) throw NumericError("likelihood of NaN latent value");
  const double* th = channel_theta(c).data();
  Tape tl, tu;
  const double lower = logits_forward(th, v - 0.5, tl);
  const double upper = logits_forward(th, v + 0.5, tu);
  const double s = (lower + upper) > 0.0 ? -1.0 : 1.0;
  const double su = sigmoid(s * upper);
  const double sl = sigmoid(s * lower);
  const double raw = s * (su - sl);
  const double p = std::max(raw, kLikelihoodFloor);
  if (p_out) *p_out = p;
  if (raw < kLikelihoodFloor && p_grad > 0.0) return 0.0;
  // d raw / d upper = sigmoid'(s*upper); d raw / d lower = -sigmoid'(s*lower)
  const double du = p_grad * su * (1.0 - su);
  const double dl = -p_grad * sl * (1.0 - sl);
  double* g = theta_grad.data() + static_cast<std::size_t>(c) * layout().per_channel;
  return logits_backward(th, tu, du, g) + logits_backward(th, tl, dl, g);
}

double Model::solve_logit(int c, double target) const {
  double lo = -1.0;
  double hi = 1.0;
  constexpr double kLimit = 1e7;
  while (logits(c, lo) > target && lo > -kLimit) lo *= 2.0;
  while (logits(c, hi) < target && hi < kLimit) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-10 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (logits(c, mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

void add_entropy_parameters(ParameterStore& store, int channels, Rng& rng) {
  Model(channels, rng).to_store(store);
}

Tensor<float> quantize_train(const Tensor<float>& y, Rng& rng) {
  Tensor<float> out = y;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += static_cast<float>(rng.uniform() - 0.5);
  }
  return out;
}

QuantizedLatent quantize_eval(const Tensor<float>& y, std::span<const float> offsets) {
  if (y.rank() != 3 || static_cast<std::size_t>(y.dim(0)) != offsets.size()) {
    throw ConfigError("quantize_eval: latent " + shape_string(y.shape()) + " does not match " +
                      std::to_string(offsets.size()) + " offsets");
  }
  QuantizedLatent q{y.shape(), std::vector<std::int32_t>(y.size())};
  const std::size_t plane = q.plane();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = static_cast<double>(y[i]) - offsets[i / plane];
    if (!std::isfinite(v)) throw NumericError("non-finite latent value at element " + std::to_string(i));
    q.symbols[i] = static_cast<std::int32_t>(std::round(v));
  }
  return q;
}

Tensor<float> dequantize(const QuantizedLatent& q, std::span<const float> offsets) {
  if (static_cast<std::size_t>(q.channels()) != offsets.size()) {
    throw ConfigError("dequantize: channel count does not match offsets");
  }
  Tensor<float> y(q.shape);
  const std::size_t plane = q.plane();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = static_cast<float>(q.symbols[i]) + offsets[i / plane];
  }
  return y;
}

namespace {

template <typename T>
std::size_t checked_plane(const Tensor<T>& values, const Model& model) {
  if (values.rank() < 1 || values.dim(0) != model.channels()) {
    throw ConfigError("latent " + shape_string(values.shape()) + " does not match entropy model with " +
                      std::to_string(model.channels()) + " channels");
  }
  return values.dim(0) == 0 ? 0 : values.size() / static_cast<std::size_t>(values.dim(0));
}

}  // namespace

template <typename T>
std::vector<double> likelihood(const Tensor<T>& values, const Model& model) {
  const std::size_t plane = checked_plane(values, model);
  std::vector<double> p(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    p[i] = model.likelihood(static_cast<int>(i / plane), static_cast<double>(values[i]));
  }
  return p;
}

template <typename T>
double rate_bits(const Tensor<T>& values, const Model& model) {
  const std::size_t plane = checked_plane(values, model);
  double bits = 0.0;
  for (int c = 0; c < model.channels(); ++c) {
    double channel_bits = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      channel_bits -= std::log2(model.likelihood(c, static_cast<double>(values[c * plane + i])));
    }
    bits += channel_bits;
  }
  return bits;
}

template <typename T>
double rate_bits_backward(const Tensor<T>& values, const Model& model, double scale,
                          Tensor<T>& value_grad, std::span<double> theta_grad) {
  const std::size_t plane = checked_plane(values, model);
  if (value_grad.shape() != values.shape()) value_grad = Tensor<T>(values.shape());
  if (theta_grad.size() != model.theta().size()) {
    throw ConfigError("rate gradient buffer has wrong length");
  }
  std::vector<double> channel_bits(static_cast<std::size_t>(model.channels()), 0.0);
  // Channels own disjoint slices of theta_grad, so they run independently.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < model.channels(); ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t e = c * plane + i;
      // d(-log2 p)/dp = -1 / (p ln 2); the probability is needed first.
      const double v = static_cast<double>(values[e]);
      const double p = model.likelihood(c, v);
      acc -= std::log2(p);
      const double p_grad = -scale / (p * std::numbers::ln2);
      value_grad[e] = static_cast<T>(model.likelihood_backward(c, v, p_grad, theta_grad));
    }
    channel_bits[static_cast<std::size_t>(c)] = acc;
  }
  return std::accumulate(channel_bits.begin(), channel_bits.end(), 0.0);
}

template std::vector<double> likelihood<float>(const Tensor<float>&, const Model&);
template std::vector<double> likelihood<double>(const Tensor<double>&, const Model&);
template double rate_bits<float>(const Tensor<float>&, const Model&);
template double rate_bits<double>(const Tensor<double>&, const Model&);
template double rate_bits_backward<float>(const Tensor<float>&, const Model&, double,
                                          Tensor<float>&, std::span<double>);
template double rate_bits_backward<double>(const Tensor<double>&, const Model&, double,
                                           Tensor<double>&, std::span<double>);

void LatentRange::update(const Tensor<float>& y) {
  const int channels = y.dim(0);
  const std::size_t plane = y.size() / static_cast<std::size_t>(channels);
  if (min.empty()) {
    min.assign(static_cast<std::size_t>(channels), std::numeric_limits<float>::infinity());
    max.assign(static_cast<std::size_t>(channels), -std::numeric_limits<float>::infinity());
  }
  if (min.size() != static_cast<std::size_t>(channels)) {
    throw ConfigError("latent range channel count changed");
  }
  for (int c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const float v = y[c * plane + i];
      min[c] = std::min(min[c], v);
      max[c] = std::max(max[c], v);
    }
  }
}

std::vector<float> CdfTable::offsets() const {
  std::vector<float> out;
  out.reserve(channels.size());
  for (const auto& ch : channels) out.push_back(ch.offset);
  return out;
}

void CdfTable::validate() const {
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& cum = channels[c].cumulative;
    if (cum.size() < 2 || cum.front() != 0 || cum.back() != kCdfTotal) {
      throw FormatError("CDF table channel " + std::to_string(c) + " is not normalized");
    }
    for (std::size_t i = 1; i < cum.size(); ++i) {
      if (cum[i] <= cum[i - 1]) {
        throw FormatError("CDF table channel " + std::to_string(c) + " is not strictly increasing");
      }
    }
    if (!std::isfinite(channels[c].offset)) {
      throw FormatError("CDF table channel " + std::to_string(c) + " has a non-finite offset");
    }
  }
}

std::vector<std::uint32_t> quantize_pmf(std::span<const double> pmf) {
  const std::size_t n = pmf.size();
  if (n == 0 || n > kCdfTotal) throw FreezeError("symbol count out of range for 16-bit table");
  double total = 0.0;
  for (double p : pmf) total += std::max(p, 0.0);
  const std::uint64_t spare = kCdfTotal - n;
  std::vector<std::uint32_t> freq(n, 1);
  std::vector<double> remainder(n, 0.0);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double share = total > 0.0 ? std::max(pmf[i], 0.0) / total * static_cast<double>(spare)
                                     : static_cast<double>(spare) / static_cast<double>(n);
    const auto whole = static_cast<std::uint64_t>(std::floor(share));
    freq[i] += static_cast<std::uint32_t>(whole);
    assigned += whole;
    remainder[i] = share - static_cast<double>(whole);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < spare; ++k, ++assigned) ++freq[order[k % n]];
  return freq;
}

CdfTable freeze_cdf(const Model& model, const LatentRange* observed, const FreezeOptions& options) {
  if (observed && !observed->empty() &&
      observed->min.size() != static_cast<std::size_t>(model.channels())) {
    throw ConfigError("observed latent range does not match entropy model channels");
  }
  const double half_tail = options.tail_mass / 2.0;
  const double lo_logit = std::log(half_tail / (1.0 - half_tail));
  CdfTable table;
  table.channels.resize(static_cast<std::size_t>(model.channels()));
  for (int c = 0; c < model.channels(); ++c) {
    const double median = model.median(c);
    const float offset = static_cast<float>(median);
    double lo = model.solve_logit(c, lo_logit) - median;
    double hi = model.solve_logit(c, -lo_logit) - median;
    if (observed && !observed->empty()) {
      lo = std::min(lo, static_cast<double>(observed->min[c]) - offset);
      hi = std::max(hi, static_cast<double>(observed->max[c]) - offset);
    }
    auto min_sym = static_cast<std::int64_t>(std::floor(lo)) - options.margin;
    auto max_sym = static_cast<std::int64_t>(std::ceil(hi)) + options.margin;
    if (max_sym - min_sym + 1 > options.max_symbols) {
      // Keep the window centered on the median symbol.
      const std::int64_t half = options.max_symbols / 2;
      min_sym = std::max(min_sym, -half);
      max_sym = min_sym + options.max_symbols - 1;
    }
    const auto count = static_cast<std::size_t>(max_sym - min_sym + 1);
    std::vector<double> pmf(count);
    double mass = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      pmf[i] = model.likelihood(c, static_cast<double>(min_sym + static_cast<std::int64_t>(i)) + offset);
      mass += pmf[i];
    }
    if (!(mass > 0.5)) {
      throw FreezeError("entropy model channel " + std::to_string(c) +
                        " has its mass outside the representable symbol range");
    }
    const auto freq = quantize_pmf(pmf);
    auto& ch = table.channels[static_cast<std::size_t>(c)];
    ch.min_symbol = static_cast<std::int32_t>(min_sym);
    ch.offset = offset;
    ch.cumulative.assign(count + 1, 0);
    for (std::size_t i = 0; i < count; ++i) ch.cumulative[i + 1] = ch.cumulative[i] + freq[i];
  }
  return table;
}

double table_rate_bits(const QuantizedLatent& q, const CdfTable& table) {
  if (static_cast<std::size_t>(q.channels()) != table.channels.size()) {
    throw ConfigError("latent channel count does not match CDF table");
  }
  const std::size_t plane = q.plane();
  double bits = 0.0;
  for (std::size_t i = 0; i < q.symbols.size(); ++i) {
    const auto& ch = table.channels[i / plane];
    const std::int32_t s = q.symbols[i];
    if (s < ch.min_symbol || s > ch.max_symbol()) {
      throw EncodeError("symbol " + std::to_string(s) + " outside table range of channel " +
                        std::to_string(i / plane));
    }
    bits -= std::log2(static_cast<double>(ch.frequency(s)) / kCdfTotal);
  }
  return bits;
}

}  // namespace arc
