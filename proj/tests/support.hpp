#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "arc/random.hpp"

namespace arc::testing {

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Central differences of a scalar function at x (x is restored).
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x,
                                            double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// ||a - b|| / max(||b||, tiny)
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace arc::testing

#include "arc/entropy.hpp"

namespace arc::testing {

// Table with random symbol ranges and random (often skewed) distributions.
inline CdfTable random_table(Rng& rng, int channels, int max_symbols = 300) {
  CdfTable table;
  for (int c = 0; c < channels; ++c) {
    const int count = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_symbols)));
    std::vector<double> pmf(static_cast<std::size_t>(count));
    const double sharpness = rng.uniform(0.0, 6.0);
    for (auto& p : pmf) p = std::exp(sharpness * rng.uniform(-1.0, 1.0) * 3.0);
    const auto freq = quantize_pmf(pmf);
    ChannelCdf ch;
    ch.min_symbol = static_cast<std::int32_t>(rng.below(400)) - 200;
    ch.offset = static_cast<float>(rng.uniform(-0.5, 0.5));
    ch.cumulative.assign(freq.size() + 1, 0);
    for (std::size_t i = 0; i < freq.size(); ++i) ch.cumulative[i + 1] = ch.cumulative[i] + freq[i];
    table.channels.push_back(std::move(ch));
  }
  return table;
}

// Symbols drawn from each channel's own table distribution.
inline QuantizedLatent sample_symbols(Rng& rng, const CdfTable& table, int h, int w) {
  QuantizedLatent q{{static_cast<int>(table.channels.size()), h, w}, {}};
  for (const auto& ch : table.channels) {
    for (int i = 0; i < h * w; ++i) {
      const auto target = static_cast<std::uint32_t>(rng.below(kCdfTotal));
      const auto it = std::upper_bound(ch.cumulative.begin(), ch.cumulative.end(), target);
      q.symbols.push_back(ch.min_symbol + static_cast<std::int32_t>(it - ch.cumulative.begin()) - 1);
    }
  }
  return q;
}

// Entropy model whose channel c has logits(v) = slopes[c] * v: gates and
// biases zero, every stage matrix entry softplus(raw) = (slope / 27)^(1/4)
// (27 paths through the 1-3-3-3-1 stack).
inline FactorizedEntropyModel linear_model(const std::vector<double>& slopes) {
  const auto& l = FactorizedEntropyModel::layout();
  std::vector<double> theta(slopes.size() * static_cast<std::size_t>(l.per_channel), 0.0);
  for (std::size_t c = 0; c < slopes.size(); ++c) {
    const double w = std::pow(slopes[c] / 27.0, 0.25);
    const double raw = std::log(std::expm1(w));
    for (int k = 0; k < FactorizedEntropyModel::kLayers; ++k) {
      const int n = FactorizedEntropyModel::kFilters[k] * FactorizedEntropyModel::kFilters[k + 1];
      for (int i = 0; i < n; ++i) theta[c * l.per_channel + l.matrix[k] + i] = raw;
    }
  }
  return FactorizedEntropyModel(static_cast<int>(slopes.size()), std::move(theta));
}

}  // namespace arc::testing
