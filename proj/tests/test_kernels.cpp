#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "arc/kernels/conv.hpp"
#include "arc/kernels/gdn.hpp"
#include "support.hpp"

using namespace arc;
using namespace arc::kernels;
using arc::testing::dot;
using arc::testing::numeric_gradient;
using arc::testing::random_vector;
using arc::testing::relative_error;

namespace {

// Direct formula, written independently of the library loops.
double conv_oracle(const ConvGeometry& g, const std::vector<double>& in, const std::vector<double>& w,
                   const std::vector<double>& b, int o, int oy, int ox) {
  double acc = b.empty() ? 0.0 : b[o];
  for (int c = 0; c < g.wide_channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const int iy = oy * g.stride - g.pad + ky;
        const int ix = ox * g.stride - g.pad + kx;
        if (iy < 0 || ix < 0 || iy >= g.wide_h || ix >= g.wide_w) continue;
        acc += in[(c * g.wide_h + iy) * g.wide_w + ix] * w[((o * g.wide_channels + c) * g.kernel + ky) * g.kernel + kx];
      }
    }
  }
  return acc;
}

struct ConvCase {
  ConvGeometry g;
  std::vector<double> wide, weight, bias, narrow;
};

ConvCase make_case(int cin, int cout, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  ConvCase c{ConvGeometry::downsample(cin, cout, h, w), {}, {}, {}, {}};
  c.wide = random_vector(c.g.wide_size(), rng);
  c.weight = random_vector(c.g.weight_size(), rng);
  c.bias = random_vector(static_cast<std::size_t>(cout), rng);
  c.narrow = random_vector(c.g.narrow_size(), rng);
  return c;
}

}  // namespace

TEST(ConvGeometry, HalvesSpatialDims) {
  const auto g = ConvGeometry::downsample(3, 8, 64, 32);
  EXPECT_EQ(g.narrow_h, 32);
  EXPECT_EQ(g.narrow_w, 16);
  EXPECT_EQ(g.pad, 2);
}

TEST(Conv, ForwardMatchesOracle) {
  auto c = make_case(2, 3, 6, 8, 1);
  for (Exec exec : {Exec::kReference, Exec::kParallel}) {
    std::vector<double> out(c.g.narrow_size());
    conv2d_forward<double>(c.g, c.wide, c.weight, c.bias, out, exec);
    for (int o = 0; o < 3; ++o)
      for (int y = 0; y < c.g.narrow_h; ++y)
        for (int x = 0; x < c.g.narrow_w; ++x)
          EXPECT_NEAR(out[(o * c.g.narrow_h + y) * c.g.narrow_w + x], conv_oracle(c.g, c.wide, c.weight, c.bias, o, y, x),
                      1e-12);
  }
}

TEST(Conv, TransposeIsAdjointOfForward) {
  // <conv(a), b> == <a, conv^T(b)> with zero bias.
  auto c = make_case(3, 4, 8, 8, 2);
  const std::vector<double> no_bias(4, 0.0);
  std::vector<double> fa(c.g.narrow_size()), tb(c.g.wide_size());
  conv2d_forward<double>(c.g, c.wide, c.weight, no_bias, fa, Exec::kReference);
  conv_transpose2d_forward<double>(c.g, c.narrow, c.weight, {}, tb, Exec::kReference);
  EXPECT_NEAR(dot(fa, c.narrow), dot(c.wide, tb), 1e-10);
}

TEST(Conv, ParallelMatchesReference) {
  for (auto [cin, cout, h, w] : {std::tuple{3, 5, 16, 12}, std::tuple{7, 4, 8, 8}, std::tuple{4, 4, 2, 2}}) {
    const auto c = make_case(cin, cout, h, w, 3);
    const auto g = c.g;
    const std::vector<float> wide(c.wide.begin(), c.wide.end()), weight(c.weight.begin(), c.weight.end()),
        narrow(c.narrow.begin(), c.narrow.end()), out_bias(c.bias.begin(), c.bias.end()),
        in_bias(static_cast<std::size_t>(cin), 0.25f);
    auto compare = [](auto fn, std::size_t n) {
      std::vector<float> r(n, 0.5f), p(n, 0.5f);
      fn(std::span<float>(r), Exec::kReference);
      fn(std::span<float>(p), Exec::kParallel);
      for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(r[i], p[i], 1e-4f * (1 + std::abs(r[i]))) << i;
    };
    compare([&](std::span<float> o, Exec e) { conv2d_forward<float>(g, wide, weight, out_bias, o, e); },
            g.narrow_size());
    compare([&](std::span<float> o, Exec e) { conv2d_backward_input<float>(g, narrow, weight, o, e); },
            g.wide_size());
    compare([&](std::span<float> o, Exec e) {
      std::vector<float> bias_grad(static_cast<std::size_t>(cout), 0.0f);
      conv2d_backward_weight<float>(g, wide, narrow, o, bias_grad, e);
    }, g.weight_size());
    compare([&](std::span<float> o, Exec e) { conv_transpose2d_forward<float>(g, narrow, weight, in_bias, o, e); },
            g.wide_size());
    compare([&](std::span<float> o, Exec e) { conv_transpose2d_backward_input<float>(g, wide, weight, o, e); },
            g.narrow_size());
    compare([&](std::span<float> o, Exec e) {
      std::vector<float> bias_grad(static_cast<std::size_t>(cin), 0.0f);
      conv_transpose2d_backward_weight<float>(g, narrow, wide, o, bias_grad, e);
    }, g.weight_size());
  }
}

TEST(Conv, ParallelResultIndependentOfBufferAddress) {
  // Same values at different float offsets must give bit-identical results.
  const auto g = ConvGeometry::downsample(8, 8, 16, 16);
  Rng rng(31);
  std::vector<float> wide(g.wide_size()), narrow(g.narrow_size()), weight(g.weight_size());
  for (auto* v : {&wide, &narrow, &weight}) {
    for (auto& x : *v) x = static_cast<float>(rng.uniform(-1, 1));
  }
  std::vector<float> first_w, first_b;
  for (std::size_t off = 0; off < 8; ++off) {
    std::vector<float> wide_buf(off, 0.0f), narrow_buf(off, 0.0f);
    wide_buf.insert(wide_buf.end(), wide.begin(), wide.end());
    narrow_buf.insert(narrow_buf.end(), narrow.begin(), narrow.end());
    std::vector<float> dw(g.weight_size(), 0.0f), db(8, 0.0f);
    conv2d_backward_weight<float>(g, std::span<const float>(wide_buf).subspan(off),
                                  std::span<const float>(narrow_buf).subspan(off), dw, db, Exec::kParallel);
    if (off == 0) {
      first_w = dw;
      first_b = db;
    } else {
      ASSERT_EQ(dw, first_w) << "offset " << off;
      ASSERT_EQ(db, first_b) << "offset " << off;
    }
  }
}

// Finite-difference checks of L = <r, f(x)> for each input of each kernel.
class ConvGradient : public ::testing::TestWithParam<Exec> {};

TEST_P(ConvGradient, ForwardConv) {
  const Exec exec = GetParam();
  auto c = make_case(2, 3, 4, 4, 11);
  const auto& g = c.g;
  const std::vector<double> r = c.narrow;
  auto loss = [&] {
    std::vector<double> out(g.narrow_size());
    conv2d_forward<double>(g, c.wide, c.weight, c.bias, out, exec);
    return dot(out, r);
  };
  std::vector<double> dx(g.wide_size()), dw(g.weight_size(), 0.0), db(3, 0.0);
  conv2d_backward_input<double>(g, r, c.weight, dx, exec);
  conv2d_backward_weight<double>(g, c.wide, r, dw, db, exec);
  EXPECT_LT(relative_error(dx, numeric_gradient(loss, c.wide)), 1e-4);
  EXPECT_LT(relative_error(dw, numeric_gradient(loss, c.weight)), 1e-4);
  EXPECT_LT(relative_error(db, numeric_gradient(loss, c.bias)), 1e-4);
}

TEST_P(ConvGradient, TransposedConv) {
  const Exec exec = GetParam();
  auto c = make_case(3, 2, 4, 4, 12);
  const auto& g = c.g;
  Rng rng(5);
  std::vector<double> bias = random_vector(3, rng);
  const std::vector<double> r = c.wide;
  auto loss = [&] {
    std::vector<double> out(g.wide_size());
    conv_transpose2d_forward<double>(g, c.narrow, c.weight, bias, out, exec);
    return dot(out, r);
  };
  std::vector<double> dx(g.narrow_size()), dw(g.weight_size(), 0.0), db(3, 0.0);
  conv_transpose2d_backward_input<double>(g, r, c.weight, dx, exec);
  conv_transpose2d_backward_weight<double>(g, c.narrow, r, dw, db, exec);
  EXPECT_LT(relative_error(dx, numeric_gradient(loss, c.narrow)), 1e-4);
  EXPECT_LT(relative_error(dw, numeric_gradient(loss, c.weight)), 1e-4);
  EXPECT_LT(relative_error(db, numeric_gradient(loss, bias)), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(BothPaths, ConvGradient, ::testing::Values(Exec::kReference, Exec::kParallel));

TEST(Gdn1, SingleChannelExamples) {
  const std::vector<double> beta{0.5}, gamma{0.5};
  std::vector<double> x{1.0}, y(1);
  gdn1_forward<double>(1, 1, x, beta, gamma, y, Exec::kReference);
  EXPECT_DOUBLE_EQ(y[0], 1.0);

  const std::vector<double> beta2{1.0}, gamma2{0.25};
  x = {2.0};
  igdn1_forward<double>(1, 1, x, beta2, gamma2, y, Exec::kReference);
  EXPECT_DOUBLE_EQ(y[0], 3.0);
}

TEST(Gdn1, IdentityAndZeroCases) {
  Rng rng(3);
  const int ch = 4;
  const std::size_t plane = 6;
  const auto x = random_vector(ch * plane, rng);
  const std::vector<double> ones(ch, 1.0), zero_gamma(ch * ch, 0.0);
  const auto beta = random_vector(ch, rng, 0.1, 2.0);
  const auto gamma = random_vector(ch * ch, rng, 0.0, 1.0);
  const std::vector<double> zeros(x.size(), 0.0);
  for (Exec exec : {Exec::kReference, Exec::kParallel}) {
    std::vector<double> y(x.size());
    gdn1_forward<double>(ch, plane, x, ones, zero_gamma, y, exec);
    EXPECT_EQ(y, x);
    igdn1_forward<double>(ch, plane, x, ones, zero_gamma, y, exec);
    EXPECT_EQ(y, x);
    gdn1_forward<double>(ch, plane, zeros, beta, gamma, y, exec);
    EXPECT_EQ(y, zeros);
    igdn1_forward<double>(ch, plane, zeros, beta, gamma, y, exec);
    EXPECT_EQ(y, zeros);
  }
}

TEST(Gdn1, DiagonalInverse) {
  // With gamma = 0 both maps scale by beta, so igdn1(gdn1(x)) = x.
  Rng rng(4);
  const int ch = 3;
  const auto x = random_vector(ch * 5, rng);
  const auto beta = random_vector(ch, rng, 0.2, 3.0);
  const std::vector<double> gamma(ch * ch, 0.0);
  std::vector<double> y(x.size()), back(x.size());
  gdn1_forward<double>(ch, 5, x, beta, gamma, y, Exec::kReference);
  igdn1_forward<double>(ch, 5, y, beta, gamma, back, Exec::kReference);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-6);
}

TEST(Gdn1, ParallelMatchesReference) {
  Rng rng(8);
  const int ch = 16;
  const std::size_t plane = 37;
  auto to_f = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
  const auto x = to_f(random_vector(ch * plane, rng));
  const auto beta = to_f(random_vector(ch, rng, 0.5, 1.5));
  const auto gamma = to_f(random_vector(ch * ch, rng, 0.0, 0.3));
  const auto r = to_f(random_vector(ch * plane, rng));
  for (bool inverse : {false, true}) {
    std::vector<float> y[2], dx[2], db[2], dg[2];
    for (int k = 0; k < 2; ++k) {
      const Exec e = k == 0 ? Exec::kReference : Exec::kParallel;
      y[k].assign(x.size(), 0.0f);
      dx[k].assign(x.size(), 0.0f);
      db[k].assign(ch, 0.0f);
      dg[k].assign(ch * ch, 0.0f);
      if (inverse) {
        igdn1_forward<float>(ch, plane, x, beta, gamma, y[k], e);
        igdn1_backward<float>(ch, plane, x, beta, gamma, r, dx[k], db[k], dg[k], e);
      } else {
        gdn1_forward<float>(ch, plane, x, beta, gamma, y[k], e);
        gdn1_backward<float>(ch, plane, x, beta, gamma, r, dx[k], db[k], dg[k], e);
      }
    }
    for (auto* pair : {y, dx, db, dg}) {
      for (std::size_t i = 0; i < pair[0].size(); ++i) {
        ASSERT_NEAR(pair[0][i], pair[1][i], 1e-4f * (1 + std::abs(pair[0][i])));
      }
    }
  }
}

class GdnGradient : public ::testing::TestWithParam<std::tuple<Exec, bool>> {};

TEST_P(GdnGradient, MatchesFiniteDifferences) {
  const auto [exec, inverse] = GetParam();
  Rng rng(21);
  const int ch = 3;
  const std::size_t plane = 16;  // 4x4
  auto x = random_vector(ch * plane, rng);
  // Keep |x| away from 0 so the |.| kink does not sit inside the FD stencil.
  for (auto& v : x) v = v < 0 ? v - 0.1 : v + 0.1;
  auto beta = random_vector(ch, rng, 0.5, 1.5);
  auto gamma = random_vector(ch * ch, rng, 0.05, 0.5);
  const auto r = random_vector(ch * plane, rng);
  auto loss = [&] {
    std::vector<double> y(x.size());
    if (inverse) {
      igdn1_forward<double>(ch, plane, x, beta, gamma, y, exec);
    } else {
      gdn1_forward<double>(ch, plane, x, beta, gamma, y, exec);
    }
    return dot(y, r);
  };
  std::vector<double> dx(x.size()), db(ch, 0.0), dg(ch * ch, 0.0);
  if (inverse) {
    igdn1_backward<double>(ch, plane, x, beta, gamma, r, dx, db, dg, exec);
  } else {
    gdn1_backward<double>(ch, plane, x, beta, gamma, r, dx, db, dg, exec);
  }
  EXPECT_LT(relative_error(dx, numeric_gradient(loss, x)), 1e-4);
  EXPECT_LT(relative_error(db, numeric_gradient(loss, beta)), 1e-4);
  EXPECT_LT(relative_error(dg, numeric_gradient(loss, gamma)), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(All, GdnGradient,
                         ::testing::Combine(::testing::Values(Exec::kReference, Exec::kParallel),
                                            ::testing::Bool()));
