#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cdlnet/image.hpp"
#include "cdlnet/image_io.hpp"
#include "test_support.hpp"

using namespace cdlnet;
namespace tu = cdlnet::testing;

TEST(Image, ConstructionAndInvariants) {
  Image<double> x(4, 5, 3);
  EXPECT_EQ(x.size(), 60u);
  EXPECT_EQ(x.plane(2).size(), 20u);
  EXPECT_THROW(Image<double>(4, 4, 2), ShapeError);
}

TEST(Mask, BayerTwoByTwo) {
  auto m = make_bayer_mask(2, 2);
  // R = [[1,0],[0,0]], G = [[0,1],[1,0]], B = [[0,0],[0,1]]
  const int expect[3][2][2] = {{{1, 0}, {0, 0}}, {{0, 1}, {1, 0}}, {{0, 0}, {0, 1}}};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) EXPECT_EQ(m(c, i, j), expect[c][i][j]) << c << i << j;
}

TEST(Mask, BayerPeriodicAndOneChannelPerPixel) {
  auto small = make_bayer_mask(2, 2);
  auto big = make_bayer_mask(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      int sum = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(big(c, i, j), small(c, i % 2, j % 2));
        sum += big(c, i, j);
      }
      EXPECT_EQ(sum, 1);
    }
  EXPECT_THROW(make_bayer_mask(1, 4), ValueError);
}

TEST(Mask, ApplyMaskProperties) {
  auto x = tu::random_image(6, 7, 3, 1);
  auto y = tu::random_image(6, 7, 3, 2);
  auto ones = MaskSignal::ones(6, 7);
  EXPECT_EQ(apply_mask(ones, x), x);
  auto zero = apply_mask(MaskSignal(6, 7), x);
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  auto m = make_bayer_mask(6, 7);
  EXPECT_EQ(apply_mask(m, apply_mask(m, x)), apply_mask(m, x));
  auto lhs = apply_mask(m, x + y);
  auto rhs = apply_mask(m, x) + apply_mask(m, y);
  EXPECT_LT(tu::max_abs_diff(lhs.data(), rhs.data()), 1e-15);
  EXPECT_THROW(apply_mask(m, tu::random_image(6, 7, 1, 3)), ShapeError);
  EXPECT_THROW(apply_mask(make_bayer_mask(6, 6), x), ShapeError);
}

TEST(Awgn, ZeroSigmaIsIdentity) {
  auto x = tu::random_image(8, 8, 1, 4);
  EXPECT_EQ(awgn(x, 0.0, 99), x);
  EXPECT_THROW(awgn(x, -1.0, 1), ValueError);
}

TEST(Awgn, SampleStatisticsAndDeterminism) {
  Image<double> x(256, 256, 1, 0.5);
  auto y = awgn(x, 25.0, 7);
  EXPECT_EQ(y, awgn(x, 25.0, 7));
  double s2 = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n) s2 += std::pow(y.data()[n] - 0.5, 2);
  const double sd = std::sqrt(s2 / static_cast<double>(y.size()));
  EXPECT_NEAR(sd, 25.0 / 255.0, 0.02 * 25.0 / 255.0);
  // analytic PSNR of pure AWGN: 20 log10(255/25) = 20.172 dB
  EXPECT_NEAR(psnr(x, y), 20.0 * std::log10(255.0 / 25.0), 0.1);
}

TEST(Psnr, ClosedForms) {
  Image<double> a(16, 16, 3, 0.25);
  EXPECT_EQ(psnr(a, a), 100.0);
  Image<double> b = a;
  for (double& v : b.data()) v += 1.0 / 255.0;
  EXPECT_NEAR(psnr(a, b), 48.130803608679, 1e-9);
  Image<double> c = a;
  for (double& v : c.data()) v += 25.0 / 255.0;
  EXPECT_NEAR(psnr(a, c), 20.172003435, 1e-8);
  EXPECT_THROW(psnr(a, Image<double>(16, 16, 1)), ShapeError);
}

TEST(Mean, SubtractAndRestore) {
  auto x = tu::random_image(9, 9, 3, 5);
  auto c = subtract_mean(x);
  ASSERT_EQ(c.mean_offset.size(), 3u);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double s = 0.0;
    for (double v : c.plane(ch)) s += v;
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
  auto back = add_mean(c, std::span<const double>(c.mean_offset));
  EXPECT_LT(tu::max_abs_diff(back.data(), x.data()), 1e-15);
}

TEST(Mean, MaskedMeanUsesMeasuredSamplesOnly) {
  Image<double> x(4, 4, 3, 0.6);
  auto m = make_bayer_mask(4, 4);
  auto y = apply_mask(m, x);
  auto c = subtract_mean(y, &m);
  for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_NEAR(c.mean_offset[ch], 0.6, 1e-15);
  for (double v : c.data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Pnm, RoundTripQuantized) {
  auto x = quantize8(clamp01(tu::random_image(5, 7, 3, 6, 0.3) + Image<double>(5, 7, 3, 0.5)));
  std::stringstream ss;
  write_pnm(ss, x);
  auto y = read_pnm<double>(ss);
  EXPECT_EQ(y.height(), 5u);
  EXPECT_EQ(y.width(), 7u);
  EXPECT_EQ(y.channels(), 3u);
  EXPECT_EQ(x.data().size(), y.data().size());
  EXPECT_LT(tu::max_abs_diff(x.data(), y.data()), 1e-15);
}

TEST(Pnm, ClampsAndRounds) {
  Image<double> x(1, 3, 1);
  x(0, 0, 0) = -0.2;
  x(0, 0, 1) = 1.7;
  x(0, 0, 2) = 100.4 / 255.0;
  std::stringstream ss;
  write_pnm(ss, x);
  auto y = read_pnm<double>(ss);
  EXPECT_EQ(y(0, 0, 0), 0.0);
  EXPECT_EQ(y(0, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(y(0, 0, 2), 100.0 / 255.0);
}

TEST(Pnm, RejectsMalformed) {
  std::stringstream bad("P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(read_pnm<double>(bad), FormatError);
  std::stringstream trunc("P5\n4 4\n255\nab");
  EXPECT_THROW(read_pnm<double>(trunc), FormatError);
  std::stringstream comment("P5\n# hello\n1 1\n255\n\x80");
  auto img = read_pnm<double>(comment);
  EXPECT_DOUBLE_EQ(img(0, 0, 0), 128.0 / 255.0);
}
