#include <gtest/gtest.h>

#include <cmath>

#include "cdlnet/conv.hpp"
#include "test_support.hpp"

using namespace cdlnet;
namespace tu = cdlnet::testing;
using cdlnet::testing::max_abs_diff;

namespace {

double rel_adjoint_gap(const Image<double>& x, const SubbandCode<double>& z, const FilterBank<double>& f,
                       std::size_t s) {
  const auto ax = analysis_apply(x, f, s);
  const auto sz = synthesis_conv(z, f, s);
  const double lhs = detail::dot(std::span<const double>(ax.data()), std::span<const double>(z.data()));
  const double rhs = detail::dot(std::span<const double>(x.data()), std::span<const double>(sz.data()));
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300);
}

}  // namespace

TEST(Conv, ZeroImageGivesZeroCode) {
  Image<double> x(8, 8, 1);
  auto z = analysis_conv(x, tu::random_bank(3, 5, 1, 1), 1);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  SubbandCode<double> zero(3, 1, 8, 8, 1);
  auto y = synthesis_conv(zero, tu::random_bank(3, 5, 1, 2));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv, ImpulseResponseOfCorrelation) {
  Image<double> x(8, 8, 1);
  x(0, 4, 4) = 1.0;
  FilterBank<double> f(1, 3, 1);
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t v = 0; v < 3; ++v) f(0, 0, u, v) = static_cast<double>(1 + 3 * u + v);
  auto z = analysis_conv(x, f, 1);
  // out[i][j] = f[5-i][5-j] for i, j in {3,4,5}: the flipped footprint
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      const bool inside = i >= 3 && i <= 5 && j >= 3 && j <= 5;
      const double expect = inside ? f(0, 0, 5 - i, 5 - j) : 0.0;
      EXPECT_EQ(z(0, 0, i, j), expect) << i << "," << j;
    }
  // synthesis of an impulse code reproduces the filter unflipped
  SubbandCode<double> code(1, 1, 8, 8, 1);
  code(0, 0, 4, 4) = 1.0;
  auto img = synthesis_conv(code, f);
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t v = 0; v < 3; ++v) EXPECT_EQ(img(0, 3 + u, 3 + v), f(0, 0, u, v));
}

TEST(Conv, ImpulseFilterIsIdentity) {
  FilterBank<double> f(1, 3, 1);
  f(0, 0, 1, 1) = 1.0;
  auto z = tu::random_code(1, 1, 7, 9, 1, 3);
  auto y = synthesis_conv(z, f);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            std::vector<double>(z.data().begin(), z.data().end()));
}

TEST(Conv, MatchesDenseOperatorStride2) {
  auto x = tu::random_image(16, 16, 1, 11);
  auto f = tu::random_bank(4, 5, 1, 12);
  auto z = analysis_conv(x, f, 2);
  EXPECT_EQ(z.grid_height(), 8u);
  const Eigen::VectorXd expect = tu::dense_analysis(f, 16, 16, 1, 2) * tu::as_vector(x);
  EXPECT_LT((tu::as_vector(z) - expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Conv, MatchesDenseOperatorColorAndShared) {
  auto x = tu::random_image(9, 11, 3, 13);
  auto f3 = tu::random_bank(3, 3, 3, 14);
  const Eigen::VectorXd e3 = tu::dense_analysis(f3, 9, 11, 3, 3) * tu::as_vector(x);
  EXPECT_LT((tu::as_vector(analysis_conv(x, f3, 3)) - e3).cwiseAbs().maxCoeff(), 1e-10);

  auto f1 = tu::random_bank(2, 4, 1, 15);  // even size: origin at (k-1)/2
  const Eigen::VectorXd e1 = tu::dense_analysis(f1, 9, 11, 3, 2, true) * tu::as_vector(x);
  EXPECT_LT((tu::as_vector(shared_analysis_conv(x, f1, 2)) - e1).cwiseAbs().maxCoeff(), 1e-10);

  // synthesis is the transpose of the same dense matrix
  auto z = tu::random_code(2, 3, 9, 11, 2, 16);
  const Eigen::VectorXd s1 = tu::dense_analysis(f1, 9, 11, 3, 2, true).transpose() * tu::as_vector(z);
  EXPECT_LT((tu::as_vector(synthesis_conv(z, f1)) - s1).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Conv, AdjointInnerProduct) {
  for (std::size_t s : {1u, 2u, 3u}) {
    auto x = tu::random_image(13, 10, 1, 20 + s);
    auto f = tu::random_bank(4, 7, 1, 30 + s);
    auto z = tu::random_code(4, 1, 13, 10, s, 40 + s);
    EXPECT_LT(rel_adjoint_gap(x, z, f, s), 1e-10) << "stride " << s;
  }
}

TEST(Conv, LinearityAndHomogeneity) {
  auto a = tu::random_image(12, 12, 3, 1);
  auto b = tu::random_image(12, 12, 3, 2);
  auto f = tu::random_bank(3, 5, 3, 3);
  auto lhs = analysis_conv(a + b, f, 2);
  auto rhs = analysis_conv(a, f, 2) + analysis_conv(b, f, 2);
  EXPECT_LT(max_abs_diff(lhs.data(), rhs.data()), 1e-12);
  auto scaled = analysis_conv(2.5 * a, f, 2);
  auto base = analysis_conv(a, f, 2);
  base *= 2.5;
  EXPECT_LT(max_abs_diff(scaled.data(), base.data()), 1e-12);
}

TEST(Conv, StrideIsSubsampledDenseCorrelation) {
  auto x = tu::random_image(11, 13, 1, 5);
  auto f = tu::random_bank(2, 5, 1, 6);
  auto dense = analysis_conv(x, f, 1);
  for (std::size_t s : {2u, 3u, 4u}) {
    auto sub = analysis_conv(x, f, s);
    EXPECT_EQ(sub.grid_height(), (11 + s - 1) / s);
    EXPECT_EQ(sub.grid_width(), (13 + s - 1) / s);
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t i = 0; i < sub.grid_height(); ++i)
        for (std::size_t j = 0; j < sub.grid_width(); ++j)
          EXPECT_NEAR(sub(m, 0, i, j), dense(m, 0, s * i, s * j), 1e-12);
  }
}

TEST(Conv, SynthesisRestoresNonDivisibleDims) {
  auto z = tu::random_code(3, 1, 13, 7, 4, 8);
  auto img = synthesis_conv(z, tu::random_bank(3, 7, 3, 9));
  EXPECT_EQ(img.height(), 13u);
  EXPECT_EQ(img.width(), 7u);
  EXPECT_EQ(img.channels(), 3u);
}

TEST(Conv, Errors) {
  auto x = tu::random_image(8, 8, 3, 1);
  EXPECT_THROW(analysis_conv(x, tu::random_bank(2, 3, 1, 1), 1), ShapeError);
  EXPECT_THROW(analysis_conv(Image<double>(), tu::random_bank(2, 3, 1, 1), 1), ShapeError);
  auto z = tu::random_code(3, 1, 8, 8, 1, 2);
  EXPECT_THROW(synthesis_conv(z, tu::random_bank(2, 3, 1, 1)), ShapeError);
  EXPECT_THROW(synthesis_conv(z, tu::random_bank(3, 3, 1, 1), 2), ShapeError);
}

TEST(Conv, FilterGradientMatchesBilinearForm) {
  // d/df <code, analysis(x, f)> computed against a dense oracle: perturb each tap
  auto x = tu::random_image(7, 8, 3, 50);
  auto f = tu::random_bank(2, 3, 3, 51);
  auto code = tu::random_code(2, 1, 7, 8, 2, 52);
  auto g = filter_gradient(x, code, f);
  for (std::size_t n = 0; n < f.weights().size(); ++n) {
    FilterBank<double> e(2, 3, 3);
    e.weights()[n] = 1.0;  // the form is linear in f, so the partial is <code, analysis(x, e_n)>
    auto ax = analysis_conv(x, e, 2);
    const double expect = detail::dot(std::span<const double>(ax.data()), std::span<const double>(code.data()));
    EXPECT_NEAR(g.weights()[n], expect, 1e-12);
  }
}
