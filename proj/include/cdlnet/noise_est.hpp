#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "cdlnet/image.hpp"

// Blind noise-level estimators. All estimates are standard deviations on the
// 0-255 scale, for inputs stored in [0, 1].
namespace cdlnet {

enum class NoiseMethod { mad, pca, ground_truth };

inline std::string_view to_string(NoiseMethod m) {
  switch (m) {
    case NoiseMethod::mad: return "mad";
    case NoiseMethod::pca: return "pca";
    case NoiseMethod::ground_truth: return "gt";
  }
  return "?";
}

struct NoiseEstimate {
  double sigma_hat = 0.0;
  NoiseMethod method = NoiseMethod::ground_truth;
  double elapsed = 0.0;  // seconds
};

inline constexpr double kMadToSigma = 0.6745;

namespace detail {

template <class T>
double haar_mad_channel(std::span<const T> p, std::size_t h, std::size_t w) {
  std::vector<double> hh;
  hh.reserve((h / 2) * (w / 2));
  for (std::size_t i = 0; i + 1 < h; i += 2)
    for (std::size_t j = 0; j + 1 < w; j += 2) {
      const double a = p[i * w + j], b = p[i * w + j + 1];
      const double c = p[(i + 1) * w + j], d = p[(i + 1) * w + j + 1];
      hh.push_back(std::abs(a - b - c + d) * 0.5);
    }
  const auto mid = hh.begin() + static_cast<std::ptrdiff_t>(hh.size() / 2);
  std::nth_element(hh.begin(), mid, hh.end());
  double med = *mid;
  if (hh.size() % 2 == 0) med = 0.5 * (med + *std::max_element(hh.begin(), mid));
  return med / kMadToSigma;
}

// Noise variance from descending covariance eigenvalues: drop the largest
// until the remaining ones split evenly around their mean, i.e. until they
// look like a single noise cluster.
inline double noise_subspace_variance(const Eigen::VectorXd& desc) {
  const Eigen::Index d = desc.size();
  for (Eigen::Index i = 0; i < d; ++i) {
    const double mean = desc.tail(d - i).mean();
    Eigen::Index above = 0, below = 0;
    for (Eigen::Index j = i; j < d; ++j) {
      if (desc(j) > mean) ++above;
      else if (desc(j) < mean) ++below;
    }
    if (above >= below) return std::max(mean, 0.0);
  }
  return std::max(desc(d - 1), 0.0);
}

}  // namespace detail

// One-level orthonormal Haar transform per channel; sigma = median|HH| / 0.6745.
template <class T>
NoiseEstimate estimate_mad(const Image<T>& y) {
  const auto t0 = std::chrono::steady_clock::now();
  if (y.height() < 2 || y.width() < 2) throw ShapeError("estimate_mad: image must be at least 2x2");
  double acc = 0.0;
  for (std::size_t c = 0; c < y.channels(); ++c) acc += detail::haar_mad_channel(y.plane(c), y.height(), y.width());
  const double s = 255.0 * acc / static_cast<double>(y.channels());
  return {s, NoiseMethod::mad, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

struct PcaOptions {
  std::size_t patch = 7;
  double rel_tol = 0.01;  // stop once the estimate moves by less than this
  std::size_t max_iterations = 30;
};

namespace detail {

// Variance of one channel from the covariance of its overlapping patches,
// re-estimated on progressively trimmed low-variance patch sets.
template <class T>
double pca_channel_variance(std::span<const T> img, std::size_t h, std::size_t w, const PcaOptions& opt) {
  const std::size_t p = opt.patch, d = p * p;
  const std::size_t ph = h - p + 1, pw = w - p + 1, n = ph * pw;

  // per-patch sample variance via summed-area tables
  std::vector<double> s1((h + 1) * (w + 1), 0.0), s2((h + 1) * (w + 1), 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double v = img[i * w + j];
      const std::size_t o = (i + 1) * (w + 1) + j + 1;
      s1[o] = v + s1[o - 1] + s1[o - w - 1] - s1[o - w - 2];
      s2[o] = v * v + s2[o - 1] + s2[o - w - 1] - s2[o - w - 2];
    }
  auto box = [&](const std::vector<double>& s, std::size_t i, std::size_t j) {
    const std::size_t a = i * (w + 1) + j, b = (i + p) * (w + 1) + j;
    return s[b + p] - s[b] - s[a + p] + s[a];
  };
  std::vector<double> pvar(n);
  for (std::size_t i = 0; i < ph; ++i)
    for (std::size_t j = 0; j < pw; ++j) {
      const double m = box(s1, i, j) / static_cast<double>(d);
      pvar[i * pw + j] = std::max(0.0, (box(s2, i, j) - static_cast<double>(d) * m * m) / static_cast<double>(d - 1));
    }

  const std::size_t chunk = 2048;
  Eigen::MatrixXd block(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(chunk));
  auto variance_of = [&](double limit) {
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    std::size_t count = 0, fill = 0;
    auto flush = [&] {
      if (fill == 0) return;
      auto used = block.leftCols(static_cast<Eigen::Index>(fill));
      scatter.selfadjointView<Eigen::Lower>().rankUpdate(used);
      sum += used.rowwise().sum();
      fill = 0;
    };
    for (std::size_t i = 0; i < ph; ++i)
      for (std::size_t j = 0; j < pw; ++j) {
        if (pvar[i * pw + j] > limit) continue;
        for (std::size_t u = 0; u < p; ++u)
          for (std::size_t v = 0; v < p; ++v)
            block(static_cast<Eigen::Index>(u * p + v), static_cast<Eigen::Index>(fill)) = img[(i + u) * w + j + v];
        ++count;
        if (++fill == chunk) flush();
      }
    flush();
    if (count < 10 * d) return -1.0;
    const double cn = static_cast<double>(count);
    Eigen::MatrixXd cov = scatter.selfadjointView<Eigen::Lower>();
    cov = (cov - sum * sum.transpose() / cn) / (cn - 1.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    return noise_subspace_variance(es.eigenvalues().reverse());
  };

  // Start from a low quantile of the patch variances and let the estimate
  // climb to the lowest self-consistent level, which textured patches
  // cannot reach.
  std::vector<double> sorted = pvar;
  const auto q = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 20);
  std::nth_element(sorted.begin(), q, sorted.end());
  double var = *q;
  const double spread = 3.0 * std::sqrt(2.0 / static_cast<double>(d - 1));
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    const double next = variance_of(var * (1.0 + spread));
    if (next < 0.0) break;  // too few patches survive the trim
    const bool done = std::abs(std::sqrt(next) - std::sqrt(var)) <= opt.rel_tol * std::sqrt(var);
    var = next;
    if (done) break;
  }
  return var;
}

}  // namespace detail

// Patch-PCA estimator: sigma^2 is the mean of the noise-subspace eigenvalues
// of the covariance of overlapping patches, refined by repeatedly discarding
// patches whose variance is implausibly large for the current estimate.
template <class T>
NoiseEstimate estimate_pca(const Image<T>& y, PcaOptions opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  if (opt.patch < 2) throw ValueError("estimate_pca: patch size must be >= 2");
  const std::size_t d = opt.patch * opt.patch;
  if (y.height() < opt.patch || y.width() < opt.patch ||
      (y.height() - opt.patch + 1) * (y.width() - opt.patch + 1) < 10 * d)
    throw ShapeError("estimate_pca: image too small for the patch size");
  double acc = 0.0;
  for (std::size_t c = 0; c < y.channels(); ++c)
    acc += std::sqrt(detail::pca_channel_variance(y.plane(c), y.height(), y.width(), opt));
  const double s = 255.0 * acc / static_cast<double>(y.channels());
  return {s, NoiseMethod::pca, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

inline NoiseMethod parse_noise_method(std::string_view s) {
  if (s == "mad") return NoiseMethod::mad;
  if (s == "pca") return NoiseMethod::pca;
  if (s == "gt" || s == "ground_truth") return NoiseMethod::ground_truth;
  throw ValueError("unknown noise estimator '" + std::string(s) + "' (expected gt, mad or pca)");
}

// Runs the chosen estimator; ground_truth returns the supplied sigma.
template <class T>
NoiseEstimate estimate_noise(const Image<T>& y, NoiseMethod m, double sigma_gt = 0.0) {
  switch (m) {
    case NoiseMethod::mad: return estimate_mad(y);
    case NoiseMethod::pca: return estimate_pca(y);
    case NoiseMethod::ground_truth:
      if (!(sigma_gt >= 0.0)) throw ValueError("estimate_noise: sigma must be >= 0");
      return {sigma_gt, NoiseMethod::ground_truth, 0.0};
  }
  throw ValueError("estimate_noise: unknown method");
}

}  // namespace cdlnet
