#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cdlnet/checkpoint.hpp"
#include "cdlnet/model.hpp"
#include "cdlnet/noise_est.hpp"
#include "cdlnet/train.hpp"

// Inference helpers, evaluation sweeps, the nearest-neighbor demosaicking
// baseline and dictionary export.
namespace cdlnet {

// Fills each unmeasured sample of a channel with the nearest measured sample
// of the same channel (Euclidean distance, ties broken in raster order).
inline Image<double> nn_fill_demosaic(const Image<double>& y, const MaskSignal& mask) {
  if (y.channels() != 3) throw ShapeError("nn_fill_demosaic: needs an RGB image");
  if (mask.height() != y.height() || mask.width() != y.width()) throw ShapeError("nn_fill_demosaic: mask size mismatch");
  const long h = static_cast<long>(y.height()), w = static_cast<long>(y.width());
  Image<double> out = y;
  for (std::size_t c = 0; c < 3; ++c) {
    auto measured = [&](long i, long j) {
      return i >= 0 && j >= 0 && i < h && j < w && mask(c, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    };
    for (long i = 0; i < h; ++i)
      for (long j = 0; j < w; ++j) {
        if (measured(i, j)) continue;
        long best = -1, bi = 0, bj = 0;
        for (long r = 1; r <= std::max(h, w) && (best < 0 || (r - 1) * (r - 1) <= best); ++r)
          for (long di = -r; di <= r; ++di)
            for (long dj = -r; dj <= r; ++dj) {
              if (std::max(std::abs(di), std::abs(dj)) != r || !measured(i + di, j + dj)) continue;
              const long d = di * di + dj * dj;
              if (best < 0 || d < best) {
                best = d;
                bi = i + di;
                bj = j + dj;
              }
            }
        if (best >= 0)
          out(c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
              y(c, static_cast<std::size_t>(bi), static_cast<std::size_t>(bj));
      }
  }
  return out;
}

// Splits a mosaicked observation into one fully measured half-resolution
// plane per 2x2 sampling phase.
inline std::vector<Image<double>> mosaic_phase_planes(const Image<double>& y, const MaskSignal& mask) {
  const std::size_t h = y.height() / 2, w = y.width() / 2;
  if (h == 0 || w == 0) throw ShapeError("mosaic_phase_planes: image smaller than 2x2");
  std::vector<Image<double>> planes;
  for (std::size_t pi = 0; pi < 2; ++pi)
    for (std::size_t pj = 0; pj < 2; ++pj) {
      std::size_t c = 0;
      while (c < 3 && !mask(c, pi, pj)) ++c;
      if (c == 3) continue;
      Image<double> p(h, w, 1);
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) p(0, i, j) = y(c, 2 * i + pi, 2 * j + pj);
      planes.push_back(std::move(p));
    }
  return planes;
}

// The noise level fed to the thresholds: ground truth or estimated. For a
// mosaicked input the estimate is the mean over the sampling phase planes.
inline NoiseEstimate noise_level(const Image<double>& y, NoiseMethod method, double sigma_gt,
                                 const MaskSignal* mask = nullptr) {
  if (method == NoiseMethod::ground_truth || !mask) return estimate_noise(y, method, sigma_gt);
  NoiseEstimate total{0.0, method, 0.0};
  const auto planes = mosaic_phase_planes(y, *mask);
  for (const auto& p : planes) {
    const auto e = estimate_noise(p, method, sigma_gt);
    total.sigma_hat += e.sigma_hat / static_cast<double>(planes.size());
    total.elapsed += e.elapsed;
  }
  return total;
}

struct Restoration {
  Image<double> image;
  NoiseEstimate noise;
};

// Shared inference path of the denoise, jdd and eval commands.
inline Restoration restore_image(const ModelParams<double>& theta, const Image<double>& y, NoiseMethod method,
                                 double sigma_gt, const MaskSignal* mask = nullptr) {
  Restoration r{Image<double>(), noise_level(y, method, sigma_gt, mask)};
  r.image = restore(theta, y, r.noise.sigma_hat, mask);
  return r;
}

// Expands a single-plane RGGB color-filter-array capture into the masked
// three-channel observation.
inline Image<double> cfa_to_mosaic(const Image<double>& raw) {
  if (raw.channels() != 1) throw ShapeError("cfa_to_mosaic: expects a single-plane capture");
  const MaskSignal mask = make_bayer_mask(raw.height(), raw.width());
  Image<double> out(raw.height(), raw.width(), 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < raw.height(); ++i)
      for (std::size_t j = 0; j < raw.width(); ++j)
        if (mask(c, i, j)) out(c, i, j) = raw(0, i, j);
  return out;
}

struct EvalRow {
  std::string image;
  double sigma = 0.0;         // true noise level
  double psnr_input = 0.0;    // noisy input (jdd: its nearest-neighbor fill)
  double psnr_output = 0.0;   // network reconstruction
  NoiseMethod method = NoiseMethod::ground_truth;
  double sigma_hat = 0.0;     // level given to the network
};

struct EvalAggregate {
  double sigma = 0.0;
  std::size_t count = 0;
  double psnr_input = 0.0;
  double psnr_output = 0.0;
  double sigma_hat = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EvalAggregate> aggregates;  // one per sigma, ascending
};

// Degraded input used by evaluation: AWGN with a seed derived from the image
// index and noise level, then the Bayer mask for jdd models.
inline Image<double> eval_input(const Image<double>& x, double sigma, Task task, std::uint64_t seed, std::size_t index) {
  Image<double> y = awgn(x, sigma, mix_seed(seed, index, static_cast<std::uint64_t>(std::llround(sigma * 1000.0))));
  if (task == Task::jdd) y = apply_mask(make_bayer_mask(x.height(), x.width()), y);
  return y;
}

inline EvalReport evaluate(const ModelParams<double>& theta, const Dataset& test, const std::vector<double>& sigmas,
                           NoiseMethod method, std::uint64_t seed) {
  if (test.size() == 0) throw ValueError("evaluate: empty test set");
  if (sigmas.empty()) throw ValueError("evaluate: empty sigma list");
  const bool jdd = theta.config.task == Task::jdd;
  EvalReport rep;
  for (std::size_t n = 0; n < test.size(); ++n) {
    const auto& x = test.images[n];
    std::optional<MaskSignal> mask;
    if (jdd) mask = make_bayer_mask(x.height(), x.width());
    for (double s : sigmas) {
      const Image<double> y = eval_input(x, s, theta.config.task, seed, n);
      const MaskSignal* mp = mask ? &*mask : nullptr;
      const auto rest = restore_image(theta, y, method, s, mp);
      EvalRow row;
      row.image = test.names[n];
      row.sigma = s;
      row.psnr_input = psnr(x, jdd ? nn_fill_demosaic(y, *mask) : y);
      row.psnr_output = psnr(x, rest.image);
      row.method = method;
      row.sigma_hat = rest.noise.sigma_hat;
      rep.rows.push_back(std::move(row));
    }
  }
  std::sort(rep.rows.begin(), rep.rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return a.image != b.image ? a.image < b.image : a.sigma < b.sigma;
  });
  std::map<double, EvalAggregate> agg;
  for (const auto& r : rep.rows) {
    auto& a = agg[r.sigma];
    a.sigma = r.sigma;
    ++a.count;
    a.psnr_input += r.psnr_input;
    a.psnr_output += r.psnr_output;
    a.sigma_hat += r.sigma_hat;
  }
  for (auto& [s, a] : agg) {
    const double k = static_cast<double>(a.count);
    a.psnr_input /= k;
    a.psnr_output /= k;
    a.sigma_hat /= k;
    rep.aggregates.push_back(a);
  }
  return rep;
}

inline constexpr const char* kEvalCsvHeader = "image,sigma,psnr_input,psnr_output,method,sigma_hat";

// Per-image rows, then one row per sigma with image = "MEAN".
inline void write_eval_csv(std::ostream& out, const EvalReport& rep) {
  out << kEvalCsvHeader << "\n";
  char buf[256];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, ",%g,%.6f,%.6f,%s,%.6f\n", r.sigma, r.psnr_input, r.psnr_output,
                  std::string(to_string(r.method)).c_str(), r.sigma_hat);
    out << r.image << buf;
  }
  const std::string method = rep.rows.empty() ? "gt" : std::string(to_string(rep.rows.front().method));
  for (const auto& a : rep.aggregates) {
    std::snprintf(buf, sizeof buf, "MEAN,%g,%.6f,%.6f,%s,%.6f\n", a.sigma, a.psnr_input, a.psnr_output,
                  method.c_str(), a.sigma_hat);
    out << buf;
  }
}

// ---- dictionary export ----------------------------------------------------

inline constexpr std::array<char, 8> kDictMagic{'C', 'D', 'L', 'N', 'D', 'I', 'C', 'T'};

// Raw dump: magic, u32 M, u32 C, u32 filter size, then f64 taps in [m][c][u][v]
// order, all little-endian.
inline void write_dict_dump(std::ostream& out, const FilterBank<double>& f) {
  detail::LeWriter w(out);
  w.bytes(kDictMagic.data(), kDictMagic.size());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(f.num_filters()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(f.channels()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(f.size()));
  for (double v : f.weights()) w.f64(v);
}

inline FilterBank<double> read_dict_dump(std::istream& in) {
  detail::LeReader r(in);
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kDictMagic) throw FormatError("dictionary dump: bad magic bytes");
  const auto m = r.uint<std::uint32_t>(), c = r.uint<std::uint32_t>(), k = r.uint<std::uint32_t>();
  if (m == 0 || k == 0 || (c != 1 && c != 3) || m > 65536 || k > 1024)
    throw FormatError("dictionary dump: implausible header");
  FilterBank<double> f(m, k, c);
  for (double& v : f.weights()) v = r.f64();
  return f;
}

// Grid used for the filter mosaic: 2^ceil(log2(sqrt(M))) columns.
inline std::pair<std::size_t, std::size_t> mosaic_grid(std::size_t m) {
  std::size_t cols = 1;
  while (cols * cols < m) cols *= 2;
  return {(m + cols - 1) / cols, cols};  // rows, cols
}

// Tiles every filter (min-max normalized to [0, 1] on its own) into one
// image with one-pixel white gaps. `order` picks the tile sequence.
inline Image<double> filter_mosaic(const FilterBank<double>& f, std::span<const std::size_t> order = {}) {
  const std::size_t m = f.num_filters(), k = f.size();
  const auto [rows, cols] = mosaic_grid(m);
  Image<double> img(rows * (k + 1) + 1, cols * (k + 1) + 1, f.channels(), 1.0);
  for (std::size_t t = 0; t < m; ++t) {
    const std::size_t idx = order.empty() ? t : order[t];
    const auto taps = f.filter(idx);
    const auto [lo, hi] = std::minmax_element(taps.begin(), taps.end());
    const double span = *hi - *lo;
    const std::size_t top = 1 + (t / cols) * (k + 1), left = 1 + (t % cols) * (k + 1);
    for (std::size_t c = 0; c < f.channels(); ++c)
      for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v)
          img(c, top + u, left + v) = span > 0.0 ? (f(idx, c, u, v) - *lo) / span : 0.5;
  }
  return img;
}

// Mean absolute final-layer code activation per filter over a set of
// images at noise level sigma.
inline std::vector<double> filter_usage(const ModelParams<double>& theta, const Dataset& images, double sigma,
                                        std::uint64_t seed) {
  std::vector<double> usage(theta.config.M, 0.0);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& x = images.images[n];
    Image<double> y = eval_input(x, sigma, theta.config.task, seed, n);
    std::optional<MaskSignal> mask;
    if (theta.config.task == Task::jdd) mask = make_bayer_mask(x.height(), x.width());
    const Image<double> centered = subtract_mean(y, mask ? &*mask : nullptr);
    const auto res = mask ? forward_jdd(theta, centered, *mask, sigma) : forward(theta, centered, sigma);
    for (std::size_t m = 0; m < theta.config.M; ++m) {
      double s = 0.0, cnt = 0.0;
      for (std::size_t g = 0; g < res.code.groups(); ++g) {
        for (double v : res.code.band(m, g)) s += std::abs(v);
        cnt += static_cast<double>(res.code.grid_size());
      }
      usage[m] += s / cnt / static_cast<double>(images.size());
    }
  }
  return usage;
}

// Filter indices by descending usage (stable on ties).
inline std::vector<std::size_t> usage_order(std::span<const double> usage) {
  std::vector<std::size_t> order(usage.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return usage[a] > usage[b]; });
  return order;
}

}  // namespace cdlnet
