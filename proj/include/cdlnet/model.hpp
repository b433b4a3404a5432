#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cdlnet/conv.hpp"
#include "cdlnet/image.hpp"
#include "cdlnet/sparse.hpp"

// The unrolled convolutional dictionary learning network:
//
//   z(0) = 0
//   z(k+1) = T( z(k) - A(k)^T ( [m o] B(k) z(k) - y ), tau0(k) + tau1(k) * sigma )
//   x_hat = D z(K)
//
// T is soft-thresholding, or block-thresholding of color coefficients when a
// single grayscale bank is shared across R, G and B. The step size is
// absorbed into A(k).
namespace cdlnet {

enum class Task { denoise, jdd };
enum class ThresholdMode { soft, block };

struct ModelConfig {
  std::size_t K = 20;           // unrollings
  std::size_t M = 32;           // subbands
  std::size_t filter_size = 7;  // sqrt(P)
  std::size_t stride = 1;
  std::size_t channels = 1;  // image channels C
  Task task = Task::denoise;
  ThresholdMode threshold_mode = ThresholdMode::soft;
  bool adaptive = true;  // tau1 learned; frozen at 0 otherwise

  std::size_t filter_area() const { return filter_size * filter_size; }
  std::size_t bank_channels() const { return threshold_mode == ThresholdMode::block ? 1 : channels; }
  std::size_t code_groups() const { return threshold_mode == ThresholdMode::block ? channels : 1; }

  void validate() const {
    if (K < 1) throw ValueError("ModelConfig: K must be >= 1");
    if (M < 1) throw ValueError("ModelConfig: M must be >= 1");
    if (filter_size < 1) throw ValueError("ModelConfig: filter_size must be >= 1");
    if (stride < 1) throw ValueError("ModelConfig: stride must be >= 1");
    if (channels != 1 && channels != 3) throw ValueError("ModelConfig: channels must be 1 or 3");
    if (task == Task::jdd && channels != 3) throw ValueError("ModelConfig: jdd requires 3 channels");
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class T = double>
struct LayerParams {
  FilterBank<T> A;  // analysis
  FilterBank<T> B;  // synthesis
  std::vector<T> tau0;
  std::vector<T> tau1;

  bool operator==(const LayerParams&) const = default;
};

// Per-layer dA, dB, dtau0, dtau1 plus dD, shaped exactly like ModelParams.
template <class T = double>
struct GradientSet {
  std::vector<LayerParams<T>> layers;
  FilterBank<T> dict;

  GradientSet& operator+=(const GradientSet& o);
  GradientSet& operator*=(T a);
  bool operator==(const GradientSet&) const = default;
};

template <class T = double>
struct ModelParams {
  ModelConfig config;
  std::vector<LayerParams<T>> layers;
  FilterBank<T> dict;  // D

  bool operator==(const ModelParams&) const = default;
};

// Calls f(name, span) on every parameter array in a fixed order:
// per layer A, B, tau0, tau1; then D. Works for ModelParams and GradientSet.
template <class P, class F>
void for_each_array(P& p, F&& f) {
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    auto& l = p.layers[k];
    const std::string pre = "layer" + std::to_string(k) + ".";
    f(pre + "A", l.A.weights());
    f(pre + "B", l.B.weights());
    f(pre + "tau0", std::span(l.tau0));
    f(pre + "tau1", std::span(l.tau1));
  }
  f(std::string("D"), p.dict.weights());
}

template <class T>
GradientSet<T>& GradientSet<T>::operator+=(const GradientSet& o) {
  std::vector<std::span<const T>> src;
  for_each_array(o, [&](const std::string&, auto s) { src.push_back(s); });
  std::size_t i = 0;
  for_each_array(*this, [&](const std::string&, std::span<T> dst) {
    if (i >= src.size() || src[i].size() != dst.size()) throw ShapeError("GradientSet +=: shape mismatch");
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[i][n];
    ++i;
  });
  return *this;
}

template <class T>
GradientSet<T>& GradientSet<T>::operator*=(T a) {
  for_each_array(*this, [&](const std::string&, std::span<T> dst) {
    for (T& v : dst) v *= a;
  });
  return *this;
}

template <class T>
GradientSet<T> zero_gradients(const ModelParams<T>& theta) {
  GradientSet<T> g;
  for (const auto& l : theta.layers) {
    const auto& a = l.A;
    const auto& b = l.B;
    g.layers.push_back({FilterBank<T>(a.num_filters(), a.size(), a.channels()),
                        FilterBank<T>(b.num_filters(), b.size(), b.channels()),
                        std::vector<T>(l.tau0.size(), T{}), std::vector<T>(l.tau1.size(), T{})});
  }
  g.dict = FilterBank<T>(theta.dict.num_filters(), theta.dict.size(), theta.dict.channels());
  return g;
}

template <class T>
std::size_t total_size(const GradientSet<T>& g) {
  std::size_t n = 0;
  for_each_array(g, [&](const std::string&, auto s) { n += s.size(); });
  return n;
}

template <class T>
std::vector<T> effective_thresholds(const LayerParams<T>& layer, double sigma) {
  if (!(sigma >= 0.0)) throw ValueError("effective_thresholds: sigma must be >= 0");
  const T s = static_cast<T>(sigma / 255.0);
  std::vector<T> tau(layer.tau0.size());
  for (std::size_t m = 0; m < tau.size(); ++m) tau[m] = layer.tau0[m] + layer.tau1[m] * s;
  return tau;
}

// Cached intermediates of one forward pass, consumed by backward().
template <class T = double>
struct ForwardTrace {
  std::vector<SubbandCode<T>> z;      // z(0..K)
  std::vector<SubbandCode<T>> pre;    // pre-threshold values v(k), k = 0..K-1
  std::vector<Image<T>> residual;     // [m o] B(k) z(k) - y
  std::vector<std::vector<T>> tau;    // effective thresholds per layer
  std::optional<MaskSignal> mask;
  double sigma = 0.0;                 // 0-255 scale
  Image<T> output;                    // x_hat
};

template <class T = double>
struct ForwardResult {
  Image<T> output;   // x_hat
  SubbandCode<T> code;  // z(K)
};

namespace detail {

template <class T>
void check_model(const ModelParams<T>& theta) {
  theta.config.validate();
  if (theta.layers.size() != theta.config.K) throw ShapeError("model: layer count differs from K");
}

template <class T>
SubbandCode<T> threshold(const ModelConfig& cfg, SubbandCode<T> v, std::span<const T> tau) {
  return cfg.threshold_mode == ThresholdMode::block ? block_threshold(std::move(v), tau)
                                                    : soft_threshold(std::move(v), tau);
}

template <class T>
ForwardTrace<T> run_forward(const ModelParams<T>& theta, const Image<T>& y, double sigma, const MaskSignal* mask,
                            bool keep_trace) {
  check_model(theta);
  const ModelConfig& cfg = theta.config;
  if (y.channels() != cfg.channels) throw ShapeError("forward: image channels differ from model config");
  if (y.empty()) throw ShapeError("forward: zero-sized image");
  if (!(sigma >= 0.0)) throw ValueError("forward: sigma must be >= 0");
  if (mask && (mask->height() != y.height() || mask->width() != y.width() || y.channels() != 3))
    throw ShapeError("forward_jdd: mask/image shape mismatch");

  ForwardTrace<T> tr;
  tr.sigma = sigma;
  if (mask) tr.mask = *mask;
  SubbandCode<T> z(cfg.M, cfg.code_groups(), y.height(), y.width(), cfg.stride);
  if (keep_trace) tr.z.push_back(z);
  bool zero_code = true;
  for (std::size_t k = 0; k < cfg.K; ++k) {
    const auto& layer = theta.layers[k];
    Image<T> r = zero_code ? Image<T>(y.height(), y.width(), y.channels()) : synthesis_conv(z, layer.B);
    if (mask) r = apply_mask(*mask, r);
    r -= y;
    SubbandCode<T> v = z - analysis_apply(r, layer.A, cfg.stride);
    auto tau = effective_thresholds(layer, sigma);
    if (keep_trace) {
      tr.residual.push_back(std::move(r));
      tr.pre.push_back(v);
    }
    z = threshold(cfg, std::move(v), std::span<const T>(tau));
    zero_code = false;
    if (keep_trace) {
      tr.z.push_back(z);
      tr.tau.push_back(std::move(tau));
    }
  }
  tr.output = synthesis_conv(z, theta.dict);
  if (!keep_trace) tr.z.push_back(std::move(z));
  return tr;
}

}  // namespace detail

template <class T>
ForwardResult<T> forward(const ModelParams<T>& theta, const Image<T>& y, double sigma) {
  auto tr = detail::run_forward(theta, y, sigma, nullptr, false);
  return {std::move(tr.output), std::move(tr.z.back())};
}

// Masked variant: the per-layer residual uses m o B(k) z(k); y must already be masked.
template <class T>
ForwardResult<T> forward_jdd(const ModelParams<T>& theta, const Image<T>& y, const MaskSignal& mask, double sigma) {
  auto tr = detail::run_forward(theta, y, sigma, &mask, false);
  return {std::move(tr.output), std::move(tr.z.back())};
}

template <class T>
ForwardTrace<T> forward_traced(const ModelParams<T>& theta, const Image<T>& y, double sigma,
                               const MaskSignal* mask = nullptr) {
  return detail::run_forward(theta, y, sigma, mask, true);
}

// Full inference on an image in [0,1]: per-image mean removal, forward pass,
// mean restored. With a mask, y is the mosaiced observation.
template <class T>
Image<T> restore(const ModelParams<T>& theta, const Image<T>& y, double sigma, const MaskSignal* mask = nullptr) {
  Image<T> centered = subtract_mean(y, mask);
  auto offset = centered.mean_offset;
  centered.mean_offset.clear();
  auto res = mask ? forward_jdd(theta, centered, *mask, sigma) : forward(theta, centered, sigma);
  return add_mean(std::move(res.output), std::span<const T>(offset));
}

inline constexpr double kInitTau0 = 1e-2;
inline constexpr double kInitTau1 = 0.0;
inline constexpr std::size_t kInitNormGrid = 128;

// One standard-normal bank shared by D and every B(k) and A(k), scaled by
// its spectral norm, so the untrained network is K ISTA iterations with unit
// step. A(k) stores the same weights as B(k): analysis is correlation, so the
// effective convolution kernel of A(k)^T is the spatial flip of B(k)'s.
template <class T = double>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  FilterBank<T> w(config.M, config.filter_size, config.bank_channels());
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (T& v : w.weights()) v = static_cast<T>(normal(rng));
  const std::size_t grid = std::max(kInitNormGrid, config.filter_size);
  const T nrm = spectral_norm(w, config.stride, grid, grid);
  if (nrm > T{0}) w *= T{1} / nrm;

  ModelParams<T> theta;
  theta.config = config;
  theta.dict = w;
  for (std::size_t k = 0; k < config.K; ++k)
    theta.layers.push_back({w, w, std::vector<T>(config.M, static_cast<T>(kInitTau0)),
                            std::vector<T>(config.M, static_cast<T>(config.adaptive ? kInitTau1 : 0.0))});
  return theta;
}

namespace detail {

template <class T>
void project_bank(FilterBank<T>& f) {
  for (std::size_t m = 0; m < f.num_filters(); ++m) {
    auto w = f.filter(m);
    const T nrm = std::sqrt(squared_norm(std::span<const T>(w)));
    if (nrm > T{1})
      for (T& v : w) v /= nrm;
  }
}

}  // namespace detail

// Euclidean projection onto the feasible set: every filter inside the unit
// l2 ball, thresholds nonnegative, tau1 zero for non-adaptive models.
template <class T>
ModelParams<T> project_constraints(ModelParams<T> theta) {
  for (auto& l : theta.layers) {
    detail::project_bank(l.A);
    detail::project_bank(l.B);
    for (T& t : l.tau0) t = std::max(t, T{0});
    for (T& t : l.tau1) t = theta.config.adaptive ? std::max(t, T{0}) : T{0};
  }
  detail::project_bank(theta.dict);
  return theta;
}

// K*(2*M*P*C + 2*M) + M*P*C for adaptive soft models (C = 1 banks in block
// mode; one threshold vector per layer when not adaptive).
inline std::size_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t bank = cfg.M * cfg.filter_area() * cfg.bank_channels();
  const std::size_t thresholds = (cfg.adaptive ? 2 : 1) * cfg.M;
  return cfg.K * (2 * bank + thresholds) + bank;
}

// The same count without the final dictionary D.
inline std::size_t param_count_without_dict(const ModelConfig& cfg) {
  return param_count(cfg) - cfg.M * cfg.filter_area() * cfg.bank_channels();
}

}  // namespace cdlnet
