#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cdlnet/conv.hpp"
#include "cdlnet/model.hpp"

// Training losses and reverse-mode gradients through the unrolled network.
namespace cdlnet {

enum class LossKind { mse, mcsure };

inline constexpr double kDivergenceStep = 1e-3;  // probe step h, normalized units

struct LossReport {
  double value = 0.0;
  LossKind kind = LossKind::mse;
  // mcsure: |y - f(y)|^2, -N sigma^2, 2 sigma^2 div. mse: {value, 0, 0}.
  std::array<double, 3> components{};
};

template <class T = double>
struct LossAndGradient {
  LossReport report;
  GradientSet<T> grad;
};

namespace detail {

// Backpropagates dz through the thresholding of v; accumulates dtau.
template <class T>
SubbandCode<T> threshold_backward(ThresholdMode mode, const SubbandCode<T>& v, std::span<const T> tau,
                                  const SubbandCode<T>& dz, std::vector<T>& dtau) {
  SubbandCode<T> dv(v.num_subbands(), v.groups(), v.image_height(), v.image_width(), v.stride());
  dtau.assign(v.num_subbands(), T{});
  const std::size_t n = v.grid_size(), groups = v.groups();
  for (std::size_t m = 0; m < v.num_subbands(); ++m) {
    const T t = tau[m];
    if (mode == ThresholdMode::soft) {
      for (std::size_t g = 0; g < groups; ++g) {
        auto vb = v.band(m, g);
        auto db = dz.band(m, g);
        auto ob = dv.band(m, g);
        T acc{};
        for (std::size_t p = 0; p < n; ++p) {
          if (std::abs(vb[p]) > t) {
            ob[p] = db[p];
            acc -= (vb[p] > T{0} ? db[p] : -db[p]);
          }
        }
        dtau[m] += acc;
      }
      continue;
    }
    // block: z = v (1 - t/|v|) on active groups
    for (std::size_t p = 0; p < n; ++p) {
      T nrm2{}, vd{};
      for (std::size_t g = 0; g < groups; ++g) {
        const T a = v.band(m, g)[p];
        nrm2 += a * a;
        vd += a * dz.band(m, g)[p];
      }
      const T nrm = std::sqrt(nrm2);
      if (!(nrm > t)) continue;
      const T shrink = T{1} - t / nrm;
      const T proj = t * vd / (nrm2 * nrm);  // (t/|v|) * (vhat . dz) / |v|
      for (std::size_t g = 0; g < groups; ++g)
        dv.band(m, g)[p] = shrink * dz.band(m, g)[p] + proj * v.band(m, g)[p];
      dtau[m] -= vd / nrm;
    }
  }
  return dv;
}

}  // namespace detail

// Exact gradient of a scalar loss with respect to every parameter, given
// the loss gradient with respect to x_hat of a traced forward pass.
// At the threshold kink (|v| == tau) the subgradient 0 is used.
template <class T>
GradientSet<T> backward(const ModelParams<T>& theta, const ForwardTrace<T>& trace, const Image<T>& upstream) {
  const ModelConfig& cfg = theta.config;
  if (trace.pre.size() != cfg.K || trace.z.size() != cfg.K + 1 || trace.residual.size() != cfg.K)
    throw Error("backward: missing or incomplete forward cache");
  if (!upstream.same_shape(trace.output)) throw ShapeError("backward: upstream gradient shape mismatch");

  GradientSet<T> grad = zero_gradients(theta);
  const T sigma_n = static_cast<T>(trace.sigma / 255.0);
  const std::size_t s = cfg.stride;

  grad.dict = filter_gradient(upstream, trace.z[cfg.K], theta.dict);
  SubbandCode<T> dz = analysis_apply(upstream, theta.dict, s);

  for (std::size_t kk = cfg.K; kk-- > 0;) {
    const auto& layer = theta.layers[kk];
    auto& gl = grad.layers[kk];
    std::vector<T> dtau;
    SubbandCode<T> dv =
        detail::threshold_backward(cfg.threshold_mode, trace.pre[kk], std::span<const T>(trace.tau[kk]), dz, dtau);
    gl.tau0 = dtau;
    for (std::size_t m = 0; m < dtau.size(); ++m) gl.tau1[m] = cfg.adaptive ? sigma_n * dtau[m] : T{0};

    // v = z - A^T r  =>  dA from (r, -dv), dr = -A dv
    SubbandCode<T> dg = dv;
    dg *= T{-1};
    gl.A = filter_gradient(trace.residual[kk], dg, layer.A);
    if (kk == 0) break;  // z(0) = 0: no B gradient, no further code gradient
    Image<T> dr = synthesis_conv(dg, layer.A);
    if (trace.mask) dr = apply_mask(*trace.mask, dr);
    // r = [m o] B z - y
    gl.B = filter_gradient(dr, trace.z[kk], layer.B);
    dz = std::move(dv);
    dz += analysis_apply(dr, layer.B, s);
  }
  return grad;
}

// |x_true - f(y)|^2 summed over pixels and channels.
template <class T>
LossReport loss_mse(const ModelParams<T>& theta, const Image<T>& y, const Image<T>& x_true, double sigma,
                    const MaskSignal* mask = nullptr) {
  if (!y.same_shape(x_true)) throw ShapeError("loss_mse: shape mismatch");
  auto res = mask ? forward_jdd(theta, y, *mask, sigma) : forward(theta, y, sigma);
  const Image<T> diff = x_true - res.output;
  const double v = static_cast<double>(detail::squared_norm(std::span<const T>(diff.data())));
  return {v, LossKind::mse, {v, 0.0, 0.0}};
}

template <class T>
LossAndGradient<T> mse_with_gradient(const ModelParams<T>& theta, const Image<T>& y, const Image<T>& x_true,
                                     double sigma, const MaskSignal* mask = nullptr) {
  if (!y.same_shape(x_true)) throw ShapeError("loss_mse: shape mismatch");
  auto tr = forward_traced(theta, y, sigma, mask);
  Image<T> upstream = tr.output - x_true;
  const double v = static_cast<double>(detail::squared_norm(std::span<const T>(upstream.data())));
  upstream *= T{2};
  return {{v, LossKind::mse, {v, 0.0, 0.0}}, backward(theta, tr, upstream)};
}

template <class T>
Image<T> standard_normal_like(const Image<T>& y, std::uint64_t seed) {
  Image<T> b(y.height(), y.width(), y.channels());
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (T& v : b.data()) v = static_cast<T>(normal(rng));
  return b;
}

// One-probe Monte-Carlo divergence b^T (f(y + h b) - f(y)) / h for any
// image-to-image map f.
template <class T, class F>
  requires std::invocable<F&, const Image<T>&>
double mc_divergence(F&& f, const Image<T>& y, double h, std::uint64_t seed) {
  if (!(h > 0.0)) throw ValueError("mc_divergence: h must be > 0");
  const Image<T> b = standard_normal_like(y, seed);
  Image<T> probe = y;
  detail::axpy(static_cast<T>(h), std::span<const T>(b.data()), probe.data());
  const Image<T> diff = f(probe) - f(y);
  return static_cast<double>(detail::dot(std::span<const T>(b.data()), std::span<const T>(diff.data()))) / h;
}

template <class T>
double mc_divergence(const ModelParams<T>& theta, const Image<T>& y, double sigma, double h, std::uint64_t seed) {
  return mc_divergence([&](const Image<T>& in) { return forward(theta, in, sigma).output; }, y, h, seed);
}

// |y - f(y)|^2 - N sigma^2 + 2 sigma^2 div f(y), sigma normalized to sigma/255.
// No clean image enters the estimate.
template <class T, class F>
  requires std::invocable<F&, const Image<T>&>
LossReport loss_mcsure(F&& f, const Image<T>& y, double sigma, std::uint64_t seed, double h = kDivergenceStep) {
  if (!(sigma >= 0.0)) throw ValueError("loss_mcsure: sigma must be >= 0");
  const double s2 = (sigma / 255.0) * (sigma / 255.0);
  const Image<T> diff = y - f(y);
  const double fid = static_cast<double>(detail::squared_norm(std::span<const T>(diff.data())));
  const double bias = -static_cast<double>(y.size()) * s2;
  const double div = s2 == 0.0 ? 0.0 : 2.0 * s2 * mc_divergence(f, y, h, seed);
  return {fid + bias + div, LossKind::mcsure, {fid, bias, div}};
}

template <class T>
LossReport loss_mcsure(const ModelParams<T>& theta, const Image<T>& y, double sigma, std::uint64_t seed,
                       double h = kDivergenceStep) {
  return loss_mcsure([&](const Image<T>& in) { return forward(theta, in, sigma).output; }, y, sigma, seed, h);
}

// MC-SURE value and its gradient, differentiating through both forward passes.
template <class T>
LossAndGradient<T> mcsure_with_gradient(const ModelParams<T>& theta, const Image<T>& y, double sigma,
                                        std::uint64_t seed, double h = kDivergenceStep) {
  if (!(sigma >= 0.0)) throw ValueError("loss_mcsure: sigma must be >= 0");
  if (!(h > 0.0)) throw ValueError("mc_divergence: h must be > 0");
  const double s2 = (sigma / 255.0) * (sigma / 255.0);
  const Image<T> b = standard_normal_like(y, seed);
  Image<T> probe = y;
  detail::axpy(static_cast<T>(h), std::span<const T>(b.data()), probe.data());

  auto tr0 = forward_traced(theta, y, sigma);
  auto tr1 = forward_traced(theta, probe, sigma);
  const Image<T> resid = y - tr0.output;
  const Image<T> delta = tr1.output - tr0.output;
  const double fid = static_cast<double>(detail::squared_norm(std::span<const T>(resid.data())));
  const double bias = -static_cast<double>(y.size()) * s2;
  const double div =
      2.0 * s2 * static_cast<double>(detail::dot(std::span<const T>(b.data()), std::span<const T>(delta.data()))) / h;

  const T coef = static_cast<T>(2.0 * s2 / h);
  Image<T> up0 = resid;
  up0 *= T{-2};
  detail::axpy(-coef, std::span<const T>(b.data()), up0.data());
  Image<T> up1 = b;
  up1 *= coef;

  GradientSet<T> grad = backward(theta, tr0, up0);
  grad += backward(theta, tr1, up1);
  return {{fid + bias + div, LossKind::mcsure, {fid, bias, div}}, std::move(grad)};
}

}  // namespace cdlnet
