#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cdlnet/conv.hpp"
#include "cdlnet/image.hpp"

// Reference (non-learned) convolutional sparse coding.
namespace cdlnet {

template <class T>
T soft_threshold(T v, T tau) {
  const T mag = std::abs(v) - tau;
  if (mag <= T{0}) return T{0};
  return v > T{0} ? mag : -mag;
}

// Elementwise soft-thresholding with one threshold per subband.
template <class T>
SubbandCode<T> soft_threshold(SubbandCode<T> z, std::span<const T> tau) {
  if (tau.size() != z.num_subbands()) throw ShapeError("soft_threshold: one threshold per subband required");
  for (std::size_t m = 0; m < z.num_subbands(); ++m) {
    if (!(tau[m] >= T{0})) throw ValueError("soft_threshold: negative threshold");
    for (std::size_t g = 0; g < z.groups(); ++g)
      for (T& v : z.band(m, g)) v = soft_threshold(v, tau[m]);
  }
  return z;
}

// Scales the group by max(0, |v| - tau) / |v|; a zero group stays zero.
template <class T>
void block_threshold_group(std::span<T> group, T tau) {
  if (!(tau >= T{0})) throw ValueError("block_threshold: negative threshold");
  T nrm2{};
  for (T v : group) nrm2 += v * v;
  const T nrm = std::sqrt(nrm2);
  const T scale = nrm > tau ? (nrm - tau) / nrm : T{0};
  for (T& v : group) v *= scale;
}

// Block-thresholding of the color coefficients z^m[n] (one group per pixel
// and subband, spanning code groups).
template <class T>
SubbandCode<T> block_threshold(SubbandCode<T> z, std::span<const T> tau) {
  if (tau.size() != z.num_subbands()) throw ShapeError("block_threshold: one threshold per subband required");
  const std::size_t n = z.grid_size(), groups = z.groups();
  std::vector<T> buf(groups);
  for (std::size_t m = 0; m < z.num_subbands(); ++m) {
    if (!(tau[m] >= T{0})) throw ValueError("block_threshold: negative threshold");
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t g = 0; g < groups; ++g) buf[g] = z.band(m, g)[p];
      block_threshold_group(std::span<T>(buf), tau[m]);
      for (std::size_t g = 0; g < groups; ++g) z.band(m, g)[p] = buf[g];
    }
  }
  return z;
}

enum class GroupMode { elementwise, color_groups };

// 1/2 |y - Dz|^2 + lambda * R(z), R = l1 or the l2,1 color-group norm.
template <class T = double>
struct BpdnProblem {
  Image<T> y;
  FilterBank<T> dict;
  std::size_t stride = 1;
  T lambda = T{0};
  T eta = T{1};
  GroupMode group_mode = GroupMode::elementwise;

  void validate() const {
    if (!(lambda >= T{0})) throw ValueError("BpdnProblem: lambda must be >= 0");
    if (!(eta > T{0})) throw ValueError("BpdnProblem: eta must be > 0");
    if (stride < 1) throw ValueError("BpdnProblem: stride must be >= 1");
    if (group_mode == GroupMode::color_groups && dict.channels() != 1)
      throw ShapeError("BpdnProblem: color-group mode needs a single-channel dictionary");
    if (group_mode == GroupMode::elementwise && dict.channels() != y.channels())
      throw ShapeError("BpdnProblem: dictionary/image channel mismatch");
  }

  Image<T> synthesize(const SubbandCode<T>& z) const { return synthesis_conv(z, dict, stride); }
  SubbandCode<T> analyze(const Image<T>& x) const {
    return group_mode == GroupMode::color_groups ? shared_analysis_conv(x, dict, stride)
                                                 : analysis_conv(x, dict, stride);
  }
  SubbandCode<T> zero_code() const {
    return SubbandCode<T>(dict.num_filters(), group_mode == GroupMode::color_groups ? y.channels() : 1,
                          y.height(), y.width(), stride);
  }
};

template <class T>
T group_l21_norm(const SubbandCode<T>& z) {
  T acc{};
  for (std::size_t m = 0; m < z.num_subbands(); ++m)
    for (std::size_t p = 0; p < z.grid_size(); ++p) {
      T s{};
      for (std::size_t g = 0; g < z.groups(); ++g) s += z.band(m, g)[p] * z.band(m, g)[p];
      acc += std::sqrt(s);
    }
  return acc;
}

template <class T>
T l1_norm(const SubbandCode<T>& z) {
  T acc{};
  for (T v : z.data()) acc += std::abs(v);
  return acc;
}

template <class T>
T bpdn_objective(const BpdnProblem<T>& p, const SubbandCode<T>& z) {
  p.validate();
  if (!z.same_shape(p.zero_code())) throw ShapeError("bpdn_objective: code shape does not match problem");
  const Image<T> resid = p.y - p.synthesize(z);
  const T fidelity = T{0.5} * detail::squared_norm(resid.data());
  const T reg = p.group_mode == GroupMode::color_groups ? group_l21_norm(z) : l1_norm(z);
  return fidelity + p.lambda * reg;
}

template <class T = double>
struct IstaOptions {
  bool record_objective = true;
  // Called with (k, z^(k)) for k = 1..K after every update.
  std::function<void(std::size_t, const SubbandCode<T>&)> on_iterate;
};

template <class T = double>
struct IstaResult {
  SubbandCode<T> z;
  // objective[k] is the objective at z^(k), k = 0..K (empty when not recorded).
  std::vector<T> objective;
};

// K proximal-gradient steps from z = 0:
//   z <- prox(z - eta * D^T (D z - y), eta * lambda)
template <class T>
IstaResult<T> ista(const BpdnProblem<T>& p, std::size_t iterations, const IstaOptions<T>& opts = {}) {
  p.validate();
  if (iterations < 1) throw ValueError("ista: iterations must be >= 1");
  IstaResult<T> out{p.zero_code(), {}};
  std::vector<T> tau(p.dict.num_filters(), p.eta * p.lambda);
  if (opts.record_objective) out.objective.push_back(bpdn_objective(p, out.z));
  for (std::size_t k = 1; k <= iterations; ++k) {
    const Image<T> resid = p.synthesize(out.z) - p.y;
    SubbandCode<T> grad = p.analyze(resid);
    grad *= p.eta;
    SubbandCode<T> v = out.z - grad;
    out.z = p.group_mode == GroupMode::color_groups ? block_threshold(std::move(v), std::span<const T>(tau))
                                                    : soft_threshold(std::move(v), std::span<const T>(tau));
    if (opts.record_objective) out.objective.push_back(bpdn_objective(p, out.z));
    if (opts.on_iterate) opts.on_iterate(k, out.z);
  }
  return out;
}

// sigma * sqrt(2 ln N)
inline double universal_threshold(double sigma, std::size_t n) {
  if (n == 0) throw ValueError("universal_threshold: N must be >= 1");
  if (!(sigma >= 0.0)) throw ValueError("universal_threshold: sigma must be >= 0");
  return sigma * std::sqrt(2.0 * std::log(static_cast<double>(n)));
}

struct SpectralNormOptions {
  double rel_tol = 1e-6;
  std::size_t max_iterations = 100;
};

// Largest singular value of x -> analysis_conv(x, f, stride) on an h x w grid,
// by power iteration on A^T A from the normalized all-ones vector.
template <class T>
T spectral_norm(const FilterBank<T>& f, std::size_t stride, std::size_t height, std::size_t width,
                SpectralNormOptions opts = {}) {
  if (height < f.size() || width < f.size()) throw ValueError("spectral_norm: grid smaller than filter");
  if (stride < 1) throw ValueError("spectral_norm: stride must be >= 1");
  Image<T> x(height, width, f.channels(), T{1} / std::sqrt(static_cast<T>(height * width * f.channels())));
  T lambda{};
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    Image<T> y = synthesis_conv(analysis_conv(x, f, stride), f);
    const T rayleigh = detail::dot(std::span<const T>(x.data()), std::span<const T>(y.data()));
    const T nrm = std::sqrt(detail::squared_norm(std::span<const T>(y.data())));
    if (nrm == T{0}) return T{0};
    y *= T{1} / nrm;
    x = std::move(y);
    const bool converged = it > 0 && std::abs(rayleigh - lambda) <= static_cast<T>(opts.rel_tol) * rayleigh;
    lambda = rayleigh;
    if (converged) break;
  }
  return std::sqrt(std::max(lambda, T{0}));
}

}  // namespace cdlnet
