#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "cdlnet/image.hpp"

// Strided multi-subband convolution operators.
//
// analysis_conv is cross-correlation followed by subsampling on the stride
// grid; synthesis_conv zero-fills a code back to the full grid and convolves
// each subband with its filter. Both walk the same (tap, row, column) index
// sets, so they are exact adjoints of each other. Zero padding throughout,
// kernel origin at (k-1)/2.
namespace cdlnet {
namespace detail {

struct PlaneGeometry {
  std::ptrdiff_t h, w;    // image plane
  std::ptrdiff_t gh, gw;  // code grid
  std::ptrdiff_t k, s;

  std::ptrdiff_t origin() const { return (k - 1) / 2; }

  // Range [lo, hi) of grid columns jo with 0 <= s*jo + dj < w.
  void col_range(std::ptrdiff_t dj, std::ptrdiff_t& lo, std::ptrdiff_t& hi) const {
    lo = dj >= 0 ? 0 : (-dj + s - 1) / s;
    hi = (w - 1 - dj) >= 0 ? std::min(gw, (w - 1 - dj) / s + 1) : 0;
  }
};

// out[j] += sum_v w[v] * in[j + v - base] over 0 <= j + v - base < n.
template <class T>
inline void row_filter(const T* __restrict in, T* __restrict out, const T* __restrict w, std::ptrdiff_t k,
                       std::ptrdiff_t base, std::ptrdiff_t n) {
  const std::ptrdiff_t lo = std::min(base, n);
  const std::ptrdiff_t hi = std::max(lo, n - (k - 1 - base));
  for (std::ptrdiff_t j = 0; j < lo; ++j) {
    T a = out[j];
    for (std::ptrdiff_t v = 0; v < k; ++v) {
      const std::ptrdiff_t q = j + v - base;
      if (q >= 0 && q < n) a += w[v] * in[q];
    }
    out[j] = a;
  }
  for (std::ptrdiff_t j = lo; j < hi; ++j) {
    T a = out[j];
    for (std::ptrdiff_t v = 0; v < k; ++v) a += w[v] * in[j + v - base];
    out[j] = a;
  }
  for (std::ptrdiff_t j = hi; j < n; ++j) {
    T a = out[j];
    for (std::ptrdiff_t v = 0; v < k; ++v) {
      const std::ptrdiff_t q = j + v - base;
      if (q >= 0 && q < n) a += w[v] * in[q];
    }
    out[j] = a;
  }
}

// out[io][jo] += sum_{u,v} taps[u][v] * x[s*io + u - r][s*jo + v - r]
template <class T>
void correlate_plane(const T* x, const T* taps, T* out, const PlaneGeometry& g) {
  const std::ptrdiff_t r = g.origin();
  for (std::ptrdiff_t u = 0; u < g.k; ++u) {
    const std::ptrdiff_t di = u - r;
    for (std::ptrdiff_t io = 0; io < g.gh; ++io) {
      const std::ptrdiff_t i = g.s * io + di;
      if (i < 0 || i >= g.h) continue;
      const T* xrow = x + i * g.w;
      T* orow = out + io * g.gw;
      if (g.s == 1) {
        row_filter(xrow, orow, taps + u * g.k, g.k, r, g.w);
        continue;
      }
      for (std::ptrdiff_t v = 0; v < g.k; ++v) {
        const T wt = taps[u * g.k + v];
        const std::ptrdiff_t dj = v - r;
        std::ptrdiff_t lo, hi;
        g.col_range(dj, lo, hi);
        for (std::ptrdiff_t jo = lo; jo < hi; ++jo) orow[jo] += wt * xrow[g.s * jo + dj];
      }
    }
  }
}

// Transpose of correlate_plane: x[s*io + u - r][s*jo + v - r] += taps[u][v] * z[io][jo]
template <class T>
void scatter_plane(const T* z, const T* taps, T* x, const PlaneGeometry& g) {
  const std::ptrdiff_t r = g.origin();
  std::vector<T> reversed(static_cast<std::size_t>(g.k));
  for (std::ptrdiff_t u = 0; u < g.k; ++u) {
    const std::ptrdiff_t di = u - r;
    if (g.s == 1)
      for (std::ptrdiff_t v = 0; v < g.k; ++v) reversed[v] = taps[u * g.k + (g.k - 1 - v)];
    for (std::ptrdiff_t io = 0; io < g.gh; ++io) {
      const std::ptrdiff_t i = g.s * io + di;
      if (i < 0 || i >= g.h) continue;
      T* xrow = x + i * g.w;
      const T* zrow = z + io * g.gw;
      if (g.s == 1) {
        // x[j] += sum_v taps[v] z[j - (v - r)], written as a gather over reversed taps
        row_filter(zrow, xrow, reversed.data(), g.k, g.k - 1 - r, g.w);
        continue;
      }
      for (std::ptrdiff_t v = 0; v < g.k; ++v) {
        const T wt = taps[u * g.k + v];
        const std::ptrdiff_t dj = v - r;
        std::ptrdiff_t lo, hi;
        g.col_range(dj, lo, hi);
        for (std::ptrdiff_t jo = lo; jo < hi; ++jo) xrow[g.s * jo + dj] += wt * zrow[jo];
      }
    }
  }
}

// grad[u][v] += sum_{io,jo} z[io][jo] * x[s*io + u - r][s*jo + v - r]
//
// Products are accumulated per column first so the inner loop is an
// elementwise multiply-add rather than a floating-point reduction.
template <class T>
void tap_gradient_plane(const T* x, const T* z, T* grad, const PlaneGeometry& g) {
  const std::ptrdiff_t r = g.origin();
  std::vector<T> cols(static_cast<std::size_t>(g.k * g.gw));
  for (std::ptrdiff_t u = 0; u < g.k; ++u) {
    const std::ptrdiff_t di = u - r;
    std::fill(cols.begin(), cols.end(), T{});
    for (std::ptrdiff_t io = 0; io < g.gh; ++io) {
      const std::ptrdiff_t i = g.s * io + di;
      if (i < 0 || i >= g.h) continue;
      const T* xrow = x + i * g.w;
      const T* zrow = z + io * g.gw;
      for (std::ptrdiff_t v = 0; v < g.k; ++v) {
        const std::ptrdiff_t dj = v - r;
        std::ptrdiff_t lo, hi;
        g.col_range(dj, lo, hi);
        T* acc = cols.data() + v * g.gw;
        if (g.s == 1) {
          const T* xs = xrow + dj;
          for (std::ptrdiff_t jo = lo; jo < hi; ++jo) acc[jo] += zrow[jo] * xs[jo];
        } else {
          for (std::ptrdiff_t jo = lo; jo < hi; ++jo) acc[jo] += zrow[jo] * xrow[g.s * jo + dj];
        }
      }
    }
    for (std::ptrdiff_t v = 0; v < g.k; ++v) {
      T sum{};
      const T* acc = cols.data() + v * g.gw;
      for (std::ptrdiff_t jo = 0; jo < g.gw; ++jo) sum += acc[jo];
      grad[u * g.k + v] += sum;
    }
  }
}

template <class T>
PlaneGeometry geometry_of(const SubbandCode<T>& z, std::size_t k) {
  return {static_cast<std::ptrdiff_t>(z.image_height()), static_cast<std::ptrdiff_t>(z.image_width()),
          static_cast<std::ptrdiff_t>(z.grid_height()),  static_cast<std::ptrdiff_t>(z.grid_width()),
          static_cast<std::ptrdiff_t>(k),                static_cast<std::ptrdiff_t>(z.stride())};
}

}  // namespace detail

// Correlation of x with every filter (summed over channels), sampled on the stride grid.
template <class T>
SubbandCode<T> analysis_conv(const Image<T>& x, const FilterBank<T>& f, std::size_t stride) {
  if (x.empty()) throw ShapeError("analysis_conv: zero-sized image");
  if (f.channels() != x.channels()) throw ShapeError("analysis_conv: filter/image channel mismatch");
  if (stride < 1) throw ValueError("analysis_conv: stride must be >= 1");
  SubbandCode<T> z(f.num_filters(), 1, x.height(), x.width(), stride);
  const auto g = detail::geometry_of(z, f.size());
  for (std::size_t m = 0; m < f.num_filters(); ++m)
    for (std::size_t c = 0; c < x.channels(); ++c)
      detail::correlate_plane(x.plane(c).data(), f.taps(m, c).data(), z.band(m).data(), g);
  return z;
}

// Single-channel bank applied identically to each channel of x; the code
// carries one group per image channel.
template <class T>
SubbandCode<T> shared_analysis_conv(const Image<T>& x, const FilterBank<T>& f, std::size_t stride) {
  if (x.empty()) throw ShapeError("shared_analysis_conv: zero-sized image");
  if (f.channels() != 1) throw ShapeError("shared_analysis_conv: bank must be single-channel");
  if (stride < 1) throw ValueError("shared_analysis_conv: stride must be >= 1");
  SubbandCode<T> z(f.num_filters(), x.channels(), x.height(), x.width(), stride);
  const auto g = detail::geometry_of(z, f.size());
  for (std::size_t m = 0; m < f.num_filters(); ++m)
    for (std::size_t c = 0; c < x.channels(); ++c)
      detail::correlate_plane(x.plane(c).data(), f.taps(m, 0).data(), z.band(m, c).data(), g);
  return z;
}

// Adjoint of analysis_conv (or shared_analysis_conv when z has several groups).
template <class T>
Image<T> synthesis_conv(const SubbandCode<T>& z, const FilterBank<T>& f) {
  if (z.num_subbands() != f.num_filters()) throw ShapeError("synthesis_conv: subband/filter count mismatch");
  const auto g = detail::geometry_of(z, f.size());
  if (f.channels() == 1) {
    Image<T> x(z.image_height(), z.image_width(), z.groups());
    for (std::size_t m = 0; m < f.num_filters(); ++m)
      for (std::size_t c = 0; c < z.groups(); ++c)
        detail::scatter_plane(z.band(m, c).data(), f.taps(m, 0).data(), x.plane(c).data(), g);
    return x;
  }
  if (z.groups() != 1) throw ShapeError("synthesis_conv: multi-channel bank needs a single-group code");
  Image<T> x(z.image_height(), z.image_width(), f.channels());
  for (std::size_t m = 0; m < f.num_filters(); ++m)
    for (std::size_t c = 0; c < f.channels(); ++c)
      detail::scatter_plane(z.band(m).data(), f.taps(m, c).data(), x.plane(c).data(), g);
  return x;
}

template <class T>
Image<T> synthesis_conv(const SubbandCode<T>& z, const FilterBank<T>& f, std::size_t stride) {
  if (z.stride() != stride) throw ShapeError("synthesis_conv: code stride differs from requested stride");
  return synthesis_conv(z, f);
}

// Gradient with respect to the bank weights of the bilinear form
// <code, analysis(x, f)> = <x, synthesis(code, f)>. Shape follows `like`.
template <class T>
FilterBank<T> filter_gradient(const Image<T>& x, const SubbandCode<T>& code, const FilterBank<T>& like) {
  if (code.num_subbands() != like.num_filters() || code.image_height() != x.height() ||
      code.image_width() != x.width())
    throw ShapeError("filter_gradient: shape mismatch");
  FilterBank<T> grad(like.num_filters(), like.size(), like.channels());
  const auto g = detail::geometry_of(code, like.size());
  const std::size_t kk = like.size() * like.size();
  if (like.channels() == 1) {
    if (code.groups() != x.channels()) throw ShapeError("filter_gradient: group/channel mismatch");
    for (std::size_t m = 0; m < like.num_filters(); ++m)
      for (std::size_t c = 0; c < x.channels(); ++c)
        detail::tap_gradient_plane(x.plane(c).data(), code.band(m, c).data(), grad.filter(m).data(), g);
    return grad;
  }
  if (code.groups() != 1 || like.channels() != x.channels())
    throw ShapeError("filter_gradient: group/channel mismatch");
  for (std::size_t m = 0; m < like.num_filters(); ++m)
    for (std::size_t c = 0; c < x.channels(); ++c)
      detail::tap_gradient_plane(x.plane(c).data(), code.band(m).data(), grad.filter(m).data() + c * kk, g);
  return grad;
}

// Dispatches to analysis_conv or shared_analysis_conv depending on the bank.
template <class T>
SubbandCode<T> analysis_apply(const Image<T>& x, const FilterBank<T>& f, std::size_t stride) {
  if (f.channels() == 1 && x.channels() != 1) return shared_analysis_conv(x, f, stride);
  return analysis_conv(x, f, stride);
}

}  // namespace cdlnet
