#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cdlnet/core.hpp"

namespace cdlnet {

// Dense raster in normalized intensity units (nominally [0,1]).
//
// Storage is planar: channel c occupies the contiguous block
// data()[c*H*W, (c+1)*H*W), row-major inside the block.
template <class T = double>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(std::size_t height, std::size_t width, std::size_t channels, T fill = T{})
      : h_(height), w_(width), c_(channels), data_(height * width * channels, fill) {
    if (channels != 1 && channels != 3)
      throw ShapeError("Image: channels must be 1 or 3, got " + std::to_string(channels));
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t channels() const { return c_; }
  std::size_t pixels() const { return h_ * w_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::span<T> plane(std::size_t c) { return {data_.data() + c * pixels(), pixels()}; }
  std::span<const T> plane(std::size_t c) const { return {data_.data() + c * pixels(), pixels()}; }

  T& operator()(std::size_t c, std::size_t i, std::size_t j) { return data_[(c * h_ + i) * w_ + j]; }
  const T& operator()(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * h_ + i) * w_ + j];
  }

  bool same_shape(const Image& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }

  // Per-channel offset removed by subtract_mean(); empty when none was removed.
  std::vector<T> mean_offset;

  Image& operator+=(const Image& o) {
    require_same(o, "Image +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Image& operator-=(const Image& o) {
    require_same(o, "Image -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Image& operator*=(T a) {
    for (T& v : data_) v *= a;
    return *this;
  }
  friend Image operator+(Image a, const Image& b) { return a += b; }
  friend Image operator-(Image a, const Image& b) { return a -= b; }
  friend Image operator*(T s, Image a) { return a *= s; }

  bool operator==(const Image& o) const = default;

 private:
  void require_same(const Image& o, const char* what) const {
    if (!same_shape(o)) throw ShapeError(std::string(what) + ": shape mismatch");
  }

  std::size_t h_ = 0, w_ = 0, c_ = 0;
  std::vector<T> data_;
};

// M square filters of spatial size k x k with C channels each.
// Layout is [m][c][u][v]; filter(m) is the contiguous C*k*k block of filter m.
template <class T = double>
class FilterBank {
 public:
  using value_type = T;

  FilterBank() = default;
  FilterBank(std::size_t num_filters, std::size_t size, std::size_t channels, T fill = T{})
      : m_(num_filters), k_(size), c_(channels), w_(num_filters * channels * size * size, fill) {
    if (num_filters == 0 || size == 0) throw ShapeError("FilterBank: empty bank");
    if (channels != 1 && channels != 3) throw ShapeError("FilterBank: channels must be 1 or 3");
  }

  std::size_t num_filters() const { return m_; }
  std::size_t size() const { return k_; }
  std::size_t channels() const { return c_; }
  std::size_t filter_len() const { return c_ * k_ * k_; }

  std::span<T> weights() { return w_; }
  std::span<const T> weights() const { return w_; }
  std::span<T> filter(std::size_t m) { return {w_.data() + m * filter_len(), filter_len()}; }
  std::span<const T> filter(std::size_t m) const { return {w_.data() + m * filter_len(), filter_len()}; }
  // The k*k taps of channel c of filter m.
  std::span<const T> taps(std::size_t m, std::size_t c) const {
    return {w_.data() + (m * c_ + c) * k_ * k_, k_ * k_};
  }

  T& operator()(std::size_t m, std::size_t c, std::size_t u, std::size_t v) {
    return w_[((m * c_ + c) * k_ + u) * k_ + v];
  }
  const T& operator()(std::size_t m, std::size_t c, std::size_t u, std::size_t v) const {
    return w_[((m * c_ + c) * k_ + u) * k_ + v];
  }

  bool same_shape(const FilterBank& o) const { return m_ == o.m_ && k_ == o.k_ && c_ == o.c_; }

  FilterBank& operator*=(T a) {
    for (T& v : w_) v *= a;
    return *this;
  }
  friend FilterBank operator*(T a, FilterBank f) { return f *= a; }

  bool operator==(const FilterBank& o) const = default;

 private:
  std::size_t m_ = 0, k_ = 0, c_ = 0;
  std::vector<T> w_;
};

// Spatial flip of every channel of every filter: out(m,c,u,v) = f(m,c,k-1-u,k-1-v).
template <class T>
FilterBank<T> flipped(const FilterBank<T>& f) {
  FilterBank<T> out(f.num_filters(), f.size(), f.channels());
  const std::size_t k = f.size();
  for (std::size_t m = 0; m < f.num_filters(); ++m)
    for (std::size_t c = 0; c < f.channels(); ++c)
      for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v) out(m, c, u, v) = f(m, c, k - 1 - u, k - 1 - v);
  return out;
}

// M-subband latent representation on the stride-s grid of an H x W image.
//
// groups() is 1 for ordinary codes; block-thresholding codes carry one
// coefficient per color channel (groups() == 3). Layout is [m][g][i][j].
template <class T = double>
class SubbandCode {
 public:
  using value_type = T;

  SubbandCode() = default;
  SubbandCode(std::size_t num_subbands, std::size_t groups, std::size_t image_height,
              std::size_t image_width, std::size_t stride)
      : m_(num_subbands),
        g_(groups),
        s_(stride),
        img_h_(image_height),
        img_w_(image_width),
        gh_(stride ? detail::ceil_div(image_height, stride) : 0),
        gw_(stride ? detail::ceil_div(image_width, stride) : 0),
        data_(num_subbands * groups * gh_ * gw_, T{}) {
    if (stride < 1) throw ValueError("SubbandCode: stride must be >= 1");
    if (groups < 1) throw ShapeError("SubbandCode: groups must be >= 1");
  }

  std::size_t num_subbands() const { return m_; }
  std::size_t groups() const { return g_; }
  std::size_t stride() const { return s_; }
  std::size_t grid_height() const { return gh_; }
  std::size_t grid_width() const { return gw_; }
  std::size_t grid_size() const { return gh_ * gw_; }
  // Dimensions of the image the zero-filling operator restores.
  std::size_t image_height() const { return img_h_; }
  std::size_t image_width() const { return img_w_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::span<T> band(std::size_t m, std::size_t g = 0) {
    return {data_.data() + (m * g_ + g) * grid_size(), grid_size()};
  }
  std::span<const T> band(std::size_t m, std::size_t g = 0) const {
    return {data_.data() + (m * g_ + g) * grid_size(), grid_size()};
  }

  T& operator()(std::size_t m, std::size_t g, std::size_t i, std::size_t j) {
    return data_[((m * g_ + g) * gh_ + i) * gw_ + j];
  }
  const T& operator()(std::size_t m, std::size_t g, std::size_t i, std::size_t j) const {
    return data_[((m * g_ + g) * gh_ + i) * gw_ + j];
  }

  bool same_shape(const SubbandCode& o) const {
    return m_ == o.m_ && g_ == o.g_ && s_ == o.s_ && img_h_ == o.img_h_ && img_w_ == o.img_w_;
  }

  SubbandCode& operator+=(const SubbandCode& o) {
    if (!same_shape(o)) throw ShapeError("SubbandCode +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  SubbandCode& operator-=(const SubbandCode& o) {
    if (!same_shape(o)) throw ShapeError("SubbandCode -=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  SubbandCode& operator*=(T a) {
    for (T& v : data_) v *= a;
    return *this;
  }
  friend SubbandCode operator-(SubbandCode a, const SubbandCode& b) { return a -= b; }
  friend SubbandCode operator+(SubbandCode a, const SubbandCode& b) { return a += b; }

  bool operator==(const SubbandCode& o) const = default;

 private:
  std::size_t m_ = 0, g_ = 1, s_ = 1, img_h_ = 0, img_w_ = 0, gh_ = 0, gw_ = 0;
  std::vector<T> data_;
};

// Binary 3-channel color-filter-array mask, planar like Image.
class MaskSignal {
 public:
  MaskSignal() = default;
  MaskSignal(std::size_t height, std::size_t width, std::uint8_t fill = 0)
      : h_(height), w_(width), data_(3 * height * width, fill ? 1 : 0) {}

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  static constexpr std::size_t channels() { return 3; }
  std::span<const std::uint8_t> data() const { return data_; }

  std::uint8_t operator()(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * h_ + i) * w_ + j];
  }
  void set(std::size_t c, std::size_t i, std::size_t j, bool on) { data_[(c * h_ + i) * w_ + j] = on; }

  static MaskSignal ones(std::size_t height, std::size_t width) { return MaskSignal(height, width, 1); }

  bool operator==(const MaskSignal&) const = default;

 private:
  std::size_t h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

// Elementwise m o x.
template <class T>
Image<T> apply_mask(const MaskSignal& m, const Image<T>& x) {
  if (x.channels() != 3 || m.height() != x.height() || m.width() != x.width())
    throw ShapeError("apply_mask: mask and image shapes differ");
  Image<T> out = x;
  auto d = out.data();
  auto md = m.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(md[i]) * d[i];
  return out;
}

// RGGB Bayer pattern: (even,even)->R, (even,odd)->G, (odd,even)->G, (odd,odd)->B.
inline MaskSignal make_bayer_mask(std::size_t height, std::size_t width) {
  if (height < 2 || width < 2) throw ValueError("make_bayer_mask: dims must be >= 2");
  MaskSignal m(height, width);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t c = (i % 2 == 0) ? (j % 2 == 0 ? 0 : 1) : (j % 2 == 0 ? 1 : 2);
      m.set(c, i, j, true);
    }
  return m;
}

// x + n with n i.i.d. N(0, (sigma/255)^2); sigma on the 0-255 scale.
template <class T>
Image<T> awgn(const Image<T>& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ValueError("awgn: sigma must be >= 0");
  Image<T> y = x;
  if (sigma == 0.0) return y;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma / 255.0);
  for (T& v : y.data()) v += static_cast<T>(normal(rng));
  return y;
}

inline constexpr double kPsnrCap = 100.0;

// Peak 1.0 in normalized units; identical inputs give kPsnrCap.
template <class T>
double psnr(const Image<T>& ref, const Image<T>& test) {
  if (!ref.same_shape(test)) throw ShapeError("psnr: shape mismatch");
  if (ref.empty()) throw ShapeError("psnr: empty image");
  double se = 0.0;
  auto a = ref.data();
  auto b = test.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  if (se == 0.0) return kPsnrCap;
  const double mse = se / static_cast<double>(a.size());
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

// Removes the per-channel mean and records it in mean_offset. When a mask is
// given the mean is taken over measured samples only and unmeasured samples
// stay zero.
template <class T>
Image<T> subtract_mean(const Image<T>& x, const MaskSignal* mask = nullptr) {
  Image<T> out = x;
  out.mean_offset.assign(x.channels(), T{});
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto p = out.plane(c);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < p.size(); ++n) {
      if (mask && !mask->data()[c * p.size() + n]) continue;
      sum += p[n];
      ++count;
    }
    const T mu = count ? static_cast<T>(sum / static_cast<double>(count)) : T{};
    for (std::size_t n = 0; n < p.size(); ++n) {
      if (mask && !mask->data()[c * p.size() + n]) continue;
      p[n] -= mu;
    }
    out.mean_offset[c] = mu;
  }
  return out;
}

// Adds a recorded per-channel offset to every sample of x.
template <class T>
Image<T> add_mean(Image<T> x, std::span<const T> offset) {
  if (offset.empty()) return x;
  if (offset.size() != x.channels()) throw ShapeError("add_mean: offset/channel mismatch");
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (T& v : x.plane(c)) v += offset[c];
  x.mean_offset.clear();
  return x;
}

template <class T>
Image<T> clamp01(Image<T> x) {
  for (T& v : x.data()) v = std::clamp(v, T{0}, T{1});
  return x;
}

}  // namespace cdlnet
