#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cdlnet/image.hpp"
#include "cdlnet/image_io.hpp"

// Deterministic piecewise-smooth test scenes: overlapping shapes with flat,
// shaded, striped or checkered fills over a shaded background, with
// anti-aliased edges, quantized to 8 bits. Used where natural photographs
// are unavailable.
namespace cdlnet {

namespace detail {

using Rgb = std::array<double, 3>;

struct Fill {
  int kind = 0;  // 0 flat, 1 linear shade, 2 stripes, 3 checker
  Rgb a{}, b{};
  double freq = 0.0, angle = 0.0, phase = 0.0;

  Rgb at(double y, double x) const {
    const double u = x * std::cos(angle) + y * std::sin(angle);
    double t = 0.0;
    switch (kind) {
      case 1: t = 0.5 + 0.5 * std::tanh(u * freq * 0.1 + phase); break;
      case 2: t = 0.5 + 0.5 * std::sin(u * freq + phase); break;
      case 3: {
        const double v = -x * std::sin(angle) + y * std::cos(angle);
        t = (std::sin(u * freq) * std::sin(v * freq + phase) > 0.0) ? 0.8 : 0.2;
        break;
      }
      default: break;
    }
    return {a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])};
  }
};

struct Shape {
  int kind = 0;  // 0 ellipse, 1 rotated rectangle, 2 triangle
  double cy = 0, cx = 0, ry = 1, rx = 1, rot = 0;
  std::array<double, 6> tri{};
  Fill fill;

  // Approximate signed distance in pixels, negative inside.
  double distance(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    if (kind == 2) {
      double d = -1e30;
      for (int e = 0; e < 3; ++e) {
        const double y0 = tri[2 * e], x0 = tri[2 * e + 1];
        const double y1 = tri[(2 * e + 2) % 6], x1 = tri[(2 * e + 3) % 6];
        const double ny = x1 - x0, nx = -(y1 - y0), len = std::hypot(ny, nx);
        d = std::max(d, ((y - y0) * ny + (x - x0) * nx) / len);
      }
      return d;
    }
    const double u = dx * std::cos(rot) + dy * std::sin(rot);
    const double v = -dx * std::sin(rot) + dy * std::cos(rot);
    if (kind == 1) return std::max(std::abs(u) - rx, std::abs(v) - ry);
    const double r = std::hypot(u / rx, v / ry);
    return (r - 1.0) * std::min(rx, ry);
  }
};

inline Rgb random_color(Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  return {u(rng), u(rng), u(rng)};
}

inline Fill random_fill(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Fill f;
  f.kind = static_cast<int>(u(rng) * 4.0);
  f.a = random_color(rng);
  f.b = random_color(rng);
  f.freq = 0.15 + 0.6 * u(rng);
  f.angle = 3.14159265358979 * u(rng);
  f.phase = 6.28318530717959 * u(rng);
  return f;
}

}  // namespace detail

// One scene of the given size; channels = 1 gives its luminance.
inline Image<double> synthetic_scene(std::size_t h, std::size_t w, std::size_t channels, std::uint64_t seed) {
  if (h == 0 || w == 0) throw ShapeError("synthetic_scene: zero-sized image");
  Rng rng(mix_seed(seed, 0x5ce4e));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double hd = static_cast<double>(h), wd = static_cast<double>(w);

  detail::Fill bg = detail::random_fill(rng);
  bg.kind = 1;
  bg.freq = 0.3;
  const int count = 12 + static_cast<int>(u(rng) * 14.0);
  std::vector<detail::Shape> shapes(static_cast<std::size_t>(count));
  for (auto& s : shapes) {
    s.kind = static_cast<int>(u(rng) * 3.0);
    s.cy = hd * u(rng);
    s.cx = wd * u(rng);
    const double scale = std::min(hd, wd) * (0.05 + 0.3 * u(rng));
    s.ry = scale * (0.4 + 0.6 * u(rng));
    s.rx = scale * (0.4 + 0.6 * u(rng));
    s.rot = 3.14159265358979 * u(rng);
    for (int e = 0; e < 3; ++e) {
      const double a = s.rot + 2.0943951023932 * e + 0.6 * (u(rng) - 0.5);
      s.tri[2 * e] = s.cy + scale * std::sin(a);
      s.tri[2 * e + 1] = s.cx + scale * std::cos(a);
    }
    s.fill = detail::random_fill(rng);
  }

  Image<double> out(h, w, channels);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double y = static_cast<double>(i), x = static_cast<double>(j);
      detail::Rgb c = bg.at(y - hd / 2, x - wd / 2);
      for (const auto& s : shapes) {
        const double cover = std::clamp(0.5 - s.distance(y, x), 0.0, 1.0);  // one-pixel edge ramp
        if (cover <= 0.0) continue;
        const detail::Rgb f = s.fill.at(y - s.cy, x - s.cx);
        for (int k = 0; k < 3; ++k) c[k] += cover * (f[k] - c[k]);
      }
      if (channels == 1) {
        out(0, i, j) = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
      } else {
        for (std::size_t k = 0; k < 3; ++k) out(k, i, j) = c[k];
      }
    }
  return quantize8(clamp01(out));
}

// Writes count scenes as scene_000.pgm/ppm ... into dir and returns their paths.
inline std::vector<std::filesystem::path> write_synthetic_set(const std::filesystem::path& dir, std::size_t count,
                                                              std::size_t h, std::size_t w, std::size_t channels,
                                                              std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t n = 0; n < count; ++n) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03zu.%s", n, channels == 1 ? "pgm" : "ppm");
    paths.push_back(dir / name);
    write_pnm(paths.back(), synthetic_scene(h, w, channels, mix_seed(seed, n)));
  }
  return paths;
}

}  // namespace cdlnet
