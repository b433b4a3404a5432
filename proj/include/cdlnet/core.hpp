#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>

namespace cdlnet {

// Error hierarchy. Every failure the library reports derives from Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes or channel counts do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A scalar argument is out of its admissible range.
class ValueError : public Error {
 public:
  using Error::Error;
};

// A serialized file is malformed, truncated or carries an unknown version.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// The one random engine used everywhere; all stochastic ops take explicit seeds.
using Rng = std::mt19937_64;

// splitmix64 finalizer, used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(a) ^ (b + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

namespace detail {

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  T acc{};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
T squared_norm(std::span<const T> a) {
  T acc{};
  for (T v : a) acc += v * v;
  return acc;
}

// y += alpha * x
template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

template <class T>
bool all_finite(std::span<const T> a) {
  for (T v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace detail
}  // namespace cdlnet
