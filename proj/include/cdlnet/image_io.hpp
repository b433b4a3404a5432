#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "cdlnet/image.hpp"

// Binary PGM (P5) / PPM (P6) reading and writing, 8-bit samples.
// Samples map to [0,1] by division by 255 and back by rounding to nearest
// with clamping to [0,255].
namespace cdlnet {
namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  std::size_t v = 0;
  if (!(in >> v)) throw FormatError("pnm: malformed header in " + path);
  return v;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

}  // namespace detail

template <class T = double>
Image<T> read_pnm(std::istream& in, const std::string& name = "<stream>") {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw FormatError("pnm: " + name + " is not a binary PGM/PPM (P5/P6)");
  const std::size_t channels = magic[1] == '5' ? 1 : 3;
  const std::size_t w = detail::read_pnm_int(in, name);
  const std::size_t h = detail::read_pnm_int(in, name);
  const std::size_t maxval = detail::read_pnm_int(in, name);
  if (w == 0 || h == 0) throw FormatError("pnm: zero-sized image in " + name);
  if (maxval != 255) throw FormatError("pnm: only 8-bit (maxval 255) supported, " + name);
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> raw(w * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError("pnm: truncated pixel data in " + name);
  Image<T> img(h, w, channels);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < channels; ++c)
        img(c, i, j) = static_cast<T>(raw[(i * w + j) * channels + c]) / T{255};
  return img;
}

template <class T = double>
Image<T> read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_pnm<T>(in, path.string());
}

template <class T>
void write_pnm(std::ostream& out, const Image<T>& img) {
  const std::size_t h = img.height(), w = img.width(), c = img.channels();
  out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<std::uint8_t> raw(h * w * c);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t ch = 0; ch < c; ++ch)
        raw[(i * w + j) * c + ch] = detail::to_byte(static_cast<double>(img(ch, i, j)));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

template <class T>
void write_pnm(const std::filesystem::path& path, const Image<T>& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_pnm(out, img);
  if (!out) throw IoError("write failed: " + path.string());
}

// Round-trips x through 8-bit quantization.
template <class T>
Image<T> quantize8(Image<T> x) {
  for (T& v : x.data()) v = static_cast<T>(detail::to_byte(static_cast<double>(v))) / T{255};
  return x;
}

inline bool is_pnm_path(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

// Sorted list of PGM/PPM files in a directory.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && is_pnm_path(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace cdlnet
