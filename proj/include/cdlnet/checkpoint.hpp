#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cdlnet/model.hpp"
#include "cdlnet/optim.hpp"

// Binary checkpoint persistence. Layout (all integers and floats little-endian):
//
//   magic     8 bytes  "CDLNETCK"
//   version   u32      kCheckpointVersion
//   config    u32 K, u32 M, u32 filter_size, u32 stride, u32 channels,
//             u8 task, u8 threshold_mode, u8 adaptive, u8 reserved (0)
//   progress  u64 epoch, f64 lr, u32 backtracks, u64 adam_step
//   params    u64 count, then count f64 in for_each_array order
//             (per layer A, B, tau0, tau1; then D; banks in [m][c][u][v] order)
//   adam      count f64 first moments, count f64 second moments
//   history   u64 n, n f64 validation PSNRs
//   echo      u64 length, then the run configuration text
namespace cdlnet {

inline constexpr std::array<char, 8> kCheckpointMagic{'C', 'D', 'L', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  ModelParams<double> model;
  AdamState adam;
  std::uint64_t epoch = 0;  // epochs completed
  double lr = 0.0;
  std::uint32_t backtracks = 0;
  std::vector<double> val_history;
  std::string config_echo;
  std::uint32_t version = kCheckpointVersion;

  bool operator==(const CheckpointRecord&) const = default;
};

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}
  template <class U>
  void uint(U v) {
    for (std::size_t b = 0; b < sizeof(U); ++b) out_.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

 private:
  std::ostream& out_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}
  template <class U>
  U uint() {
    std::uint64_t v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<std::uint64_t>(byte()) << (8 * b);
    return static_cast<U>(v);
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  void bytes(char* p, std::size_t n) {
    if (!in_.read(p, static_cast<std::streamsize>(n))) throw FormatError("checkpoint: truncated file");
  }

 private:
  unsigned char byte() {
    const int c = in_.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("checkpoint: truncated file");
    return static_cast<unsigned char>(c);
  }
  std::istream& in_;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const CheckpointRecord& r) {
  detail::LeWriter w(out);
  const ModelConfig& c = r.model.config;
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.uint<std::uint32_t>(kCheckpointVersion);
  for (std::size_t v : {c.K, c.M, c.filter_size, c.stride, c.channels}) w.uint<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.uint<std::uint8_t>(static_cast<std::uint8_t>(c.task));
  w.uint<std::uint8_t>(static_cast<std::uint8_t>(c.threshold_mode));
  w.uint<std::uint8_t>(c.adaptive ? 1 : 0);
  w.uint<std::uint8_t>(0);
  w.uint<std::uint64_t>(r.epoch);
  w.f64(r.lr);
  w.uint<std::uint32_t>(r.backtracks);
  w.uint<std::uint64_t>(r.adam.step);

  std::vector<double> flat;
  for_each_array(r.model, [&](const std::string&, auto s) { flat.insert(flat.end(), s.begin(), s.end()); });
  if (r.adam.m.size() != flat.size() || r.adam.v.size() != flat.size())
    throw ShapeError("checkpoint: optimizer moments do not match the parameters");
  w.uint<std::uint64_t>(flat.size());
  for (double v : flat) w.f64(v);
  for (double v : r.adam.m) w.f64(v);
  for (double v : r.adam.v) w.f64(v);
  w.uint<std::uint64_t>(r.val_history.size());
  for (double v : r.val_history) w.f64(v);
  w.uint<std::uint64_t>(r.config_echo.size());
  w.bytes(r.config_echo.data(), r.config_echo.size());
  if (!out) throw IoError("checkpoint: write failed");
}

// Reads a checkpoint; when `expected` is given its architecture must match.
inline CheckpointRecord read_checkpoint(std::istream& in, const ModelConfig* expected = nullptr) {
  detail::LeReader rd(in);
  std::array<char, 8> magic{};
  rd.bytes(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw FormatError("checkpoint: bad magic bytes (not a checkpoint or unknown version)");
  const auto version = rd.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));

  ModelConfig c;
  c.K = rd.uint<std::uint32_t>();
  c.M = rd.uint<std::uint32_t>();
  c.filter_size = rd.uint<std::uint32_t>();
  c.stride = rd.uint<std::uint32_t>();
  c.channels = rd.uint<std::uint32_t>();
  const auto task = rd.uint<std::uint8_t>(), mode = rd.uint<std::uint8_t>(), adaptive = rd.uint<std::uint8_t>();
  rd.uint<std::uint8_t>();
  if (task > 1 || mode > 1 || adaptive > 1) throw FormatError("checkpoint: corrupt config block");
  c.task = static_cast<Task>(task);
  c.threshold_mode = static_cast<ThresholdMode>(mode);
  c.adaptive = adaptive == 1;
  try {
    c.validate();
  } catch (const ValueError& e) {
    throw FormatError(std::string("checkpoint: corrupt config block: ") + e.what());
  }
  if (expected && !(*expected == c))
    throw ShapeError("checkpoint: architecture (K=" + std::to_string(c.K) + ", M=" + std::to_string(c.M) +
                     ") does not match the requested model (K=" + std::to_string(expected->K) +
                     ", M=" + std::to_string(expected->M) + ")");

  CheckpointRecord r;
  r.version = version;
  r.epoch = rd.uint<std::uint64_t>();
  r.lr = rd.f64();
  r.backtracks = rd.uint<std::uint32_t>();
  r.adam.step = rd.uint<std::uint64_t>();

  // Shapes come from the config; contents are overwritten below.
  r.model.config = c;
  r.model.layers.resize(c.K);
  const std::size_t bc = c.bank_channels();
  for (auto& l : r.model.layers) {
    l.A = FilterBank<double>(c.M, c.filter_size, bc);
    l.B = FilterBank<double>(c.M, c.filter_size, bc);
    l.tau0.assign(c.M, 0.0);
    l.tau1.assign(c.M, 0.0);
  }
  r.model.dict = FilterBank<double>(c.M, c.filter_size, bc);
  std::size_t n = 0;
  for_each_array(r.model, [&](const std::string&, auto s) { n += s.size(); });
  const auto count = rd.uint<std::uint64_t>();
  if (count != n) throw ShapeError("checkpoint: parameter count does not match its config block");
  for_each_array(r.model, [&](const std::string&, std::span<double> s) {
    for (double& v : s) v = rd.f64();
  });
  r.adam.m.resize(n);
  r.adam.v.resize(n);
  for (double& v : r.adam.m) v = rd.f64();
  for (double& v : r.adam.v) v = rd.f64();
  const auto nh = rd.uint<std::uint64_t>();
  if (nh > (1u << 24)) throw FormatError("checkpoint: corrupt history length");
  r.val_history.resize(nh);
  for (double& v : r.val_history) v = rd.f64();
  const auto ne = rd.uint<std::uint64_t>();
  if (ne > (1u << 24)) throw FormatError("checkpoint: corrupt config echo length");
  r.config_echo.resize(ne);
  rd.bytes(r.config_echo.data(), ne);
  return r;
}

inline void save_checkpoint(const CheckpointRecord& r, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    write_checkpoint(out, r);
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointRecord load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in, expected);
}

}  // namespace cdlnet
