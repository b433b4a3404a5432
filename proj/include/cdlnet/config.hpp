#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>

#include "cdlnet/losses.hpp"
#include "cdlnet/model.hpp"

// Training hyperparameters and the flat `key = value` run-configuration file.
namespace cdlnet {

struct TrainConfig {
  double sigma_lo = 25.0;  // noise range, 0-255 scale
  double sigma_hi = 25.0;
  std::size_t batch_size = 10;
  double lr0 = 1e-3;
  double lr_decay = 0.95;
  std::size_t lr_decay_every = 50;  // epochs
  std::size_t max_epochs = 100;
  double backtrack_factor = 0.8;
  double backtrack_threshold_db = 0.5;
  std::size_t val_every = 10;  // epochs between validation / checkpoints
  std::size_t crop_size = 128;
  LossKind loss_kind = LossKind::mse;
  bool augment = true;
  std::uint64_t seed = 0;
  std::string train_dir;
  std::string val_dir;         // empty: hold out val_count training images
  std::size_t val_count = 5;
  double val_sigma = -1.0;     // negative: midpoint of the noise range

  double validation_sigma() const { return val_sigma >= 0.0 ? val_sigma : 0.5 * (sigma_lo + sigma_hi); }

  void validate() const {
    if (!(sigma_lo >= 0.0) || !(sigma_hi >= sigma_lo)) throw ValueError("TrainConfig: need 0 <= sigma_lo <= sigma_hi");
    if (batch_size < 1) throw ValueError("TrainConfig: batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw ValueError("TrainConfig: lr0 must be > 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ValueError("TrainConfig: lr_decay must be in (0, 1]");
    if (lr_decay_every < 1) throw ValueError("TrainConfig: lr_decay_every must be >= 1");
    if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
      throw ValueError("TrainConfig: backtrack_factor must be in (0, 1)");
    if (!(backtrack_threshold_db >= 0.0)) throw ValueError("TrainConfig: backtrack_threshold_db must be >= 0");
    if (val_every < 1) throw ValueError("TrainConfig: val_every must be >= 1");
    if (crop_size < 1) throw ValueError("TrainConfig: crop_size must be >= 1");
  }

  bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
    if (train.loss_kind == LossKind::mcsure && model.task == Task::jdd)
      throw ValueError("config: mcsure loss is only defined for denoising (task = denoise)");
  }
  bool operator==(const RunConfig&) const = default;
};

inline std::string_view to_string(LossKind k) { return k == LossKind::mse ? "mse" : "mcsure"; }
inline std::string_view to_string(Task t) { return t == Task::denoise ? "denoise" : "jdd"; }
inline std::string_view to_string(ThresholdMode m) { return m == ThresholdMode::soft ? "soft" : "block"; }

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ValueError("config: bad value '" + v + "' for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValueError("config: bad boolean '" + v + "' for key '" + key + "'");
}

}  // namespace detail

// Applies one key/value pair; throws ValueError on unknown keys or bad values.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  auto& m = c.model;
  auto& t = c.train;
  if (key == "K") m.K = parse_number<std::size_t>(key, v);
  else if (key == "M") m.M = parse_number<std::size_t>(key, v);
  else if (key == "filter_size") m.filter_size = parse_number<std::size_t>(key, v);
  else if (key == "stride") m.stride = parse_number<std::size_t>(key, v);
  else if (key == "channels") m.channels = parse_number<std::size_t>(key, v);
  else if (key == "task") {
    if (v == "denoise") m.task = Task::denoise;
    else if (v == "jdd") m.task = Task::jdd;
    else throw ValueError("config: task must be denoise or jdd");
  } else if (key == "threshold_mode") {
    if (v == "soft") m.threshold_mode = ThresholdMode::soft;
    else if (v == "block") m.threshold_mode = ThresholdMode::block;
    else throw ValueError("config: threshold_mode must be soft or block");
  } else if (key == "adaptive") m.adaptive = detail::parse_bool(key, v);
  else if (key == "sigma_lo") t.sigma_lo = parse_number<double>(key, v);
  else if (key == "sigma_hi") t.sigma_hi = parse_number<double>(key, v);
  else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(key, v);
  else if (key == "lr0") t.lr0 = parse_number<double>(key, v);
  else if (key == "lr_decay") t.lr_decay = parse_number<double>(key, v);
  else if (key == "lr_decay_every") t.lr_decay_every = parse_number<std::size_t>(key, v);
  else if (key == "max_epochs") t.max_epochs = parse_number<std::size_t>(key, v);
  else if (key == "backtrack_factor") t.backtrack_factor = parse_number<double>(key, v);
  else if (key == "backtrack_threshold_db") t.backtrack_threshold_db = parse_number<double>(key, v);
  else if (key == "val_every") t.val_every = parse_number<std::size_t>(key, v);
  else if (key == "crop_size") t.crop_size = parse_number<std::size_t>(key, v);
  else if (key == "loss") {
    if (v == "mse") t.loss_kind = LossKind::mse;
    else if (v == "mcsure") t.loss_kind = LossKind::mcsure;
    else throw ValueError("config: loss must be mse or mcsure");
  } else if (key == "augment") t.augment = detail::parse_bool(key, v);
  else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "train_dir") t.train_dir = v;
  else if (key == "val_dir") t.val_dir = v;
  else if (key == "val_count") t.val_count = parse_number<std::size_t>(key, v);
  else if (key == "val_sigma") t.val_sigma = parse_number<double>(key, v);
  else throw ValueError("config: unknown key '" + key + "'");
}

// Parses `key = value` lines; '#' starts a comment. Unset keys keep defaults.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ValueError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    set_config_value(base, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  return parse_config(in);
}

// Inverse of parse_config: every field, one per line.
inline std::string to_config_text(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  const auto& m = c.model;
  const auto& t = c.train;
  o << "K = " << m.K << "\nM = " << m.M << "\nfilter_size = " << m.filter_size << "\nstride = " << m.stride
    << "\nchannels = " << m.channels << "\ntask = " << to_string(m.task)
    << "\nthreshold_mode = " << to_string(m.threshold_mode) << "\nadaptive = " << (m.adaptive ? "true" : "false")
    << "\nsigma_lo = " << t.sigma_lo << "\nsigma_hi = " << t.sigma_hi << "\nbatch_size = " << t.batch_size
    << "\nlr0 = " << t.lr0 << "\nlr_decay = " << t.lr_decay << "\nlr_decay_every = " << t.lr_decay_every
    << "\nmax_epochs = " << t.max_epochs << "\nbacktrack_factor = " << t.backtrack_factor
    << "\nbacktrack_threshold_db = " << t.backtrack_threshold_db << "\nval_every = " << t.val_every
    << "\ncrop_size = " << t.crop_size << "\nloss = " << to_string(t.loss_kind)
    << "\naugment = " << (t.augment ? "true" : "false") << "\nseed = " << t.seed << "\ntrain_dir = " << t.train_dir
    << "\nval_dir = " << t.val_dir << "\nval_count = " << t.val_count << "\nval_sigma = " << t.val_sigma << "\n";
  return o.str();
}

}  // namespace cdlnet
