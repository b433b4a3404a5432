#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "cdlnet/checkpoint.hpp"
#include "cdlnet/config.hpp"
#include "cdlnet/image_io.hpp"
#include "cdlnet/losses.hpp"
#include "cdlnet/model.hpp"
#include "cdlnet/optim.hpp"

// Dataset handling, augmentation and the training loop.
namespace cdlnet {

enum class DatasetRole { train, validation, test };

struct Dataset {
  std::vector<Image<double>> images;
  std::vector<std::string> names;
  DatasetRole role = DatasetRole::train;

  std::size_t size() const { return images.size(); }
};

// Converts a color image to luminance, or passes it through when channel
// counts already agree. Gray images cannot be promoted to color.
inline Image<double> to_channels(const Image<double>& x, std::size_t channels, const std::string& name) {
  if (x.channels() == channels) return x;
  if (channels == 1) {
    Image<double> g(x.height(), x.width(), 1);
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data()[i] = 0.299 * x.plane(0)[i] + 0.587 * x.plane(1)[i] + 0.114 * x.plane(2)[i];
    return g;
  }
  throw ShapeError("image " + name + " is grayscale but the model expects color");
}

// Loads every PGM/PPM in dir (sorted by name).
inline Dataset load_dataset(const std::filesystem::path& dir, DatasetRole role, std::size_t channels,
                            std::size_t min_size = 0) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Dataset ds;
  ds.role = role;
  for (const auto& p : list_images(dir)) {
    auto img = to_channels(read_pnm<double>(p), channels, p.string());
    if (img.height() < min_size || img.width() < min_size)
      throw ShapeError("image " + p.string() + " is smaller than the crop size " + std::to_string(min_size));
    ds.images.push_back(std::move(img));
    ds.names.push_back(p.filename().string());
  }
  if (ds.images.empty()) throw IoError("dataset directory has no PGM/PPM images: " + dir.string());
  return ds;
}

// Moves the last `count` images of a training set into a validation set.
inline Dataset split_validation(Dataset& train, std::size_t count) {
  if (count >= train.size()) throw ValueError("split_validation: need more training images than validation images");
  Dataset val;
  val.role = DatasetRole::validation;
  const auto first = static_cast<std::ptrdiff_t>(train.size() - count);
  val.images.assign(std::make_move_iterator(train.images.begin() + first), std::make_move_iterator(train.images.end()));
  val.names.assign(train.names.begin() + first, train.names.end());
  train.images.resize(train.size() - count);
  train.names.resize(train.images.size());
  return val;
}

struct TrainingSample {
  Image<double> y;                 // network input, mean removed
  Image<double> x;                 // clean target with the same offset removed
  double sigma = 0.0;              // 0-255 scale, given to the model
  std::optional<MaskSignal> mask;  // jdd only
};

// Applies flip/rotation code r (bit 0 h-flip, bit 1 v-flip, bits 2-3 quarter turns).
inline Image<double> orient(const Image<double>& x, unsigned r) {
  const bool hf = r & 1u, vf = r & 2u;
  const unsigned rot = (r >> 2) & 3u;
  const std::size_t h = x.height(), w = x.width();
  const bool swap = rot & 1u;
  Image<double> out(swap ? w : h, swap ? h : w, x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        std::size_t a = vf ? h - 1 - i : i, b = hf ? w - 1 - j : j;  // flipped source coordinates
        std::size_t oi = a, oj = b;
        switch (rot) {
          case 1: oi = b; oj = h - 1 - a; break;
          case 2: oi = h - 1 - a; oj = w - 1 - b; break;
          case 3: oi = w - 1 - b; oj = a; break;
          default: break;
        }
        out(c, oi, oj) = x(c, i, j);
      }
  return out;
}

inline Image<double> crop(const Image<double>& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  if (top + h > x.height() || left + w > x.width()) throw ShapeError("crop: window exceeds the image");
  Image<double> out(h, w, x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out(c, i, j) = x(c, top + i, left + j);
  return out;
}

// Builds one training sample from a clean image: crop, augment, draw sigma,
// add noise, mosaic (jdd), then remove the per-channel mean of the input
// from both input and target.
inline TrainingSample make_sample(const Image<double>& clean, const TrainConfig& cfg, Task task, std::uint64_t seed) {
  const std::size_t cs = cfg.crop_size;
  if (clean.height() < cs || clean.width() < cs)
    throw ShapeError("sample_batch: crop size " + std::to_string(cs) + " exceeds the image");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> top(0, clean.height() - cs), left(0, clean.width() - cs);
  const std::size_t t = top(rng), l = left(rng);
  Image<double> x = crop(clean, t, l, cs, cs);
  if (cfg.augment) x = orient(x, std::uniform_int_distribution<unsigned>(0, 15)(rng));
  const double sigma =
      cfg.sigma_lo == cfg.sigma_hi ? cfg.sigma_lo : std::uniform_real_distribution<double>(cfg.sigma_lo, cfg.sigma_hi)(rng);
  TrainingSample s;
  s.sigma = sigma;
  Image<double> y = awgn(x, sigma, rng());
  if (task == Task::jdd) {
    s.mask = make_bayer_mask(cs, cs);
    y = apply_mask(*s.mask, y);
  }
  s.y = subtract_mean(y, s.mask ? &*s.mask : nullptr);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (double& v : x.plane(c)) v -= s.y.mean_offset[c];
  s.x = std::move(x);
  return s;
}

// Samples for the given image indices; sample n uses seed mix(seed, n) so the
// batch does not depend on how it is assembled.
inline std::vector<TrainingSample> sample_batch(const Dataset& ds, std::span<const std::size_t> indices,
                                                const TrainConfig& cfg, Task task, std::uint64_t seed) {
  if (ds.role != DatasetRole::train) throw ValueError("sample_batch: dataset role must be train");
  std::vector<TrainingSample> batch;
  batch.reserve(indices.size());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    if (indices[n] >= ds.size()) throw ValueError("sample_batch: image index out of range");
    batch.push_back(make_sample(ds.images[indices[n]], cfg, task, mix_seed(seed, n)));
  }
  return batch;
}

// Mean PSNR over a set at one noise level. Noise seeds depend only on seed and
// image index, so repeated evaluations see identical inputs.
inline double validation_psnr(const ModelParams<double>& theta, const Dataset& ds, double sigma, std::uint64_t seed) {
  if (ds.size() == 0) throw ValueError("validation_psnr: empty dataset");
  double acc = 0.0;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto& x = ds.images[n];
    Image<double> y = awgn(x, sigma, mix_seed(seed, n));
    std::optional<MaskSignal> mask;
    if (theta.config.task == Task::jdd) {
      mask = make_bayer_mask(x.height(), x.width());
      y = apply_mask(*mask, y);
    }
    acc += psnr(x, restore(theta, y, sigma, mask ? &*mask : nullptr));
  }
  return acc / static_cast<double>(ds.size());
}

// Batch-mean loss and gradient.
inline LossAndGradient<double> batch_loss(const ModelParams<double>& theta, const std::vector<TrainingSample>& batch,
                                          LossKind kind, std::uint64_t seed) {
  LossAndGradient<double> total{{0.0, kind, {}}, zero_gradients(theta)};
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& s = batch[n];
    auto lg = kind == LossKind::mse
                  ? mse_with_gradient(theta, s.y, s.x, s.sigma, s.mask ? &*s.mask : nullptr)
                  : mcsure_with_gradient(theta, s.y, s.sigma, mix_seed(seed, n));
    total.report.value += lg.report.value;
    for (std::size_t k = 0; k < 3; ++k) total.report.components[k] += lg.report.components[k];
    total.grad += lg.grad;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total.report.value *= inv;
  for (double& c : total.report.components) c *= inv;
  total.grad *= inv;
  return total;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> val_psnr;
  double lr = 0.0;
  std::size_t backtracks = 0;
};

inline constexpr const char* kTrainLogHeader = "epoch,loss,val_psnr,lr,backtracks";

inline void write_log_row(std::ostream& out, const EpochLog& e) {
  char buf[160];
  if (e.val_psnr)
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.6f,%.6g,%zu\n", e.epoch, e.loss, *e.val_psnr, e.lr, e.backtracks);
  else
    std::snprintf(buf, sizeof buf, "%zu,%.10g,,%.6g,%zu\n", e.epoch, e.loss, e.lr, e.backtracks);
  out << buf;
}

struct TrainHooks {
  std::ostream* log = nullptr;                  // CSV log, header written first
  std::filesystem::path checkpoint_path;        // empty: keep checkpoints in memory only
  std::function<void(const EpochLog&)> on_epoch;
  const CheckpointRecord* resume = nullptr;     // continue from this record
};

struct TrainResult {
  CheckpointRecord final;
  std::vector<EpochLog> history;
};

// Adam training with step-decay learning rate and validation backtracking.
// An epoch visits every training image once, in a seeded random order,
// grouped into batches of batch_size.
inline TrainResult train(const RunConfig& run, const Dataset& train_ds, const Dataset& val_ds,
                         const TrainHooks& hooks = {}) {
  run.validate();
  const TrainConfig& cfg = run.train;
  const ModelConfig& mcfg = run.model;
  if (train_ds.size() == 0) throw ValueError("train: empty training set");
  if (val_ds.size() == 0) throw ValueError("train: empty validation set");
  for (const auto& img : train_ds.images)
    if (img.channels() != mcfg.channels) throw ShapeError("train: training image channels differ from the model");

  CheckpointRecord state;
  if (hooks.resume) {
    state = *hooks.resume;
    if (!(state.model.config == mcfg)) throw ShapeError("train: resume checkpoint has a different architecture");
  } else {
    state.model = init_params<double>(mcfg, mix_seed(cfg.seed, 1));
    state.adam = make_adam_state(state.model);
    state.lr = lr_schedule(0, cfg);
  }
  state.config_echo = to_config_text(run);
  // The untrained model is the first restore point, so a run that diverges
  // before its first validation can still back off. Its PSNR joins the
  // backtracking reference but not the logged history.
  std::optional<CheckpointRecord> saved = state;
  std::vector<double> reference;
  const double val_sigma = cfg.validation_sigma();
  const std::uint64_t val_seed = mix_seed(cfg.seed, 2);
  if (!hooks.resume && state.epoch < cfg.max_epochs)
    reference.push_back(validation_psnr(state.model, val_ds, val_sigma, val_seed));

  TrainResult result;
  if (hooks.log) *hooks.log << kTrainLogHeader << "\n";
  std::vector<std::size_t> order(train_ds.size());

  for (std::size_t epoch = state.epoch; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg, state.backtracks);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(cfg.seed, 3, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::uint64_t bseed = mix_seed(cfg.seed, 4, epoch * 1000003 + batches);
      auto batch = sample_batch(train_ds, std::span<const std::size_t>(order).subspan(start, end - start), cfg,
                                mcfg.task, bseed);
      auto lg = batch_loss(state.model, batch, cfg.loss_kind, mix_seed(bseed, 5));
      adam_step(state.model, lg.grad, state.adam, lr);
      loss_sum += lg.report.value;
      ++batches;
    }
    state.epoch = epoch + 1;
    state.lr = lr;

    EpochLog row{epoch, loss_sum / static_cast<double>(batches), std::nullopt, lr, state.backtracks};
    if (state.epoch % cfg.val_every == 0 || state.epoch == cfg.max_epochs) {
      const double v = validation_psnr(state.model, val_ds, val_sigma, val_seed);
      row.val_psnr = v;
      std::vector<double> ref = reference;
      ref.insert(ref.end(), state.val_history.begin(), state.val_history.end());
      const auto action = std::isfinite(v) ? maybe_backtrack(ref, v, cfg) : BacktrackAction::restore;
      state.val_history.push_back(v);
      if (action == BacktrackAction::restore) {
        auto history = std::move(state.val_history);
        const std::uint32_t backtracks = state.backtracks + 1;
        const std::uint64_t done = state.epoch;
        state = *saved;
        state.val_history = std::move(history);
        state.backtracks = backtracks;
        state.epoch = done;
        state.lr = lr_schedule(done, cfg, backtracks);
      } else {
        saved = state;
        if (!hooks.checkpoint_path.empty()) save_checkpoint(state, hooks.checkpoint_path);
      }
    }
    if (hooks.log) write_log_row(*hooks.log, row);
    if (hooks.on_epoch) hooks.on_epoch(row);
    result.history.push_back(row);
  }
  if (!hooks.checkpoint_path.empty()) save_checkpoint(state, hooks.checkpoint_path);
  result.final = std::move(state);
  return result;
}

}  // namespace cdlnet
