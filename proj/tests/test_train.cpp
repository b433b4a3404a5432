#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "cdlnet/synthetic.hpp"
#include "cdlnet/train.hpp"
#include "test_support.hpp"

using namespace cdlnet;
namespace tu = cdlnet::testing;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model(std::size_t channels = 1) {
  ModelConfig c;
  c.K = 2;
  c.M = 4;
  c.filter_size = 3;
  c.channels = channels;
  return c;
}

Dataset scenes(std::size_t count, std::size_t size, std::size_t channels, std::uint64_t seed,
               DatasetRole role = DatasetRole::train) {
  Dataset ds;
  ds.role = role;
  for (std::size_t n = 0; n < count; ++n) {
    ds.images.push_back(synthetic_scene(size, size, channels, seed + n));
    ds.names.push_back("scene" + std::to_string(n));
  }
  return ds;
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cdlnet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, ParseEveryKeyAndRoundTrip) {
  std::istringstream in(
      "# comment\nK = 5\nM=12\nfilter_size = 5\nstride = 2\nchannels = 3\ntask = jdd\nthreshold_mode = block\n"
      "adaptive = false\nsigma_lo = 1\nsigma_hi = 20\nbatch_size = 4\nlr0 = 2e-3\nlr_decay = 0.9\n"
      "lr_decay_every = 7\nmax_epochs = 3\nbacktrack_factor = 0.5\nbacktrack_threshold_db = 0.25\n"
      "val_every = 2\ncrop_size = 32\nloss = mse\naugment = no\nseed = 99\ntrain_dir = /data/x  # trailing\n"
      "val_dir = \nval_count = 2\nval_sigma = 12.5\n");
  auto c = parse_config(in);
  EXPECT_EQ(c.model.K, 5u);
  EXPECT_EQ(c.model.M, 12u);
  EXPECT_EQ(c.model.stride, 2u);
  EXPECT_EQ(c.model.task, Task::jdd);
  EXPECT_EQ(c.model.threshold_mode, ThresholdMode::block);
  EXPECT_FALSE(c.model.adaptive);
  EXPECT_EQ(c.train.sigma_hi, 20.0);
  EXPECT_EQ(c.train.lr0, 2e-3);
  EXPECT_FALSE(c.train.augment);
  EXPECT_EQ(c.train.seed, 99u);
  EXPECT_EQ(c.train.train_dir, "/data/x");
  EXPECT_EQ(c.train.validation_sigma(), 12.5);
  std::istringstream again(to_config_text(c));
  EXPECT_EQ(parse_config(again), c);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  std::istringstream unknown("K = 3\nlearning_rate = 1\n");
  EXPECT_THROW(parse_config(unknown), ValueError);
  std::istringstream bad("K = three\n");
  EXPECT_THROW(parse_config(bad), ValueError);
  std::istringstream noeq("K 3\n");
  EXPECT_THROW(parse_config(noeq), ValueError);
  std::istringstream range("sigma_lo = 30\nsigma_hi = 20\n");
  EXPECT_THROW(parse_config(range), ValueError);
  std::istringstream sure_jdd("channels = 3\ntask = jdd\nloss = mcsure\n");
  EXPECT_THROW(parse_config(sure_jdd), ValueError);
  EXPECT_THROW(load_config("/nonexistent/cfg.txt"), IoError);
}

TEST(Schedule, StepDecayAndBacktracks) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_schedule(0, cfg), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(49, cfg), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(50, cfg), 9.5e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(100, cfg), 9.025e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(0, cfg, 2), 1e-3 * 0.64);
  double prev = lr_schedule(0, cfg);
  for (std::size_t e = 1; e < 400; ++e) {
    EXPECT_LE(lr_schedule(e, cfg), prev);
    prev = lr_schedule(e, cfg);
  }
}

TEST(Backtrack, DecisionRule) {
  TrainConfig cfg;
  EXPECT_EQ(maybe_backtrack({}, 20.0, cfg), BacktrackAction::save);
  EXPECT_EQ(maybe_backtrack({25.0, 26.0, 27.0}, 28.0, cfg), BacktrackAction::save);
  EXPECT_EQ(maybe_backtrack({25.0, 27.0}, 26.0, cfg), BacktrackAction::restore);
  EXPECT_EQ(maybe_backtrack({25.0, 27.0}, 26.6, cfg), BacktrackAction::save);
  EXPECT_EQ(maybe_backtrack({25.0, 27.0}, 26.0, cfg, false), BacktrackAction::save);
}

TEST(Adam, ZeroGradientKeepsFeasibleParameters) {
  auto theta = init_params(tiny_model(), 1);
  auto state = make_adam_state(theta);
  const auto before = theta;
  adam_step(theta, zero_gradients(theta), state, 1e-3);
  EXPECT_EQ(theta, before);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepClosedForm) {
  // at t = 1: m_hat = g, v_hat = g^2, step = -lr g / (|g| + eps)
  auto theta = init_params(tiny_model(), 2);
  auto grad = zero_gradients(theta);
  grad.layers[0].tau0[1] = 1.0;
  grad.layers[1].tau0[0] = -2.0;
  auto state = make_adam_state(theta);
  const double t01 = theta.layers[0].tau0[1], t10 = theta.layers[1].tau0[0];
  adam_step(theta, grad, state, 1e-3);
  EXPECT_NEAR(theta.layers[0].tau0[1], std::max(0.0, t01 - 1e-3 / (1.0 + 1e-8)), 1e-15);
  EXPECT_NEAR(theta.layers[1].tau0[0], t10 + 1e-3 * 2.0 / (2.0 + 1e-8), 1e-15);
}

TEST(Adam, ProjectionHoldsAfterLargeSteps) {
  auto theta = init_params(tiny_model(), 3);
  auto state = make_adam_state(theta);
  auto grad = zero_gradients(theta);
  Rng rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int it = 0; it < 5; ++it) {
    for_each_array(grad, [&](const std::string&, std::span<double> s) {
      for (double& v : s) v = n(rng);
    });
    adam_step(theta, grad, state, 0.5);
    for (const auto& l : theta.layers) {
      for (std::size_t m = 0; m < l.A.num_filters(); ++m) {
        EXPECT_LE(detail::squared_norm(std::span<const double>(l.A.filter(m))), 1.0 + 1e-12);
        EXPECT_LE(detail::squared_norm(std::span<const double>(l.B.filter(m))), 1.0 + 1e-12);
      }
      for (double t : l.tau0) EXPECT_GE(t, 0.0);
      for (double t : l.tau1) EXPECT_GE(t, 0.0);
    }
  }
}

TEST(Adam, RejectsNonFiniteGradient) {
  auto theta = init_params(tiny_model(), 5);
  auto state = make_adam_state(theta);
  auto grad = zero_gradients(theta);
  grad.dict.weights()[3] = std::nan("");
  const auto before = theta;
  EXPECT_THROW(adam_step(theta, grad, state, 1e-3), NumericError);
  EXPECT_EQ(theta, before);
  EXPECT_EQ(state.step, 0u);
}

TEST(Sampling, DegenerateSigmaAndDeterminism) {
  auto ds = scenes(3, 40, 1, 10);
  TrainConfig cfg;
  cfg.crop_size = 16;
  cfg.sigma_lo = cfg.sigma_hi = 25.0;
  const std::vector<std::size_t> idx{0, 1, 2, 1};
  auto a = sample_batch(ds, idx, cfg, Task::denoise, 7);
  auto b = sample_batch(ds, idx, cfg, Task::denoise, 7);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t n = 0; n < a.size(); ++n) {
    EXPECT_EQ(a[n].sigma, 25.0);
    EXPECT_EQ(a[n].y, b[n].y);
    EXPECT_EQ(a[n].x, b[n].x);
    EXPECT_EQ(a[n].y.height(), 16u);
    // input mean removed; target shifted by the same offset
    double s = 0.0;
    for (double v : a[n].y.data()) s += v;
    EXPECT_NEAR(s, 0.0, 1e-10);
  }
  cfg.crop_size = 41;
  EXPECT_THROW(sample_batch(ds, idx, cfg, Task::denoise, 7), ShapeError);
  ds.role = DatasetRole::validation;
  cfg.crop_size = 16;
  EXPECT_THROW(sample_batch(ds, idx, cfg, Task::denoise, 7), ValueError);
}

TEST(Sampling, NoiseIsAddedAtTheDrawnLevel) {
  Dataset ds;
  ds.images.push_back(Image<double>(64, 64, 1, 0.5));
  ds.names.push_back("flat");
  TrainConfig cfg;
  cfg.crop_size = 64;
  cfg.sigma_lo = 1.0;
  cfg.sigma_hi = 20.0;
  const std::vector<std::size_t> idx(1, 0);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto smp = sample_batch(ds, idx, cfg, Task::denoise, s)[0];
    double se = 0.0;
    for (std::size_t i = 0; i < smp.y.size(); ++i) se += std::pow(smp.y.data()[i] - smp.x.data()[i], 2);
    EXPECT_NEAR(std::sqrt(se / smp.y.size()) * 255.0, smp.sigma, 0.05 * smp.sigma);
  }
}

TEST(Sampling, SigmaHistogramIsUniform) {
  // chi-square test over 10 bins, 10000 draws, 95% critical value with 9 dof
  Dataset ds;
  ds.images.push_back(Image<double>(4, 4, 1, 0.5));
  ds.names.push_back("flat");
  TrainConfig cfg;
  cfg.crop_size = 4;
  cfg.sigma_lo = 1.0;
  cfg.sigma_hi = 20.0;
  std::vector<std::size_t> idx(10000, 0);
  auto batch = sample_batch(ds, idx, cfg, Task::denoise, 11);
  std::vector<double> bins(10, 0.0);
  for (const auto& s : batch) {
    ASSERT_GE(s.sigma, 1.0);
    ASSERT_LE(s.sigma, 20.0);
    bins[std::min<std::size_t>(9, static_cast<std::size_t>((s.sigma - 1.0) / 1.9))] += 1.0;
  }
  double chi2 = 0.0;
  for (double b : bins) chi2 += (b - 1000.0) * (b - 1000.0) / 1000.0;
  EXPECT_LT(chi2, 16.919);
}

TEST(Sampling, JddMosaicAfterNoise) {
  auto ds = scenes(1, 32, 3, 20);
  TrainConfig cfg;
  cfg.crop_size = 16;
  const std::vector<std::size_t> idx(1, 0);
  auto s = sample_batch(ds, idx, cfg, Task::jdd, 3)[0];
  ASSERT_TRUE(s.mask.has_value());
  for (std::size_t n = 0; n < s.y.size(); ++n)
    if (!s.mask->data()[n]) {
      EXPECT_EQ(s.y.data()[n], 0.0);
    }
  EXPECT_EQ(s.x.channels(), 3u);
}

TEST(Augment, OrientationsArePermutations) {
  auto x = tu::random_image(5, 5, 3, 30);
  for (unsigned r = 0; r < 16; ++r) {
    auto o = orient(x, r);
    std::vector<double> a(x.data().begin(), x.data().end()), b(o.data().begin(), o.data().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
  // quarter turn four times is the identity; a quarter turn moves (0,0) to (0,w-1)
  auto y = x;
  for (int k = 0; k < 4; ++k) y = orient(y, 4);
  EXPECT_EQ(y, x);
  EXPECT_EQ(orient(x, 4)(1, 0, 4), x(1, 0, 0));
  EXPECT_EQ(orient(x, 1)(0, 0, 0), x(0, 0, 4));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  CheckpointRecord r;
  r.model = init_params(tiny_model(3), 40);
  r.model.layers[1].tau1[2] = -0.0;
  r.adam = make_adam_state(r.model);
  r.adam.m[3] = 1.25e-300;
  r.adam.v[7] = 3.0;
  r.adam.step = 17;
  r.epoch = 12;
  r.lr = 9.5e-4;
  r.backtracks = 2;
  r.val_history = {20.5, 21.25};
  r.config_echo = "K = 2\n";
  std::stringstream ss;
  write_checkpoint(ss, r);
  auto back = read_checkpoint(ss);
  EXPECT_EQ(back, r);
  EXPECT_TRUE(std::signbit(back.model.layers[1].tau1[2]));
}

TEST(Checkpoint, FileRoundTripAndErrors) {
  const auto dir = scratch_dir("ckpt");
  CheckpointRecord r;
  r.model = init_params(tiny_model(), 41);
  r.adam = make_adam_state(r.model);
  save_checkpoint(r, dir / "a.ckpt");
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt"), r);

  ModelConfig other = tiny_model();
  other.K = 3;
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", &other), ShapeError);

  std::stringstream ss;
  write_checkpoint(ss, r);
  std::string bytes = ss.str();
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream bad_in(bad);
  EXPECT_THROW(read_checkpoint(bad_in), FormatError);
  std::string newer = bytes;
  newer[8] = 2;
  std::istringstream newer_in(newer);
  EXPECT_THROW(read_checkpoint(newer_in), FormatError);
  std::istringstream trunc(bytes.substr(0, bytes.size() - 9));
  EXPECT_THROW(read_checkpoint(trunc), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST(Checkpoint, LittleEndianHeader) {
  CheckpointRecord r;
  r.model = init_params(tiny_model(), 42);
  r.adam = make_adam_state(r.model);
  std::stringstream ss;
  write_checkpoint(ss, r);
  const std::string b = ss.str();
  EXPECT_EQ(b.substr(0, 8), "CDLNETCK");
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 1u);  // version, low byte first
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 2u);  // K
  EXPECT_EQ(static_cast<unsigned char>(b[16]), 4u);  // M
}

TEST(Dataset, LoadSplitAndErrors) {
  const auto dir = scratch_dir("ds");
  write_synthetic_set(dir, 4, 24, 20, 3, 1);
  auto gray = load_dataset(dir, DatasetRole::train, 1, 16);
  EXPECT_EQ(gray.size(), 4u);
  EXPECT_EQ(gray.images[0].channels(), 1u);
  EXPECT_EQ(gray.names[0], "scene_000.ppm");
  auto val = split_validation(gray, 1);
  EXPECT_EQ(gray.size(), 3u);
  EXPECT_EQ(val.names[0], "scene_003.ppm");
  EXPECT_EQ(val.role, DatasetRole::validation);
  EXPECT_THROW(load_dataset(dir, DatasetRole::train, 1, 32), ShapeError);
  EXPECT_THROW(load_dataset(dir / "nope", DatasetRole::train, 1), IoError);
  const auto gdir = scratch_dir("ds_gray");
  write_synthetic_set(gdir, 1, 16, 16, 1, 1);
  EXPECT_THROW(load_dataset(gdir, DatasetRole::train, 3), ShapeError);
  fs::remove_all(dir);
  fs::remove_all(gdir);
}

TEST(Training, ZeroEpochsReturnsInitialisation) {
  RunConfig run;
  run.model = tiny_model();
  run.train.max_epochs = 0;
  run.train.crop_size = 16;
  auto res = train(run, scenes(2, 24, 1, 50), scenes(1, 24, 1, 60, DatasetRole::validation));
  EXPECT_EQ(res.final.model, init_params<double>(run.model, mix_seed(run.train.seed, 1)));
  EXPECT_TRUE(res.history.empty());
  EXPECT_EQ(res.final.epoch, 0u);
}

TEST(Training, DeterministicAndLogged) {
  RunConfig run;
  run.model = tiny_model();
  run.train.max_epochs = 4;
  run.train.val_every = 2;
  run.train.batch_size = 2;
  run.train.crop_size = 16;
  run.train.sigma_lo = 15.0;
  run.train.sigma_hi = 35.0;
  run.train.seed = 3;
  auto tr = scenes(3, 24, 1, 70);
  auto va = scenes(1, 24, 1, 80, DatasetRole::validation);
  std::ostringstream log1, log2;
  TrainHooks h1, h2;
  h1.log = &log1;
  h2.log = &log2;
  auto a = train(run, tr, va, h1);
  auto b = train(run, tr, va, h2);
  EXPECT_EQ(a.final, b.final);
  EXPECT_EQ(log1.str(), log2.str());
  std::istringstream lines(log1.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "epoch,loss,val_psnr,lr,backtracks");
  std::size_t rows = 0, with_val = 0;
  while (std::getline(lines, line)) {
    ++rows;
    if (line.find(",,") == std::string::npos) ++with_val;
  }
  EXPECT_EQ(rows, 4u);
  EXPECT_EQ(with_val, 2u);
  EXPECT_EQ(a.final.val_history.size(), 2u);
  EXPECT_EQ(a.final.epoch, 4u);
}

TEST(Training, McSureLossRuns) {
  RunConfig run;
  run.model = tiny_model();
  run.train.max_epochs = 2;
  run.train.crop_size = 16;
  run.train.loss_kind = LossKind::mcsure;
  auto res = train(run, scenes(2, 24, 1, 90), scenes(1, 24, 1, 91, DatasetRole::validation));
  EXPECT_EQ(res.history.size(), 2u);
  EXPECT_TRUE(std::isfinite(res.history.back().loss));
}

TEST(Training, BacktrackRestoresCheckpointAndCutsRate) {
  RunConfig run;
  run.model = tiny_model();
  run.train.max_epochs = 1;
  run.train.val_every = 1;
  run.train.crop_size = 16;
  auto tr = scenes(2, 24, 1, 100);
  auto va = scenes(1, 24, 1, 101, DatasetRole::validation);
  auto one = train(run, tr, va);
  ASSERT_EQ(one.final.val_history.size(), 1u);

  // resume with an absurd learning rate: every later step wrecks the model
  run.train.max_epochs = 3;
  run.train.lr0 = 50.0;
  TrainHooks hooks;
  hooks.resume = &one.final;
  auto res = train(run, tr, va, hooks);
  ASSERT_EQ(res.history.size(), 2u);
  EXPECT_EQ(res.history[0].backtracks, 0u);
  EXPECT_EQ(res.history[1].backtracks, 1u);
  EXPECT_EQ(res.history[1].lr, 50.0 * 0.8);
  EXPECT_EQ(res.final.backtracks, 2u);
  EXPECT_EQ(res.final.model, one.final.model);
  EXPECT_EQ(res.final.adam, one.final.adam);
  EXPECT_EQ(res.final.val_history.size(), 3u);
  EXPECT_DOUBLE_EQ(res.final.lr, lr_schedule(3, run.train, 2));
}

TEST(Training, DivergenceBeforeFirstValidationFallsBackToInitialisation) {
  RunConfig run;
  run.model = tiny_model();
  run.train.max_epochs = 2;
  run.train.val_every = 2;
  run.train.crop_size = 16;
  run.train.lr0 = 50.0;
  auto res = train(run, scenes(2, 24, 1, 110), scenes(1, 24, 1, 111, DatasetRole::validation));
  ASSERT_EQ(res.history.size(), 2u);
  ASSERT_TRUE(res.history[1].val_psnr.has_value());
  EXPECT_EQ(res.final.backtracks, 1u);
  EXPECT_EQ(res.final.model, init_params<double>(run.model, mix_seed(run.train.seed, 1)));
  EXPECT_EQ(res.final.adam.step, 0u);
  EXPECT_EQ(res.final.val_history.size(), 1u);
}
