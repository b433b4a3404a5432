// Command-line front end: training, inference, evaluation and utilities.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdlnet/cdlnet.hpp"

namespace fs = std::filesystem;
using namespace cdlnet;

namespace {

ModelParams<double> load_model(const std::string& path) { return load_checkpoint(path).model; }

// Reads an input image and adapts it to the model's channel count.
Image<double> read_for_model(const std::string& path, const ModelConfig& cfg) {
  return to_channels(read_pnm<double>(fs::path(path)), cfg.channels, path);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

struct TrainArgs {
  std::string config, out = "run";
  long max_epochs = -1;
  bool resume = false, quiet = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig run = load_config(a.config);
  if (a.max_epochs >= 0) run.train.max_epochs = static_cast<std::size_t>(a.max_epochs);
  run.validate();
  if (run.train.train_dir.empty()) throw ValueError("config: train_dir is not set");

  Dataset train_ds = load_dataset(run.train.train_dir, DatasetRole::train, run.model.channels, run.train.crop_size);
  Dataset val_ds;
  if (run.train.val_dir.empty()) {
    val_ds = split_validation(train_ds, run.train.val_count);
  } else {
    val_ds = load_dataset(run.train.val_dir, DatasetRole::validation, run.model.channels);
  }

  const fs::path out_dir(a.out);
  fs::create_directories(out_dir);
  const fs::path ckpt = out_dir / "model.ckpt";
  write_text(out_dir / "config.txt", to_config_text(run));

  std::optional<CheckpointRecord> resume;
  if (a.resume) resume = load_checkpoint(ckpt, &run.model);

  std::ofstream log(out_dir / "log.csv");
  if (!log) throw IoError("cannot write " + (out_dir / "log.csv").string());
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint_path = ckpt;
  hooks.resume = resume ? &*resume : nullptr;
  if (!a.quiet)
    hooks.on_epoch = [&](const EpochLog& e) {
      std::fprintf(stderr, "epoch %zu  loss %.6g  lr %.3g", e.epoch, e.loss, e.lr);
      if (e.val_psnr) std::fprintf(stderr, "  val %.3f dB", *e.val_psnr);
      std::fprintf(stderr, "\n");
      log.flush();
    };
  std::fprintf(stderr, "training on %zu images, validating on %zu\n", train_ds.size(), val_ds.size());
  const auto res = train(run, train_ds, val_ds, hooks);
  std::printf("checkpoint: %s\nlog: %s\nepochs: %llu\nbacktracks: %u\n", ckpt.string().c_str(),
              (out_dir / "log.csv").string().c_str(), static_cast<unsigned long long>(res.final.epoch),
              res.final.backtracks);
  if (!res.final.val_history.empty()) std::printf("final val_psnr: %.4f\n", res.final.val_history.back());
  return 0;
}

struct InferArgs {
  std::string ckpt, in, out, clean, baseline;
  double sigma = -1.0;
  std::string estimator = "gt";
  std::uint64_t seed = 0;
  bool add_noise = false;
  bool synth_mosaic = false;
};

double require_sigma(const InferArgs& a, const char* why) {
  if (a.sigma < 0.0) throw ValueError(std::string("--sigma is required ") + why);
  return a.sigma;
}

int cmd_denoise(const InferArgs& a) {
  const auto theta = load_model(a.ckpt);
  if (theta.config.task != Task::denoise) throw ValueError("checkpoint " + a.ckpt + " is a jdd model; use `jdd`");
  const NoiseMethod method = parse_noise_method(a.estimator);
  Image<double> x = read_for_model(a.in, theta.config);
  Image<double> y = x;
  if (a.add_noise) y = awgn(x, require_sigma(a, "with --add-noise"), a.seed);
  if (method == NoiseMethod::ground_truth) require_sigma(a, "with --estimator gt");
  const auto r = restore_image(theta, y, method, a.sigma, nullptr);
  write_pnm(fs::path(a.out), r.image);
  std::printf("sigma_hat: %.4f (%s)\n", r.noise.sigma_hat, std::string(to_string(method)).c_str());
  std::optional<Image<double>> ref;
  if (a.add_noise) ref = x;
  if (!a.clean.empty()) ref = read_for_model(a.clean, theta.config);
  if (ref) std::printf("psnr_input: %.4f\npsnr_output: %.4f\n", psnr(*ref, y), psnr(*ref, r.image));
  return 0;
}

int cmd_jdd(const InferArgs& a) {
  const auto theta = load_model(a.ckpt);
  if (theta.config.task != Task::jdd) throw ValueError("checkpoint " + a.ckpt + " is not a jdd model");
  const NoiseMethod method = parse_noise_method(a.estimator);
  if (method == NoiseMethod::ground_truth) require_sigma(a, "with --estimator gt");
  const Image<double> input = read_pnm<double>(fs::path(a.in));
  std::optional<Image<double>> ref;
  Image<double> y;
  if (a.synth_mosaic) {
    if (input.channels() != 3) throw ShapeError("--synth-mosaic needs a color (PPM) input");
    ref = input;
    y = a.sigma > 0.0 ? awgn(input, a.sigma, a.seed) : input;
  } else {
    y = input.channels() == 1 ? cfa_to_mosaic(input) : input;
  }
  const MaskSignal mask = make_bayer_mask(y.height(), y.width());
  y = apply_mask(mask, y);
  const auto r = restore_image(theta, y, method, a.sigma, &mask);
  write_pnm(fs::path(a.out), r.image);
  const Image<double> nn = nn_fill_demosaic(y, mask);
  if (!a.baseline.empty()) write_pnm(fs::path(a.baseline), nn);
  std::printf("sigma_hat: %.4f (%s)\n", r.noise.sigma_hat, std::string(to_string(method)).c_str());
  if (!a.clean.empty()) ref = read_pnm<double>(fs::path(a.clean));
  if (ref) std::printf("psnr_nn_fill: %.4f\npsnr_output: %.4f\n", psnr(*ref, nn), psnr(*ref, r.image));
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, out;
  std::vector<double> sigmas{15.0, 25.0, 50.0};
  std::string estimator = "gt";
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto theta = load_model(a.ckpt);
  const NoiseMethod method = parse_noise_method(a.estimator);
  const Dataset test = load_dataset(a.data, DatasetRole::test, theta.config.channels);
  const auto rep = evaluate(theta, test, a.sigmas, method, a.seed);
  std::ostringstream csv;
  write_eval_csv(csv, rep);
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_text(a.out, csv.str());
    for (const auto& g : rep.aggregates)
      std::printf("sigma %g: input %.3f dB  output %.3f dB  sigma_hat %.3f  (%zu images)\n", g.sigma, g.psnr_input,
                  g.psnr_output, g.sigma_hat, g.count);
  }
  return 0;
}

struct ExportArgs {
  std::string ckpt, out, raw, usage_data, usage_csv;
  double sigma = 25.0;
  std::uint64_t seed = 0;
};

int cmd_export(const ExportArgs& a) {
  const auto theta = load_model(a.ckpt);
  std::vector<std::size_t> order;
  if (!a.usage_data.empty()) {
    const Dataset ds = load_dataset(a.usage_data, DatasetRole::test, theta.config.channels);
    const auto usage = filter_usage(theta, ds, a.sigma, a.seed);
    order = usage_order(usage);
    if (!a.usage_csv.empty()) {
      std::ostringstream csv;
      csv << "rank,filter,usage\n";
      for (std::size_t r = 0; r < order.size(); ++r) csv << r << ',' << order[r] << ',' << usage[order[r]] << '\n';
      write_text(a.usage_csv, csv.str());
    }
  } else if (!a.usage_csv.empty()) {
    throw ValueError("--usage-csv needs --usage-data");
  }
  write_pnm(fs::path(a.out), filter_mosaic(theta.dict, order));
  if (!a.raw.empty()) {
    std::ofstream raw(a.raw, std::ios::binary);
    if (!raw) throw IoError("cannot write " + a.raw);
    write_dict_dump(raw, theta.dict);
  }
  const auto [rows, cols] = mosaic_grid(theta.config.M);
  std::printf("dictionary: %zu filters of %zux%zu, %zux%zu grid -> %s\n", theta.config.M, theta.config.filter_size,
              theta.config.filter_size, rows, cols, a.out.c_str());
  return 0;
}

struct NoiseArgs {
  std::string in;
  std::string estimator = "all";
  double sigma = -1.0;
  std::uint64_t seed = 0;
};

int cmd_estimate_noise(const NoiseArgs& a) {
  Image<double> y = read_pnm<double>(fs::path(a.in));
  if (a.sigma > 0.0) y = awgn(y, a.sigma, a.seed);
  std::vector<NoiseMethod> methods;
  if (a.estimator == "all") {
    methods = {NoiseMethod::mad, NoiseMethod::pca};
  } else {
    methods = {parse_noise_method(a.estimator)};
    if (methods[0] == NoiseMethod::ground_truth) throw ValueError("estimate-noise: choose mad, pca or all");
  }
  std::printf("method,sigma_hat,seconds\n");
  for (auto m : methods) {
    const auto e = estimate_noise(y, m, 0.0);
    std::printf("%s,%.4f,%.6f\n", std::string(to_string(m)).c_str(), e.sigma_hat, e.elapsed);
  }
  return 0;
}

struct SynthArgs {
  std::string out;
  std::size_t count = 10, size = 256, channels = 1;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  if (a.channels != 1 && a.channels != 3) throw ValueError("--channels must be 1 or 3");
  const auto paths = write_synthetic_set(a.out, a.count, a.size, a.size, a.channels, a.seed);
  std::printf("wrote %zu images to %s\n", paths.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolutional dictionary learning network: training and inference"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", ta.config, "key = value run configuration")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "output directory for model.ckpt, log.csv and config.txt");
  train_cmd->add_option("--max-epochs", ta.max_epochs, "override max_epochs from the config");
  train_cmd->add_flag("--resume", ta.resume, "continue from <out>/model.ckpt");
  train_cmd->add_flag("--quiet", ta.quiet, "no per-epoch progress on stderr");

  InferArgs da;
  auto* den_cmd = app.add_subcommand("denoise", "Denoise a PGM/PPM image");
  auto add_infer = [](CLI::App* c, InferArgs& a) {
    c->add_option("--ckpt", a.ckpt, "model checkpoint")->required();
    c->add_option("--in", a.in, "input image")->required();
    c->add_option("--out", a.out, "output image")->required();
    c->add_option("--sigma", a.sigma, "noise level on the 0-255 scale");
    c->add_option("--estimator", a.estimator, "noise level source")->check(CLI::IsMember({"gt", "mad", "pca"}));
    c->add_option("--seed", a.seed, "seed for synthesized noise");
    c->add_option("--clean", a.clean, "clean reference for PSNR reporting");
  };
  add_infer(den_cmd, da);
  den_cmd->add_flag("--add-noise", da.add_noise, "treat --in as clean and add AWGN of level --sigma first");

  InferArgs ja;
  auto* jdd_cmd = app.add_subcommand("jdd", "Joint demosaicking and denoising of an RGGB mosaic");
  add_infer(jdd_cmd, ja);
  jdd_cmd->add_flag("--synth-mosaic", ja.synth_mosaic,
                    "treat --in as a clean RGB image: add noise of level --sigma and sample the RGGB pattern");
  jdd_cmd->add_option("--baseline", ja.baseline, "also write the nearest-neighbor fill here");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR sweep over a test directory");
  eval_cmd->add_option("--ckpt", ea.ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--data", ea.data, "directory of clean test images")->required();
  eval_cmd->add_option("--sigma", ea.sigmas, "noise levels (repeat or comma separated)")->delimiter(',');
  eval_cmd->add_option("--estimator", ea.estimator, "noise level source")->check(CLI::IsMember({"gt", "mad", "pca"}));
  eval_cmd->add_option("--seed", ea.seed, "noise seed");
  eval_cmd->add_option("--out", ea.out, "CSV output (stdout when omitted)");

  ExportArgs xa;
  auto* exp_cmd = app.add_subcommand("export-dict", "Write the learned dictionary as an image");
  exp_cmd->add_option("--ckpt", xa.ckpt, "model checkpoint")->required();
  exp_cmd->add_option("--out", xa.out, "mosaic image (PGM/PPM)")->required();
  exp_cmd->add_option("--raw", xa.raw, "binary dump of the filter taps");
  exp_cmd->add_option("--usage-data", xa.usage_data, "images used to rank filters by mean code magnitude");
  exp_cmd->add_option("--usage-csv", xa.usage_csv, "write the ranking as CSV");
  exp_cmd->add_option("--sigma", xa.sigma, "noise level for the usage ranking");
  exp_cmd->add_option("--seed", xa.seed, "noise seed for the usage ranking");

  NoiseArgs na;
  auto* ne_cmd = app.add_subcommand("estimate-noise", "Estimate the AWGN level of an image");
  ne_cmd->add_option("--in", na.in, "input image")->required();
  ne_cmd->add_option("--estimator", na.estimator, "mad, pca or all")->check(CLI::IsMember({"mad", "pca", "all"}));
  ne_cmd->add_option("--sigma", na.sigma, "add AWGN of this level first");
  ne_cmd->add_option("--seed", na.seed, "seed for the added noise");

  SynthArgs sa;
  auto* syn_cmd = app.add_subcommand("synth", "Generate synthetic piecewise-smooth test scenes");
  syn_cmd->add_option("--out", sa.out, "output directory")->required();
  syn_cmd->add_option("--count", sa.count, "number of images");
  syn_cmd->add_option("--size", sa.size, "side length in pixels");
  syn_cmd->add_option("--channels", sa.channels, "1 (PGM) or 3 (PPM)");
  syn_cmd->add_option("--seed", sa.seed, "scene seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "cdlnet: error: %s\n", e.what());
    return e.get_exit_code();
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*den_cmd) return cmd_denoise(da);
    if (*jdd_cmd) return cmd_jdd(ja);
    if (*eval_cmd) return cmd_eval(ea);
    if (*exp_cmd) return cmd_export(xa);
    if (*ne_cmd) return cmd_estimate_noise(na);
    if (*syn_cmd) return cmd_synth(sa);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cdlnet: error: %s\n", e.what());
    return 1;
  }
  return 1;
}
