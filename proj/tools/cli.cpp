#include "cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "latent_steer/alp.hpp"
#include "latent_steer/checkpoint.hpp"
#include "latent_steer/config_json.hpp"
#include "latent_steer/error.hpp"
#include "latent_steer/figures.hpp"
#include "latent_steer/io_util.hpp"
#include "latent_steer/reports.hpp"
#include "latent_steer/scene.hpp"
#include "latent_steer/trainer.hpp"

namespace latent_steer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFigureScale = 4;
constexpr double kHeldOutFraction = 0.1;

struct Options {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  std::string out, data, ckpt;
  int frames = 2000;
  std::optional<int> epochs, batch, seq_len;
  std::optional<double> lr, beta, gamma, alpha, lambda;
  std::size_t sample = 1000;
  double decile = 0.1;
  std::string dims = "all";
  int frame = 0;
  double threshold_quantile = 0.9;
  int folds = 10;
  std::string mse_reference = "truth";
};

ModelConfig profile_model(const Options& o) {
  return o.profile == "paper" ? paper_model_config() : desk_model_config();
}

TrainConfig profile_train(const Options& o) {
  TrainConfig c = o.profile == "paper" ? paper_train_config() : desk_train_config();
  if (o.epochs) c.epochs = *o.epochs;
  if (o.batch) c.batch = *o.batch;
  if (o.seq_len) c.seq_len = *o.seq_len;
  if (o.lr) c.lr = *o.lr;
  if (o.beta) c.beta = *o.beta;
  if (o.gamma) c.gamma = *o.gamma;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.lambda) c.lambda = *o.lambda;
  c.seed = o.seed;
  c.validate();
  return c;
}

std::vector<int> parse_dims(const std::string& text) {
  std::vector<int> dims;
  if (text == "all") return dims;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("--dims expects 'all' or a comma list of integers");
    dims.push_back(v);
  }
  if (dims.empty()) throw ConfigError("--dims list is empty");
  return dims;
}

int fold_threads() {
  const char* env = std::getenv("LATENT_STEER_THREADS");
  if (!env || !*env) return omp_get_max_threads();
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("LATENT_STEER_THREADS must be a positive integer");
  return static_cast<int>(v);
}

std::vector<SceneSample> load_data(const Options& o) {
  if (o.data.empty()) throw ConfigError("--data is required");
  return read_dataset(o.data);
}

void check_shape(const std::vector<SceneSample>& data, const ModelConfig& config) {
  if (data.empty()) throw DimensionError("dataset has no frames");
  const auto& img = data.front().image;
  if (img.h != config.vae.h || img.w != config.vae.w) {
    throw DimensionError("dataset frames are " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                         " but the model expects " + std::to_string(config.vae.h) + "x" +
                         std::to_string(config.vae.w));
  }
}

Checkpoint load_ckpt(const Options& o) {
  if (o.ckpt.empty()) throw ConfigError("--ckpt is required");
  return load_checkpoint(fs::path(o.ckpt));
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  return fs::path(o.out);
}

std::map<std::string, std::string> png_text(const std::string& title) {
  return {{"Software", "latent-steer"}, {"Title", title}};
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o, const std::vector<std::string>& argv) {
  const auto out = require_out(o);
  const auto mc = profile_model(o);
  SceneConfig sc;
  sc.h = mc.vae.h;
  sc.w = mc.vae.w;
  sc.frames = o.frames;
  sc.seed = o.seed;
  sc.validate();
  const auto data = generate_sequence(sc);
  const auto bytes = encode_dataset(data);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_file_atomic(out, bytes);
  json meta{{"reproducibility", reproducibility_stanza("gen-data", argv, {{"scene", o.seed}}, {{"scene", sc}}, {})},
            {"dataset", {{"path", out.generic_string()}, {"sha256", sha256_hex(bytes)}, {"frames", sc.frames},
                         {"shape", {sc.h, sc.w, 3}}}}};
  write_json(out.string() + ".meta.json", meta);
  std::cout << "wrote " << sc.frames << " frames to " << out.string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, const std::vector<std::string>& argv) {
  const auto out = require_out(o);
  const auto mc = profile_model(o);
  const auto tc = profile_train(o);
  const auto data = load_data(o);
  check_shape(data, mc);
  const auto split = holdout_split(data.size(), kHeldOutFraction);
  const auto init = initialize_model<float>(mc, o.seed);
  const std::span<const SceneSample> all(data);
  const auto result = train(all, std::span<const FrameRange>(&split.train, 1), init, tc);

  Checkpoint ckpt{result.model, tc, o.seed, result.curve};
  save_checkpoint(ckpt, out);

  const ModelPredictor predictor(result.model);
  const auto train_stats = offline_eval(predictor, all, std::span<const FrameRange>(&split.train, 1), tc.seq_len);
  const auto test_stats = offline_eval(predictor, all, std::span<const FrameRange>(&split.test, 1), tc.seq_len);
  const double baseline = constant_mean_mse(all, split.train, split.test);
  json report{
      {"reproducibility",
       reproducibility_stanza("train", argv, {{"init", o.seed}, {"train", tc.seed}},
                              {{"profile", o.profile}, {"model", mc}, {"train", tc}},
                              {{"data", o.data, sha256_file(o.data)}})},
      {"checkpoint_sha256", checkpoint_hash(out)},
      {"split", {{"train", split.train}, {"test", split.test}}},
      {"initial_loss",
       {{"total", result.initial.combined.total}, {"recon", result.initial.recon}, {"kl", result.initial.kl},
        {"pred", result.initial.pred}}},
      {"loss_curve", result.curve},
      {"train_eval", eval_json(train_stats, false)},
      {"test_eval", eval_json(test_stats, false)},
      {"baseline_mse", baseline},
      {"test_to_baseline", test_stats.per_step.mean / baseline}};
  write_json(out / "train_report.json", report);
  std::cout << "held-out MSE " << test_stats.per_step.mean << " (constant-mean baseline " << baseline << ")\n";
  return kExitOk;
}

int cmd_crossval(const Options& o, const std::vector<std::string>& argv) {
  const auto out = require_out(o);
  const auto mc = profile_model(o);
  const auto tc = profile_train(o);
  const auto data = load_data(o);
  check_shape(data, mc);
  const int threads = fold_threads();
  const auto init = initialize_model<float>(mc, o.seed);
  const auto cv = tenfold_cv(data, init, tc, o.folds, threads);
  json report{{"reproducibility",
               reproducibility_stanza("crossval", argv, {{"init", o.seed}, {"train", tc.seed}},
                                      {{"profile", o.profile}, {"model", mc}, {"train", tc}, {"folds", o.folds}},
                                      {{"data", o.data, sha256_file(o.data)}})},
              {"frames", data.size()},
              {"crossval", crossval_json(cv)}};
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_json(out, report);
  std::cout << "test error " << cv.test_error.mean << " +/- " << cv.test_error.std << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, const std::vector<std::string>& argv) {
  const auto out = require_out(o);
  const auto ckpt = load_ckpt(o);
  const auto data = load_data(o);
  check_shape(data, ckpt.model.config);
  const int seq_len = o.seq_len.value_or(ckpt.train.seq_len);
  if (seq_len < 1) throw ConfigError("--seq-len must be >= 1");
  const std::span<const SceneSample> all(data);
  const FrameRange whole{0, data.size()};
  const auto split = holdout_split(data.size(), kHeldOutFraction);
  const ModelPredictor predictor(ckpt.model);
  const auto full = offline_eval(predictor, all, std::span<const FrameRange>(&whole, 1), seq_len);
  const auto test = offline_eval(predictor, all, std::span<const FrameRange>(&split.test, 1), seq_len);
  json report{{"reproducibility",
               reproducibility_stanza("eval", argv, json::object(), {{"seq_len", seq_len}},
                                      {{"ckpt", o.ckpt, checkpoint_hash(o.ckpt)}, {"data", o.data, sha256_file(o.data)}})},
              {"all", eval_json(full, true)},
              {"held_out", {{"range", split.test}, {"stats", eval_json(test, false)},
                            {"baseline_mse", constant_mean_mse(all, split.train, split.test)}}}};
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_json(out, report);
  std::cout << "MSE " << full.per_step.mean << " over " << data.size() << " frames\n";
  return kExitOk;
}

int cmd_alp(const Options& o, const std::vector<std::string>& argv) {
  const auto out = require_out(o);
  const auto ckpt = load_ckpt(o);
  const auto data = load_data(o);
  check_shape(data, ckpt.model.config);
  if (o.frame < 0 || static_cast<std::size_t>(o.frame) >= data.size()) {
    throw IndexError("--frame " + std::to_string(o.frame) + " outside [0, " + std::to_string(data.size()) + ")");
  }
  AlpOptions opts;
  opts.threshold_quantile = o.threshold_quantile;
  opts.dims = parse_dims(o.dims);
  const auto& sample = data[o.frame];
  const auto& model = ckpt.model;
  const OracleSegmenter segmenter(sample.seg_mask);
  const auto results = alp_analyze(sample.image, model, segmenter, opts);

  const std::vector<double> zero(model.config.vae.latent_dim, 0.0);
  const auto code = encode(sample.image, model, zero);
  const SteeringHead head = [&](std::span<const double> z) { return steer_single_step(z, model); };

  fs::create_directories(out);
  write_png(out / "original.png", render_image(sample.image, kFigureScale), png_text("input frame"));
  json dims = json::array();
  for (const auto& r : results) {
    const auto impact = impact_score(code, r.dim, head);
    dims.push_back(alp_dimension_json(r, impact));
    char stem[32];
    std::snprintf(stem, sizeof stem, "dim%02d", r.dim);
    const std::string s(stem);
    write_png(out / (s + "_original.png"), render_image(sample.image, kFigureScale), png_text(s + " input"));
    write_png(out / (s + "_delta.png"), render_heatmap(r.delta, kFigureScale), png_text(s + " normalized difference"));
    write_png(out / (s + "_overlay.png"), render_overlay(sample.image, r.mask, kFigureScale),
              png_text(s + " thresholded regions"));
  }
  json report{{"reproducibility",
               reproducibility_stanza("alp", argv, json::object(),
                                      {{"frame", o.frame}, {"threshold_quantile", o.threshold_quantile},
                                       {"dims", o.dims}, {"segmenter", "ground-truth"}},
                                      {{"ckpt", o.ckpt, checkpoint_hash(o.ckpt)}, {"data", o.data, sha256_file(o.data)}})},
              {"frame", o.frame},
              {"steering", sample.steering},
              {"latent", {{"mu", code.mu}, {"sigma", code.sigma()}}},
              {"latent_dim", model.config.vae.latent_dim},
              {"dimensions", dims}};
  write_json(out / "alp_report.json", report);
  std::cout << "analyzed " << results.size() << " dimensions of frame " << o.frame << "\n";
  return kExitOk;
}

int cmd_impact(const Options& o, const std::vector<std::string>& argv) {
  const auto out = require_out(o);
  const auto ckpt = load_ckpt(o);
  const auto data = load_data(o);
  check_shape(data, ckpt.model.config);
  AggregateOptions opts;
  opts.sample_size = o.sample;
  opts.decile = o.decile;
  opts.reference = o.mse_reference == "unperturbed" ? PerturbReference::kUnperturbed : PerturbReference::kTruth;
  const auto agg = aggregate_impact(std::span<const SceneSample>(data), ckpt.model, opts);

  fs::create_directories(out);
  write_png(out / "perturbation_error.png", render_perturbation_bars(agg.dims),
            png_text("squared steering error at -2 sigma (blue) and +2 sigma (red) per dimension"));
  write_png(out / "sample_error.png", render_box(agg.sample_error_summary), png_text("squared steering error"));
  write_png(out / "impact_deciles.png", render_impact_boxes(agg.dims),
            png_text("impact score per dimension, top (red) and bottom (blue) error decile"));
  json report{{"reproducibility",
               reproducibility_stanza("impact", argv, json::object(),
                                      {{"sample", o.sample}, {"decile", o.decile}, {"mse_reference", o.mse_reference}},
                                      {{"ckpt", o.ckpt, checkpoint_hash(o.ckpt)}, {"data", o.data, sha256_file(o.data)}})},
              {"latent_dim", ckpt.model.config.vae.latent_dim},
              {"aggregate", aggregate_json(agg)}};
  write_json(out / "impact_report.json", report);
  std::cout << "aggregated impact over " << agg.frames.size() << " frames\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Joint VAE + liquid time-constant steering models and latent perturbation analysis", "latent-steer"};
  app.require_subcommand(1);
  Options o;

  auto add_profile = [&](CLI::App* c) {
    c->add_option("--profile", o.profile, "Model and training profile")->check(CLI::IsMember({"paper", "desk"}));
  };
  auto add_training = [&](CLI::App* c) {
    c->add_option("--epochs", o.epochs, "Training epochs");
    c->add_option("--lr", o.lr, "Adam learning rate");
    c->add_option("--beta", o.beta, "Reconstruction loss weight");
    c->add_option("--gamma", o.gamma, "KL loss weight");
    c->add_option("--alpha", o.alpha, "Steering loss weight");
    c->add_option("--lambda", o.lambda, "Steering-magnitude weighting exponent");
    c->add_option("--batch", o.batch, "Sequences per optimizer step");
    c->add_option("--seq-len", o.seq_len, "Frames per sequence");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic road-scene dataset");
  add_profile(gen);
  gen->add_option("--frames", o.frames, "Number of frames")->check(CLI::PositiveNumber);
  gen->add_option("--seed", o.seed, "Scene seed");
  gen->add_option("--out", o.out, "Dataset file")->required();

  auto* tr = app.add_subcommand("train", "Train a model; the last 10% of frames are held out");
  add_profile(tr);
  add_training(tr);
  tr->add_option("--seed", o.seed, "Initialization and shuffling seed");
  tr->add_option("--data", o.data, "Dataset file")->required();
  tr->add_option("--out", o.out, "Checkpoint directory")->required();

  auto* cv = app.add_subcommand("crossval", "Contiguous k-fold cross-validation");
  add_profile(cv);
  add_training(cv);
  cv->add_option("--seed", o.seed, "Initialization and shuffling seed");
  cv->add_option("--folds", o.folds, "Number of folds");
  cv->add_option("--data", o.data, "Dataset file")->required();
  cv->add_option("--out", o.out, "Report file")->required();

  auto* ev = app.add_subcommand("eval", "Offline steering error of a checkpoint");
  ev->add_option("--ckpt", o.ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", o.data, "Dataset file")->required();
  ev->add_option("--seq-len", o.seq_len, "Evaluation sequence length (default: training value)");
  ev->add_option("--out", o.out, "Report file")->required();

  auto* alp = app.add_subcommand("alp", "Latent perturbation analysis of one frame");
  alp->add_option("--ckpt", o.ckpt, "Checkpoint directory")->required();
  alp->add_option("--data", o.data, "Dataset file")->required();
  alp->add_option("--frame", o.frame, "Frame index");
  alp->add_option("--dims", o.dims, "'all' or comma-separated 1-based dimensions");
  alp->add_option("--threshold-quantile", o.threshold_quantile, "Quantile of the difference used as cutoff")
      ->check(CLI::Range(0.0, 1.0));
  alp->add_option("--out", o.out, "Output directory")->required();

  auto* imp = app.add_subcommand("impact", "Steering impact of each latent dimension over a sample");
  imp->add_option("--ckpt", o.ckpt, "Checkpoint directory")->required();
  imp->add_option("--data", o.data, "Dataset file")->required();
  imp->add_option("--sample", o.sample, "Frames in the evenly strided sample")->check(CLI::PositiveNumber);
  imp->add_option("--decile", o.decile, "Fraction of frames in the top and bottom error groups");
  imp->add_option("--mse-reference", o.mse_reference, "Reference of the perturbed error")
      ->check(CLI::IsMember({"truth", "unperturbed"}));
  imp->add_option("--out", o.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, args);
    if (tr->parsed()) return cmd_train(o, args);
    if (cv->parsed()) return cmd_crossval(o, args);
    if (ev->parsed()) return cmd_eval(o, args);
    if (alp->parsed()) return cmd_alp(o, args);
    if (imp->parsed()) return cmd_impact(o, args);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IndexError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace latent_steer
