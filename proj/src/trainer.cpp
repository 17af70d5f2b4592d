#include "latent_steer/trainer.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>

#include "latent_steer/error.hpp"
#include "latent_steer/losses.hpp"
#include "latent_steer/rng.hpp"

namespace latent_steer {

void TrainConfig::validate() const {
  if (!(beta >= 0 && gamma >= 0 && alpha >= 0 && lambda >= 0)) throw ConfigError("loss weights must be >= 0");
  if (!(lr >= 0)) throw ConfigError("learning rate must be >= 0");
  if (batch < 1 || seq_len < 1) throw ConfigError("batch and seq_len must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0)) {
    throw ConfigError("invalid Adam coefficients");
  }
}

TrainConfig paper_train_config() { return TrainConfig{}; }

TrainConfig desk_train_config() {
  TrainConfig c;
  c.batch = 4;
  c.lr = 1e-3;
  c.epochs = 30;
  return c;
}

CombinedLoss combined_loss(double recon, double kl, double pred, const TrainConfig& config) {
  if (!(config.beta >= 0 && config.gamma >= 0 && config.alpha >= 0)) throw ConfigError("loss weights must be >= 0");
  CombinedLoss c;
  c.recon_term = config.beta * recon;
  c.kl_term = config.gamma * kl;
  c.pred_term = config.alpha * pred;
  c.total = c.recon_term + c.kl_term + c.pred_term;
  return c;
}

std::vector<FrameRange> slice_sequences(std::span<const FrameRange> runs, int seq_len, bool keep_tail) {
  if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
  std::vector<FrameRange> out;
  for (const auto& run : runs) {
    std::size_t b = run.begin;
    for (; b + seq_len <= run.end; b += seq_len) out.push_back({b, b + seq_len});
    if (keep_tail && b < run.end) out.push_back({b, run.end});
  }
  return out;
}

std::vector<FrameRange> partition_folds(std::size_t frames, int folds) {
  if (folds < 2) throw ConfigError("need at least two folds");
  if (frames < static_cast<std::size_t>(folds)) throw ConfigError("fewer frames than folds");
  std::vector<FrameRange> out;
  for (int k = 0; k < folds; ++k) out.push_back({k * frames / folds, (k + 1) * frames / folds});
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
BatchLoss batch_loss_and_grad(const Model<T>& model, std::span<const SceneSample> data,
                              std::span<const FrameRange> sequences, std::span<const double> noise,
                              const TrainConfig& config, std::span<T> grad) {
  const auto& vae = model.vae;
  const auto& ncp = model.ncp;
  const auto m = static_cast<std::size_t>(vae.latent_dim());
  const auto& vc = model.config.vae;
  const bool want_grad = !grad.empty();
  const std::span<const T> params(model.params);
  const T dt = static_cast<T>(model.config.ncp.dt);

  std::size_t n_frames = 0;
  double weight_sum = 0.0;
  for (const auto& seq : sequences) {
    if (seq.end > data.size() || seq.size() == 0) throw DimensionError("sequence range outside the dataset");
    n_frames += seq.size();
    for (std::size_t f = seq.begin; f < seq.end; ++f) weight_sum += pred_weight(data[f].steering, config.lambda);
  }
  if (n_frames == 0) throw ConfigError("empty batch");
  if (noise.size() != n_frames * m) throw DimensionError("noise must hold one latent vector per frame");
  const double inv_n = 1.0 / static_cast<double>(n_frames);

  BatchLoss out;
  VaeNet::EncoderTape<T> enc;
  VaeNet::DecoderTape<T> dec;
  NcpNet::RolloutTape<T> roll;
  const std::size_t img = vae.image_size();
  std::vector<T> x, z, d_z_dec, d_z_ncp, d_yhat, d_mu, d_lv, d_xhat;
  std::size_t noise_at = 0;

  for (const auto& seq : sequences) {
    const int len = static_cast<int>(seq.size());
    x.resize(img * len);
    for (int t = 0; t < len; ++t) {
      const auto& im = data[seq.begin + t].image;
      if (im.h != vc.h || im.w != vc.w || im.c != 3) throw DimensionError("dataset image shape does not match the model");
      pack_image<T, float>(im.data, im.h, im.w, 3, len, t, x);
    }
    vae.template encode<T>(params, x, len, enc);
    z.assign(len * m, T{0});
    double kl = 0.0;
    for (std::size_t i = 0; i < len * m; ++i) {
      const double mu = enc.mu[i], lv = enc.log_var[i];
      z[i] = static_cast<T>(mu + std::exp(0.5 * lv) * noise[noise_at + i]);
      kl += 1.0 - mu * mu - std::exp(lv) + lv;
    }
    out.kl += -0.5 * kl * inv_n;

    vae.template decode<T>(params, z, len, dec);
    const auto& xhat = dec.output();
    d_xhat.resize(xhat.size());
    double se = 0.0;
    for (std::size_t k = 0; k < xhat.size(); ++k) {
      const double d = static_cast<double>(xhat[k]) - static_cast<double>(x[k]);
      se += d * d;
      d_xhat[k] = static_cast<T>(config.beta * 2.0 * d * inv_n);
    }
    out.recon += se * inv_n;

    ncp.template rollout<T>(params, z, len, dt, roll);
    d_yhat.assign(len, T{0});
    for (int t = 0; t < len; ++t) {
      const double y = data[seq.begin + t].steering;
      const double w = pred_weight(y, config.lambda);
      const double d = static_cast<double>(roll.yhat[t]) - y;
      out.pred += w * d * d / weight_sum;
      d_yhat[t] = static_cast<T>(config.alpha * 2.0 * w * d / weight_sum);
    }
    if (want_grad) {
      d_z_dec.assign(len * m, T{0});
      vae.template decode_backward<T>(params, dec, d_xhat, d_z_dec, grad);
      d_z_ncp.assign(len * m, T{0});
      ncp.template rollout_backward<T>(params, roll, d_yhat, dt, d_z_ncp, grad);
      d_mu.resize(len * m);
      d_lv.resize(len * m);
      for (std::size_t i = 0; i < len * m; ++i) {
        const double dz = static_cast<double>(d_z_dec[i]) + static_cast<double>(d_z_ncp[i]);
        const double lv = enc.log_var[i];
        const double sigma = std::exp(0.5 * lv);
        const double eps = noise[noise_at + i];
        d_mu[i] = static_cast<T>(dz + config.gamma * enc.mu[i] * inv_n);
        d_lv[i] = static_cast<T>(dz * eps * 0.5 * sigma + config.gamma * 0.5 * (std::exp(lv) - 1.0) * inv_n);
      }
      vae.template encode_backward<T>(params, enc, d_mu, d_lv, grad);
    }
    noise_at += len * m;
  }
  out.combined = combined_loss(out.recon, out.kl, out.pred, config);
  return out;
}

template BatchLoss batch_loss_and_grad<float>(const Model<float>&, std::span<const SceneSample>,
                                              std::span<const FrameRange>, std::span<const double>,
                                              const TrainConfig&, std::span<float>);
template BatchLoss batch_loss_and_grad<double>(const Model<double>&, std::span<const SceneSample>,
                                               std::span<const FrameRange>, std::span<const double>,
                                               const TrainConfig&, std::span<double>);

template <typename T>
void Adam<T>::step(std::span<T> params, std::span<const T> grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    const double m = b1_ * m_[i] + (1.0 - b1_) * g;
    const double v = b2_ * v_[i] + (1.0 - b2_) * g * g;
    m_[i] = static_cast<T>(m);
    v_[i] = static_cast<T>(v);
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params[i] = static_cast<T>(params[i] - lr * m_hat / (std::sqrt(v_hat) + eps_));
  }
}

template class Adam<float>;
template class Adam<double>;

// ---------------------------------------------------------------------------

namespace {

void check_finite(const BatchLoss& loss, int epoch, int step) {
  const auto where = " at epoch " + std::to_string(epoch) + " step " + std::to_string(step);
  if (!std::isfinite(loss.recon)) throw NumericError("training diverged: reconstruction loss is non-finite" + where);
  if (!std::isfinite(loss.kl)) throw NumericError("training diverged: KL loss is non-finite" + where);
  if (!std::isfinite(loss.pred)) throw NumericError("training diverged: prediction loss is non-finite" + where);
}

}  // namespace

TrainResult train(std::span<const SceneSample> data, std::span<const FrameRange> runs, const Model<float>& init,
                  const TrainConfig& config) {
  config.validate();
  std::size_t frames = 0;
  for (const auto& r : runs) {
    if (r.end > data.size() || r.begin > r.end) throw DimensionError("training run outside the dataset");
    frames += r.size();
  }
  if (frames < static_cast<std::size_t>(config.batch) * config.seq_len) {
    throw ConfigError("training needs at least batch*seq_len = " + std::to_string(config.batch * config.seq_len) +
                      " frames, got " + std::to_string(frames));
  }
  const auto sequences = slice_sequences(runs, config.seq_len, false);
  const auto m = static_cast<std::size_t>(init.vae.latent_dim());

  TrainResult result{init, {}, {}};
  auto& model = result.model;
  Adam<float> adam(model.params.size(), config.adam_beta1, config.adam_beta2, config.adam_eps);
  Rng rng(config.seed);
  std::vector<std::size_t> order(sequences.size());
  std::vector<float> grad(model.params.size());
  std::vector<FrameRange> batch;
  std::vector<double> noise;
  bool first = true;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    EpochLosses acc;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      batch.clear();
      std::size_t batch_frames = 0;
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch); ++k) {
        batch.push_back(sequences[order[k]]);
        batch_frames += sequences[order[k]].size();
      }
      noise.resize(batch_frames * m);
      for (auto& e : noise) e = rng.normal();

      std::fill(grad.begin(), grad.end(), 0.0f);
      const BatchLoss loss = batch_loss_and_grad<float>(model, data, batch, noise, config, grad);
      check_finite(loss, epoch, steps);
      for (float g : grad) {
        if (!std::isfinite(g)) throw NumericError("training diverged: non-finite gradient at epoch " + std::to_string(epoch));
      }
      if (first) {
        result.initial = loss;
        first = false;
      }
      acc.total += loss.combined.total;
      acc.recon += loss.recon;
      acc.kl += loss.kl;
      acc.pred += loss.pred;
      ++steps;

      adam.step(model.params, grad, config.lr);
      model.apply_constraints();
    }
    if (steps > 0) {
      acc.total /= steps;
      acc.recon /= steps;
      acc.kl /= steps;
      acc.pred /= steps;
    }
    result.curve.push_back(acc);
  }
  return result;
}

TrainResult train(std::span<const SceneSample> data, const Model<float>& init, const TrainConfig& config) {
  const FrameRange all{0, data.size()};
  return train(data, std::span<const FrameRange>(&all, 1), init, config);
}

// ---------------------------------------------------------------------------

std::vector<double> ModelPredictor::predict(std::span<const SceneSample> frames) const {
  const auto& vae = model_.vae;
  const auto& vc = model_.config.vae;
  const std::span<const float> params(model_.params);
  const int n = static_cast<int>(frames.size());
  std::vector<float> x(vae.image_size() * n);
  for (int t = 0; t < n; ++t) {
    const auto& img = frames[t].image;
    if (img.h != vc.h || img.w != vc.w || img.c != 3) throw DimensionError("dataset image shape does not match the model");
    pack_image<float, float>(img.data, img.h, img.w, 3, n, t, x);
  }
  VaeNet::EncoderTape<float> tape;
  vae.encode<float>(params, x, n, tape);
  const std::vector<float>& z = tape.mu;
  NcpNet::RolloutTape<float> roll;
  model_.ncp.rollout<float>(params, z, static_cast<int>(frames.size()), static_cast<float>(model_.config.ncp.dt), roll);
  return {roll.yhat.begin(), roll.yhat.end()};
}

EvalStats offline_eval(const SteeringPredictor& predictor, std::span<const SceneSample> data,
                       std::span<const FrameRange> runs, int seq_len) {
  EvalStats stats;
  std::vector<double> all, seq_mse;
  for (const auto& seq : slice_sequences(runs, seq_len, true)) {
    if (seq.end > data.size()) throw DimensionError("evaluation range outside the dataset");
    const auto frames = data.subspan(seq.begin, seq.size());
    const auto yhat = predictor.predict(frames);
    if (yhat.size() != frames.size()) throw DimensionError("predictor returned the wrong number of outputs");
    SequenceErrors errs{seq, {}, 0.0};
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const double d = yhat[t] - frames[t].steering;
      errs.squared_errors.push_back(d * d);
      all.push_back(d * d);
    }
    errs.mse = mean_std(errs.squared_errors).mean;
    seq_mse.push_back(errs.mse);
    stats.sequences.push_back(std::move(errs));
  }
  if (all.empty()) throw ConfigError("nothing to evaluate");
  stats.per_step = mean_std(all);
  stats.per_sequence = mean_std(seq_mse);
  return stats;
}

HoldoutSplit holdout_split(std::size_t frames, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("held-out fraction must lie in (0,1)");
  const auto micro = static_cast<std::size_t>(std::llround(fraction * 1e6));
  const std::size_t test = (micro * frames + 999999) / 1000000;
  if (test == 0 || test >= frames) throw ConfigError("dataset too small for a held-out split");
  return {{0, frames - test}, {frames - test, frames}};
}

double constant_mean_mse(std::span<const SceneSample> data, FrameRange train, FrameRange test) {
  if (train.size() == 0 || test.size() == 0) throw ConfigError("empty range");
  if (train.end > data.size() || test.end > data.size()) throw DimensionError("range outside the dataset");
  double mean = 0.0;
  for (std::size_t i = train.begin; i < train.end; ++i) mean += data[i].steering;
  mean /= static_cast<double>(train.size());
  double se = 0.0;
  for (std::size_t i = test.begin; i < test.end; ++i) se += (data[i].steering - mean) * (data[i].steering - mean);
  return se / static_cast<double>(test.size());
}

CrossValidation tenfold_cv(std::span<const SceneSample> data, const Model<float>& init, const TrainConfig& config,
                           int folds, int max_threads) {
  config.validate();
  const auto segments = partition_folds(data.size(), folds);
  for (const auto& s : segments) {
    if (s.size() < static_cast<std::size_t>(config.seq_len)) {
      throw ConfigError("dataset too small: every fold needs at least seq_len frames");
    }
  }
  CrossValidation cv;
  cv.folds.resize(folds);
  std::vector<std::exception_ptr> errors(folds);

#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, std::min(max_threads, folds)))
  for (int k = 0; k < folds; ++k) {
    try {
      std::vector<FrameRange> train_runs;
      if (segments[k].begin > 0) train_runs.push_back({0, segments[k].begin});
      if (segments[k].end < data.size()) train_runs.push_back({segments[k].end, data.size()});
      const auto trained = train(data, train_runs, init, config);
      const ModelPredictor predictor(trained.model);
      const auto train_stats = offline_eval(predictor, data, train_runs, config.seq_len);
      const auto test_stats = offline_eval(predictor, data, std::span<const FrameRange>(&segments[k], 1), config.seq_len);
      cv.folds[k] = {k, segments[k], train_stats.per_sequence, test_stats.per_sequence};
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<double> train_means, test_means;
  for (const auto& f : cv.folds) {
    train_means.push_back(f.train_error.mean);
    test_means.push_back(f.test_error.mean);
  }
  cv.train_error = mean_std(train_means);
  cv.test_error = mean_std(test_means);
  return cv;
}

}  // namespace latent_steer
