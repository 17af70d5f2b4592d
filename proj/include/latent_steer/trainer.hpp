#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "latent_steer/model.hpp"
#include "latent_steer/scene.hpp"
#include "latent_steer/stats.hpp"

namespace latent_steer {

struct TrainConfig {
  double beta = 0.1;    // reconstruction weight
  double gamma = 0.001;  // KL weight
  double alpha = 0.066;  // prediction weight
  double lambda = 1.0;   // exponent of the steering-magnitude weighting
  double lr = 5e-4;
  int batch = 20;
  int seq_len = 16;
  int epochs = 10;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

TrainConfig paper_train_config();
TrainConfig desk_train_config();

struct CombinedLoss {
  double total = 0;
  double recon_term = 0;  // beta * recon
  double kl_term = 0;     // gamma * kl
  double pred_term = 0;   // alpha * pred
};

CombinedLoss combined_loss(double recon, double kl, double pred, const TrainConfig& config);

// Half-open frame interval [begin, end) of a dataset.
struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const FrameRange&) const = default;
};

// Non-overlapping seq_len windows inside each run. A shorter remainder at the
// end of a run is kept only when keep_tail is set.
std::vector<FrameRange> slice_sequences(std::span<const FrameRange> runs, int seq_len, bool keep_tail);

// `folds` contiguous segments; segment k is [floor(k*n/folds), floor((k+1)*n/folds)).
std::vector<FrameRange> partition_folds(std::size_t frames, int folds);

struct BatchLoss {
  double recon = 0, kl = 0, pred = 0;
  CombinedLoss combined;
};

// Loss of one batch of sequences and, if grad is non-empty, its gradient
// (accumulated into grad). noise holds one latent-sized vector per frame in
// sequence order. Each sequence is rolled out from a zero hidden state.
template <typename T>
BatchLoss batch_loss_and_grad(const Model<T>& model, std::span<const SceneSample> data,
                              std::span<const FrameRange> sequences, std::span<const double> noise,
                              const TrainConfig& config, std::span<T> grad);

template <typename T>
class Adam {
 public:
  Adam(std::size_t n, double beta1, double beta2, double eps) : m_(n, T{0}), v_(n, T{0}), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::span<T> params, std::span<const T> grad, double lr);
  int steps() const { return t_; }

 private:
  std::vector<T> m_, v_;
  double b1_, b2_, eps_;
  int t_ = 0;
};

struct EpochLosses {
  double total = 0, recon = 0, kl = 0, pred = 0;
};

struct TrainResult {
  Model<float> model;
  BatchLoss initial;  // first batch, before any update
  std::vector<EpochLosses> curve;
};

// Joint Adam training of encoder, decoder and NCP. Deterministic in
// (dataset, init, config).
TrainResult train(std::span<const SceneSample> data, std::span<const FrameRange> runs, const Model<float>& init,
                  const TrainConfig& config);
TrainResult train(std::span<const SceneSample> data, const Model<float>& init, const TrainConfig& config);

class SteeringPredictor {
 public:
  virtual ~SteeringPredictor() = default;
  // One prediction per frame of a contiguous sequence, state reset at its start.
  virtual std::vector<double> predict(std::span<const SceneSample> frames) const = 0;
};

// Encoder mean (noise off) into an NCP rollout from the zero state.
class ModelPredictor : public SteeringPredictor {
 public:
  explicit ModelPredictor(const Model<float>& model) : model_(model) {}
  std::vector<double> predict(std::span<const SceneSample> frames) const override;

 private:
  const Model<float>& model_;
};

struct SequenceErrors {
  FrameRange range;
  std::vector<double> squared_errors;
  double mse = 0;
};

struct EvalStats {
  MeanStd per_step;      // over every evaluated frame
  MeanStd per_sequence;  // over per-sequence MSEs
  std::vector<SequenceErrors> sequences;
};

// Teacher-forced evaluation: every step consumes the recorded frame.
EvalStats offline_eval(const SteeringPredictor& predictor, std::span<const SceneSample> data,
                       std::span<const FrameRange> runs, int seq_len);

struct HoldoutSplit {
  FrameRange train;
  FrameRange test;
};

// The last `fraction` of the frames (rounded up) is held out.
HoldoutSplit holdout_split(std::size_t frames, double fraction);

// MSE on `test` of predicting the mean steering of `train`.
double constant_mean_mse(std::span<const SceneSample> data, FrameRange train, FrameRange test);

struct FoldReport {
  int fold = 0;
  FrameRange test;
  MeanStd train_error;  // per-sequence MSE over the training segments
  MeanStd test_error;   // per-sequence MSE over the held-out segment
};

struct CrossValidation {
  std::vector<FoldReport> folds;
  MeanStd train_error;  // across folds of the per-fold means
  MeanStd test_error;
};

// Trains one model per fold from `init`; folds run concurrently on up to
// max_threads threads. Reports are ordered by fold.
CrossValidation tenfold_cv(std::span<const SceneSample> data, const Model<float>& init, const TrainConfig& config,
                           int folds = 10, int max_threads = 1);

}  // namespace latent_steer
