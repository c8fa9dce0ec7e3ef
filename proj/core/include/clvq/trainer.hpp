#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "clvq/activation_store.hpp"
#include "clvq/decoder.hpp"
#include "clvq/encoder.hpp"
#include "clvq/kv_text.hpp"
#include "clvq/optim.hpp"
#include "clvq/quantizer.hpp"

namespace clvq {

enum class TrainMode { kCrossLayer, kSingleLayer };
enum class InitStrategy { kSpherical, kKMeansPP, kRandom };

struct TrainConfig {
  int batch_size = 128;
  int epochs = 50;
  double lr = 5e-3;
  double weight_decay = 1e-4;
  double beta = 0.1;
  double gamma = 0.99;
  int codebook_size = 400;
  int top_k = 5;
  double tau = 1.0;
  std::uint64_t seed = 42;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  int early_stop_patience = 10;
  std::optional<double> grad_clip = 1.0;
  TrainMode mode = TrainMode::kCrossLayer;
  InitStrategy init = InitStrategy::kSpherical;
  AlphaMode alpha_mode = AlphaMode::kAdaptiveLimited;
  double fixed_alpha = 0.0;
  DecoderConfig decoder;
  int kmeans_max_iters = 100;
  double kmeans_tol = 1e-4;
  /// Test mode: z_q = z_e, turning the model into plain sequence regression.
  bool bypass_quantizer = false;

  void validate() const;
  /// Writes every field under its config-file key.
  void to_kv(KvText& out) const;
  /// Reads the keys present in `kv` over the defaults. Unrecognized keys are ignored here;
  /// callers that own the whole file use config_keys() to reject them.
  static TrainConfig from_kv(const KvText& kv);
  static std::vector<std::string> config_keys();
};

std::string to_string(TrainMode m);
std::string to_string(InitStrategy s);
std::string to_string(AlphaMode m);
TrainMode parse_train_mode(const std::string& s);
InitStrategy parse_init_strategy(const std::string& s);
/// Accepts adaptive_limited, adaptive_complete, or fixed(<value>) / fixed:<value>.
std::pair<AlphaMode, double> parse_alpha_mode(const std::string& s);

/// Encoder, codebook and decoder of one transcoder.
struct ClvqModel {
  EncoderParams encoder;
  Codebook codebook;
  DecoderParams decoder;

  void collect_trainable(nn::ParamRefs& out);
};

struct LossParts {
  double total = 0.0;
  double reconstruction = 0.0;
  double commitment = 0.0;
};

/// L_rec = mean over positions of |y - y_hat|^2, L_commit = mean of |z_e - sg(z_q)|^2,
/// total = L_rec + beta * L_commit.
LossParts loss_total(const Mat& y, const Mat& y_hat, const Mat& z_e, const Mat& z_q, double beta);

struct OptimizerSnapshot {
  double lr = 0.0;
  std::int64_t steps = 0;
  std::vector<Mat> first_moments;
  std::vector<Mat> second_moments;
};

struct Checkpoint {
  std::string method = "clvqvae";
  TrainConfig config;
  ClvqModel model;
  OptimizerSnapshot optimizer;
  int epoch = 0;
  double best_val_loss = 0.0;
};

struct EpochMetrics {
  double loss = 0.0;
  double reconstruction = 0.0;
  double commitment = 0.0;
  double perplexity = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_perplexity = 0.0;
  double lr = 0.0;
  double alpha = 0.0;
};

/// One structured line: `epoch=1 train_loss=... val_loss=... val_perplexity=... lr=... alpha=...`.
std::string format_epoch_log(const EpochLog& log);

/// Owns the mutable training state of one model. Not copyable: the optimizer
/// refers to parameters inside the owned model.
class Trainer {
 public:
  /// Initializes the model; the codebook is fit to the layer-l tokens of `train`.
  Trainer(const TrainConfig& config, const ActivationDataset& dataset,
          const std::vector<std::size_t>& train);
  explicit Trainer(const Checkpoint& checkpoint);

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// One pass over `records` in shuffled batches: encoder, sampled quantization,
  /// decoder, gradient step on encoder and decoder, then an EMA codebook step.
  EpochMetrics train_epoch(const ActivationDataset& dataset, const std::vector<std::size_t>& records);

  /// Eval-mode loss (argmin codes, no dropout). Perplexity comes from the
  /// top-k sampler with a fixed stream so runs are comparable across epochs.
  EpochMetrics evaluate(const ActivationDataset& dataset, const std::vector<std::size_t>& records) const;

  const ClvqModel& model() const { return *model_; }
  ClvqModel& model() { return *model_; }
  const TrainConfig& config() const { return config_; }
  double lr() const { return optimizer_.lr(); }
  void set_lr(double lr) { optimizer_.set_lr(lr); }

  Checkpoint snapshot(int epoch, double best_val_loss) const;

 private:
  void make_optimizer();
  const MatF& target(const SentenceRecord& r) const;

  TrainConfig config_;
  std::unique_ptr<ClvqModel> model_;
  Adam optimizer_;
  Rng rng_;
};

struct FitResult {
  Checkpoint best;
  std::vector<EpochLog> history;
  int lr_reductions = 0;
  bool stopped_early = false;
};

/// Trains with validation after each epoch, plateau LR reduction and early
/// stopping. Returns the checkpoint with the lowest validation loss.
FitResult fit(const TrainConfig& config, const ActivationDataset& dataset,
              const std::function<void(const EpochLog&)>& on_epoch = {});

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Eval-mode reconstruction of one sentence.
Mat reconstruct(const ClvqModel& model, const Mat& x);

}  // namespace clvq
