#include "clvq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "clvq/archive.hpp"
#include "clvq/error.hpp"

namespace clvq {
namespace {

constexpr std::uint64_t kValidationStream = 0x9e3779b97f4a7c15ULL;

std::string bool_str(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw UsageError("invalid boolean for " + key + ": '" + s + "'");
}

}  // namespace

std::string to_string(TrainMode m) {
  return m == TrainMode::kCrossLayer ? "cross_layer" : "single_layer";
}

std::string to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::kSpherical: return "spherical";
    case InitStrategy::kKMeansPP: return "kmeanspp";
    case InitStrategy::kRandom: return "random";
  }
  return "spherical";
}

std::string to_string(AlphaMode m) {
  switch (m) {
    case AlphaMode::kAdaptiveLimited: return "adaptive_limited";
    case AlphaMode::kAdaptiveComplete: return "adaptive_complete";
    case AlphaMode::kFixed: return "fixed";
  }
  return "adaptive_limited";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "cross_layer") return TrainMode::kCrossLayer;
  if (s == "single_layer") return TrainMode::kSingleLayer;
  throw UsageError("unknown mode '" + s + "' (expected cross_layer|single_layer)");
}

InitStrategy parse_init_strategy(const std::string& s) {
  if (s == "spherical") return InitStrategy::kSpherical;
  if (s == "kmeanspp") return InitStrategy::kKMeansPP;
  if (s == "random") return InitStrategy::kRandom;
  throw UsageError("unknown init '" + s + "' (expected spherical|kmeanspp|random)");
}

std::pair<AlphaMode, double> parse_alpha_mode(const std::string& s) {
  if (s == "adaptive_limited") return {AlphaMode::kAdaptiveLimited, 0.0};
  if (s == "adaptive_complete") return {AlphaMode::kAdaptiveComplete, 0.0};
  std::string value;
  if (s.rfind("fixed(", 0) == 0 && s.back() == ')') {
    value = s.substr(6, s.size() - 7);
  } else if (s.rfind("fixed:", 0) == 0) {
    value = s.substr(6);
  } else {
    throw UsageError("unknown alpha mode '" + s +
                     "' (expected adaptive_limited|adaptive_complete|fixed(<alpha>))");
  }
  double alpha = 0.0;
  try {
    alpha = parse_double(value, "alpha_mode");
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (alpha < 0.0 || alpha > 1.0) throw UsageError("fixed alpha must lie in [0, 1]");
  return {AlphaMode::kFixed, alpha};
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw UsageError("batch_size must be positive");
  if (epochs < 1) throw UsageError("epochs must be positive");
  if (lr < 0.0) throw UsageError("lr must be non-negative");
  if (weight_decay < 0.0) throw UsageError("weight_decay must be non-negative");
  if (beta < 0.0) throw UsageError("beta must be non-negative");
  if (!(gamma > 0.0 && gamma < 1.0)) throw UsageError("gamma must lie in (0, 1)");
  if (codebook_size < 1) throw UsageError("codebook_size must be positive");
  SamplerConfig{top_k, tau, seed}.validate(codebook_size);
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) {
    throw UsageError("plateau_factor must lie in (0, 1]");
  }
  if (plateau_patience < 0 || early_stop_patience < 1) {
    throw UsageError("patience values must be positive");
  }
  if (grad_clip && !(*grad_clip > 0.0)) throw UsageError("grad_clip must be positive");
  if (alpha_mode == AlphaMode::kFixed && (fixed_alpha < 0.0 || fixed_alpha > 1.0)) {
    throw UsageError("fixed alpha must lie in [0, 1]");
  }
  if (kmeans_max_iters < 1 || !(kmeans_tol >= 0.0)) throw UsageError("invalid k-means budget");
}

std::vector<std::string> TrainConfig::config_keys() {
  return {"batch_size", "epochs", "lr", "weight_decay", "beta", "gamma", "codebook_size",
          "top_k", "tau", "seed", "plateau_factor", "plateau_patience", "early_stop_patience",
          "grad_clip", "mode", "init", "alpha_mode", "decoder_layers", "decoder_heads",
          "ffn_dim", "dropout", "kmeans_max_iters", "kmeans_tol", "bypass_quantizer"};
}

void TrainConfig::to_kv(KvText& kv) const {
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("epochs", std::to_string(epochs));
  kv.set("lr", format_double(lr));
  kv.set("weight_decay", format_double(weight_decay));
  kv.set("beta", format_double(beta));
  kv.set("gamma", format_double(gamma));
  kv.set("codebook_size", std::to_string(codebook_size));
  kv.set("top_k", std::to_string(top_k));
  kv.set("tau", format_double(tau));
  kv.set("seed", std::to_string(seed));
  kv.set("plateau_factor", format_double(plateau_factor));
  kv.set("plateau_patience", std::to_string(plateau_patience));
  kv.set("early_stop_patience", std::to_string(early_stop_patience));
  kv.set("grad_clip", grad_clip ? format_double(*grad_clip) : "none");
  kv.set("mode", to_string(mode));
  kv.set("init", to_string(init));
  kv.set("alpha_mode", alpha_mode == AlphaMode::kFixed
                           ? "fixed(" + format_double(fixed_alpha) + ")"
                           : to_string(alpha_mode));
  kv.set("decoder_layers", std::to_string(decoder.num_layers));
  kv.set("decoder_heads", std::to_string(decoder.num_heads));
  kv.set("ffn_dim", std::to_string(decoder.ffn_dim));
  kv.set("dropout", format_double(decoder.dropout));
  kv.set("kmeans_max_iters", std::to_string(kmeans_max_iters));
  kv.set("kmeans_tol", format_double(kmeans_tol));
  kv.set("bypass_quantizer", bool_str(bypass_quantizer));
}

TrainConfig TrainConfig::from_kv(const KvText& kv) {
  TrainConfig c;
  auto int_of = [&](const char* key, int& field) {
    if (auto v = kv.find(key)) field = static_cast<int>(parse_int(*v, key));
  };
  auto dbl_of = [&](const char* key, double& field) {
    if (auto v = kv.find(key)) field = parse_double(*v, key);
  };
  int_of("batch_size", c.batch_size);
  int_of("epochs", c.epochs);
  dbl_of("lr", c.lr);
  dbl_of("weight_decay", c.weight_decay);
  dbl_of("beta", c.beta);
  dbl_of("gamma", c.gamma);
  int_of("codebook_size", c.codebook_size);
  int_of("top_k", c.top_k);
  dbl_of("tau", c.tau);
  if (auto v = kv.find("seed")) {
    const auto s = parse_int(*v, "seed");
    if (s < 0) throw UsageError("seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
  }
  dbl_of("plateau_factor", c.plateau_factor);
  int_of("plateau_patience", c.plateau_patience);
  int_of("early_stop_patience", c.early_stop_patience);
  if (auto v = kv.find("grad_clip")) {
    if (*v == "none") {
      c.grad_clip.reset();
    } else {
      c.grad_clip = parse_double(*v, "grad_clip");
    }
  }
  if (auto v = kv.find("mode")) c.mode = parse_train_mode(*v);
  if (auto v = kv.find("init")) c.init = parse_init_strategy(*v);
  if (auto v = kv.find("alpha_mode")) std::tie(c.alpha_mode, c.fixed_alpha) = parse_alpha_mode(*v);
  int_of("decoder_layers", c.decoder.num_layers);
  int_of("decoder_heads", c.decoder.num_heads);
  int_of("ffn_dim", c.decoder.ffn_dim);
  dbl_of("dropout", c.decoder.dropout);
  int_of("kmeans_max_iters", c.kmeans_max_iters);
  dbl_of("kmeans_tol", c.kmeans_tol);
  if (auto v = kv.find("bypass_quantizer")) c.bypass_quantizer = parse_bool(*v, "bypass_quantizer");
  return c;
}

void ClvqModel::collect_trainable(nn::ParamRefs& out) {
  encoder.collect(out);
  decoder.collect(out);
}

LossParts loss_total(const Mat& y, const Mat& y_hat, const Mat& z_e, const Mat& z_q, double beta) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols() || z_e.rows() != z_q.rows() ||
      z_e.cols() != z_q.cols() || y.rows() != z_e.rows()) {
    throw ShapeError("loss inputs must share one T x d shape");
  }
  const double positions = static_cast<double>(std::max<Eigen::Index>(y.rows(), 1));
  LossParts out;
  out.reconstruction = (y - y_hat).squaredNorm() / positions;
  out.commitment = (z_e - z_q).squaredNorm() / positions;
  out.total = out.reconstruction + beta * out.commitment;
  return out;
}

std::string format_epoch_log(const EpochLog& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "epoch=%d train_loss=%.9g val_loss=%.9g val_perplexity=%.6f lr=%.6g alpha=%.6f",
                l.epoch, l.train_loss, l.val_loss, l.val_perplexity, l.lr, l.alpha);
  return buf;
}

Trainer::Trainer(const TrainConfig& config, const ActivationDataset& ds,
                 const std::vector<std::size_t>& train)
    : config_(config), model_(std::make_unique<ClvqModel>()), rng_(config.seed) {
  config_.validate();
  if (train.empty()) throw UsageError("training split is empty");
  const Eigen::Index d = ds.manifest.embedding_dim;
  model_->encoder = EncoderParams::identity_init(d, config_.alpha_mode, config_.fixed_alpha);

  const Mat tokens = stack_tokens(ds, train);
  switch (config_.init) {
    case InitStrategy::kSpherical:
      model_->codebook = init_spherical_kmeanspp(tokens, config_.codebook_size, config_.seed,
                                                 config_.kmeans_max_iters, config_.kmeans_tol,
                                                 config_.gamma);
      break;
    case InitStrategy::kKMeansPP:
      model_->codebook = init_kmeanspp(tokens, config_.codebook_size, config_.seed,
                                       config_.kmeans_max_iters, config_.kmeans_tol, config_.gamma);
      break;
    case InitStrategy::kRandom:
      model_->codebook = init_random(tokens, config_.codebook_size, config_.seed, config_.gamma);
      break;
  }
  model_->decoder = DecoderParams::init(d, config_.decoder, rng_);
  make_optimizer();
}

Trainer::Trainer(const Checkpoint& ck)
    : config_(ck.config), model_(std::make_unique<ClvqModel>(ck.model)), rng_(ck.config.seed) {
  make_optimizer();
  if (!ck.optimizer.first_moments.empty()) {
    if (ck.optimizer.first_moments.size() != optimizer_.first_moments().size()) {
      throw DataError("optimizer state does not match the model parameters");
    }
    optimizer_.first_moments() = ck.optimizer.first_moments;
    optimizer_.second_moments() = ck.optimizer.second_moments;
    optimizer_.set_steps(ck.optimizer.steps);
  }
  if (ck.optimizer.lr > 0.0) optimizer_.set_lr(ck.optimizer.lr);
  // Advance the stream so a resumed run does not replay epoch-1 randomness.
  rng_.discard(static_cast<unsigned long long>(ck.epoch) * 1000003ULL);
}

void Trainer::make_optimizer() {
  nn::ParamRefs params;
  model_->collect_trainable(params);
  optimizer_ = Adam(params, AdamConfig{config_.lr, 0.9, 0.999, 1e-8, config_.weight_decay});
}

const MatF& Trainer::target(const SentenceRecord& r) const {
  return config_.mode == TrainMode::kSingleLayer ? r.acts_l : r.acts_h;
}

EpochMetrics Trainer::train_epoch(const ActivationDataset& ds,
                                  const std::vector<std::size_t>& records) {
  if (records.empty()) throw UsageError("training split is empty");
  std::vector<std::size_t> order = records;
  std::shuffle(order.begin(), order.end(), rng_);
  const SamplerConfig sampler{config_.top_k, config_.tau, config_.seed};
  ClvqModel& m = *model_;
  m.codebook.reset_usage();

  double loss_sum = 0.0, rec_sum = 0.0, commit_sum = 0.0, positions_total = 0.0;
  const auto batch = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0, b = 0; start < order.size(); start += batch, ++b) {
    const std::size_t stop = std::min(order.size(), start + batch);
    double positions = 0.0;
    for (std::size_t i = start; i < stop; ++i) {
      positions += static_cast<double>(ds.records[order[i]].length());
    }
    optimizer_.zero_grad();

    Mat batch_z(static_cast<Eigen::Index>(positions), m.codebook.dim());
    std::vector<int> batch_idx;
    batch_idx.reserve(static_cast<std::size_t>(positions));
    double batch_rec = 0.0, batch_commit = 0.0;
    for (std::size_t i = start; i < stop; ++i) {
      const SentenceRecord& r = ds.records[order[i]];
      const Mat x = to_compute(r.acts_l);
      const Mat y = to_compute(target(r));
      EncoderCache enc_cache;
      const Mat z_e = encoder_forward(m.encoder, x, &enc_cache);
      Quantized q = quantize_batch(z_e, m.codebook, sampler, Mode::kTrain, rng_);
      const Mat& z_q = config_.bypass_quantizer ? z_e : q.z_q;
      DecoderCache dec_cache;
      const Mat y_hat = decoder_forward(m.decoder, z_q, z_e, {}, Mode::kTrain, rng_, &dec_cache);

      batch_rec += (y - y_hat).squaredNorm();
      batch_commit += (z_e - z_q).squaredNorm();
      const Mat dy = (2.0 / positions) * (y_hat - y);
      DecoderGrads g = decoder_backward(m.decoder, dec_cache, dy);
      Mat dz = straight_through_backward(g.d_input) + g.d_memory;
      if (!config_.bypass_quantizer) dz += (2.0 * config_.beta / positions) * (z_e - z_q);
      encoder_backward(m.encoder, enc_cache, dz);

      batch_z.middleRows(static_cast<Eigen::Index>(batch_idx.size()), z_e.rows()) = z_e;
      batch_idx.insert(batch_idx.end(), q.indices.begin(), q.indices.end());
    }
    const double batch_loss = (batch_rec + config_.beta * batch_commit) / positions;
    if (!std::isfinite(batch_loss)) {
      throw NumericError("non-finite loss in batch " + std::to_string(b));
    }
    nn::ParamRefs params = optimizer_.params();
    if (config_.grad_clip) nn::clip_grad_norm(params, *config_.grad_clip);
    optimizer_.step();
    ema_update(m.codebook, batch_z, batch_idx);
    m.codebook.record_usage(batch_idx);

    loss_sum += batch_loss * positions;
    rec_sum += batch_rec;
    commit_sum += batch_commit;
    positions_total += positions;
  }
  EpochMetrics out;
  out.loss = loss_sum / positions_total;
  out.reconstruction = rec_sum / positions_total;
  out.commitment = commit_sum / positions_total;
  out.perplexity = perplexity(m.codebook.usage);
  return out;
}

EpochMetrics Trainer::evaluate(const ActivationDataset& ds,
                               const std::vector<std::size_t>& records) const {
  if (records.empty()) throw UsageError("evaluation split is empty");
  const ClvqModel& m = *model_;
  const SamplerConfig sampler{config_.top_k, config_.tau, config_.seed};
  Rng eval_rng(config_.seed ^ kValidationStream);
  Rng unused(0);
  std::vector<std::int64_t> usage(static_cast<std::size_t>(m.codebook.size()), 0);
  double rec = 0.0, commit = 0.0, positions = 0.0;
  for (auto i : records) {
    const SentenceRecord& r = ds.records[i];
    const Mat x = to_compute(r.acts_l);
    const Mat y = to_compute(target(r));
    const Mat z_e = encoder_forward(m.encoder, x);
    const Quantized q = quantize_batch(z_e, m.codebook, sampler, Mode::kEval, unused);
    const Mat& z_q = config_.bypass_quantizer ? z_e : q.z_q;
    const Mat y_hat = decoder_forward(m.decoder, z_q, z_e, {}, Mode::kEval, unused);
    rec += (y - y_hat).squaredNorm();
    commit += (z_e - z_q).squaredNorm();
    positions += static_cast<double>(r.length());
    for (Eigen::Index t = 0; t < z_e.rows(); ++t) {
      ++usage[static_cast<std::size_t>(sample_code(z_e.row(t), m.codebook, sampler, eval_rng).index)];
    }
  }
  EpochMetrics out;
  out.reconstruction = rec / positions;
  out.commitment = commit / positions;
  out.loss = out.reconstruction + config_.beta * out.commitment;
  out.perplexity = perplexity(usage);
  return out;
}

Checkpoint Trainer::snapshot(int epoch, double best_val_loss) const {
  Checkpoint ck;
  ck.method = config_.mode == TrainMode::kSingleLayer ? "single_layer" : "clvqvae";
  ck.config = config_;
  ck.model = *model_;
  ck.optimizer.lr = optimizer_.lr();
  ck.optimizer.steps = optimizer_.steps();
  ck.optimizer.first_moments = optimizer_.first_moments();
  ck.optimizer.second_moments = optimizer_.second_moments();
  ck.epoch = epoch;
  ck.best_val_loss = best_val_loss;
  return ck;
}

FitResult fit(const TrainConfig& config, const ActivationDataset& ds,
              const std::function<void(const EpochLog&)>& on_epoch) {
  const auto train = ds.indices(Split::kTrain);
  if (train.empty()) throw UsageError("training split is empty");
  auto val = ds.indices(Split::kVal);
  // Without a validation split the training records are monitored instead.
  if (val.empty()) val = train;

  Trainer trainer(config, ds, train);
  PlateauScheduler plateau(config.plateau_factor, config.plateau_patience);
  EarlyStopping stopper(config.early_stop_patience);
  FitResult result;
  bool have_best = false;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const EpochMetrics tr = trainer.train_epoch(ds, train);
    const EpochMetrics va = trainer.evaluate(ds, val);
    if (!std::isfinite(va.loss)) throw NumericError("non-finite validation loss");
    EpochLog log{epoch, tr.loss, va.loss, va.perplexity, trainer.lr(),
                 effective_alpha(trainer.model().encoder)};
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);

    const bool stop = stopper.observe(va.loss);
    if (stopper.improved() || !have_best) {
      result.best = trainer.snapshot(epoch, stopper.best());
      have_best = true;
    }
    if (stop) {
      result.stopped_early = epoch < config.epochs;
      break;
    }
    trainer.set_lr(plateau.observe(va.loss, trainer.lr()));
  }
  result.lr_reductions = plateau.reductions();
  return result;
}

namespace {

nn::ParamRefs named_params(ClvqModel& m) {
  nn::ParamRefs refs;
  m.encoder.collect(refs);
  // Fixed-alpha encoders do not train the logit but it is still part of the state.
  if (m.encoder.mode == AlphaMode::kFixed) refs.push_back(&m.encoder.logit);
  m.decoder.collect(refs);
  return refs;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  Archive a;
  a.meta.set("kind", "transcoder");
  a.meta.set("method", ck.method);
  a.meta.set("model_dim", std::to_string(ck.model.encoder.dim()));
  a.meta.set("epoch", std::to_string(ck.epoch));
  a.meta.set("best_val_loss", format_double(ck.best_val_loss));
  a.meta.set("optimizer.lr", format_double(ck.optimizer.lr));
  a.meta.set("optimizer.steps", std::to_string(ck.optimizer.steps));
  KvText cfg;
  ck.config.to_kv(cfg);
  for (const auto& [k, v] : cfg.entries()) a.meta.set("config." + k, v);

  ClvqModel model = ck.model;
  const nn::ParamRefs params = named_params(model);
  for (const auto* p : params) a.add(p->name, p->value);
  a.add("codebook.vectors", model.codebook.vectors);
  a.add("codebook.ema_counts", model.codebook.ema_counts);
  a.add("codebook.ema_sums", model.codebook.ema_sums);
  a.meta.set("codebook.gamma", format_double(model.codebook.gamma));
  nn::ParamRefs trainable;
  model.collect_trainable(trainable);
  const bool has_moments = ck.optimizer.first_moments.size() == trainable.size();
  a.meta.set("optimizer.moments", has_moments ? "true" : "false");
  if (has_moments) {
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      a.add("adam.m." + trainable[i]->name, ck.optimizer.first_moments[i]);
      a.add("adam.v." + trainable[i]->name, ck.optimizer.second_moments[i]);
    }
  }
  a.save(path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const Archive a = Archive::load(path);
  if (a.meta.find("kind") != std::string("transcoder")) {
    throw DataError(path + ": not a transcoder checkpoint");
  }
  KvText cfg;
  for (const auto& [k, v] : a.meta.entries()) {
    if (k.rfind("config.", 0) == 0) cfg.set(k.substr(7), v);
  }
  Checkpoint ck;
  ck.method = a.meta.get("method");
  ck.config = TrainConfig::from_kv(cfg);
  ck.epoch = static_cast<int>(a.meta.get_int("epoch"));
  ck.best_val_loss = a.meta.get_double("best_val_loss");
  ck.optimizer.lr = a.meta.get_double("optimizer.lr");
  ck.optimizer.steps = a.meta.get_int("optimizer.steps");

  const Eigen::Index d = a.meta.get_int("model_dim");
  if (d <= 0) throw DataError(path + ": invalid model_dim");
  Rng scratch(0);
  ck.model.encoder = EncoderParams::identity_init(d, ck.config.alpha_mode, ck.config.fixed_alpha);
  ck.model.decoder = DecoderParams::init(d, ck.config.decoder, scratch);
  for (auto* p : named_params(ck.model)) {
    const Mat& t = a.tensor(p->name);
    if (t.rows() != p->value.rows() || t.cols() != p->value.cols()) {
      throw ShapeError(path + ": tensor '" + p->name + "' has the wrong shape");
    }
    p->value = t;
  }
  Codebook& cb = ck.model.codebook;
  cb.vectors = a.tensor("codebook.vectors");
  cb.ema_counts = a.tensor("codebook.ema_counts");
  cb.ema_sums = a.tensor("codebook.ema_sums");
  cb.gamma = a.meta.get_double("codebook.gamma");
  if (cb.vectors.cols() != d || cb.ema_sums.rows() != cb.vectors.rows() ||
      cb.ema_sums.cols() != d || cb.ema_counts.size() != cb.vectors.rows()) {
    throw ShapeError(path + ": codebook tensors are inconsistent");
  }
  cb.reset_usage();
  if (a.meta.get("optimizer.moments") == "true") {
    nn::ParamRefs trainable;
    ck.model.collect_trainable(trainable);
    for (const auto* p : trainable) {
      ck.optimizer.first_moments.push_back(a.tensor("adam.m." + p->name));
      ck.optimizer.second_moments.push_back(a.tensor("adam.v." + p->name));
    }
  }
  return ck;
}

Mat reconstruct(const ClvqModel& m, const Mat& x) {
  Rng unused(0);
  const Mat z_e = encoder_forward(m.encoder, x);
  const Quantized q = quantize_batch(z_e, m.codebook, SamplerConfig{1, 1.0, 0}, Mode::kEval, unused);
  return decoder_forward(m.decoder, q.z_q, z_e, {}, Mode::kEval, unused);
}

}  // namespace clvq
