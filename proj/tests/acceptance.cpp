#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "clvq/baselines.hpp"
#include "clvq/concept_export.hpp"
#include "clvq/concepts.hpp"
#include "clvq/decoder.hpp"
#include "clvq/encoder.hpp"
#include "clvq/probe_eval.hpp"
#include "clvq/quantizer.hpp"
#include "clvq/synth.hpp"
#include "clvq/trainer.hpp"
#include "support/test_util.hpp"

namespace clvq {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string id;
  std::string title;
  double time_limit_s;  // 0: no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

// ---- shared planted-concept setup -------------------------------------------

constexpr int kSeeds = 5;

SynthOutput planted(std::uint64_t seed) {
  SynthConfig sc;
  sc.concepts = 32;
  sc.dim = 64;
  sc.seed = seed;
  return generate_planted(sc);
}

TrainConfig planted_train_config(std::uint64_t seed, double tau) {
  TrainConfig c;
  c.codebook_size = 64;
  c.tau = tau;
  c.seed = seed;
  c.batch_size = 32;
  c.decoder.num_layers = 1;
  c.decoder.num_heads = 4;
  c.decoder.ffn_dim = 128;
  return c;
}

struct SeedEval {
  FaithfulnessReport clvq;
  FaithfulnessReport clustering;
};

/// One trained transcoder, one clustering baseline and one shared probe per seed.
const std::vector<SeedEval>& planted_evaluations() {
  static const std::vector<SeedEval> evals = [] {
    std::vector<SeedEval> out;
    for (int s = 1; s <= kSeeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s);
      const SynthOutput data = planted(seed);
      const ActivationDataset& ds = data.dataset;
      const FitResult fit_result = fit(planted_train_config(seed, 1.0), ds);
      const VqConceptModel vq(fit_result.best.model, "clvqvae");
      const auto train = ds.indices(Split::kTrain);
      const ClusterConceptModel clusters(fit_clustering(stack_tokens(ds, train), 64, seed));
      ProbeConfig pc;
      pc.seed = seed;
      const ProbeParams probe =
          train_probe(sentence_embeddings(ds, train), sentence_labels(ds, train),
                      static_cast<int>(ds.manifest.label_names.size()), pc);
      const auto test = ds.indices(Split::kTest);
      const FaithfulnessConfig fc{Saliency::kGradient, 10, seed};
      out.push_back({evaluate_faithfulness(ds, test, vq, probe, fc),
                     evaluate_faithfulness(ds, test, clusters, probe, fc)});
    }
    return out;
  }();
  return evals;
}

// ---- P1 ----------------------------------------------------------------------

Outcome ema_oracle() {
  Rng rng(11);
  const int k = 16;
  const Eigen::Index d = 8;
  const double gamma = 0.99;
  std::vector<double> masses(k);
  for (auto& m : masses) m = 1.0 + std::uniform_real_distribution<double>(0.0, 5.0)(rng);
  Codebook cb = Codebook::from_vectors(test::random_matrix(k, d, rng), masses, gamma);

  using LD = long double;
  std::vector<LD> n(static_cast<std::size_t>(k));
  std::vector<std::vector<LD>> m(static_cast<std::size_t>(k), std::vector<LD>(d));
  for (int j = 0; j < k; ++j) {
    n[j] = cb.ema_counts(j);
    for (Eigen::Index c = 0; c < d; ++c) m[j][c] = cb.ema_sums(j, c);
  }
  std::uniform_int_distribution<int> pick(0, k - 1);
  double worst = 0.0;
  for (int step = 0; step < 100; ++step) {
    const Mat z = test::random_matrix(32, d, rng, 2.0);
    std::vector<int> idx(32);
    for (auto& i : idx) i = pick(rng);
    ema_update(cb, z, idx);
    for (int j = 0; j < k; ++j) {
      LD count = 0;
      std::vector<LD> sum(d, 0);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] != j) continue;
        count += 1;
        for (Eigen::Index c = 0; c < d; ++c) sum[c] += z(static_cast<Eigen::Index>(i), c);
      }
      n[j] = gamma * n[j] + (1 - static_cast<LD>(gamma)) * count;
      for (Eigen::Index c = 0; c < d; ++c) {
        m[j][c] = gamma * m[j][c] + (1 - static_cast<LD>(gamma)) * sum[c];
        const LD e = m[j][c] / (n[j] + static_cast<LD>(Codebook::kSmoothing));
        worst = std::max(worst, static_cast<double>(std::fabs(e - cb.vectors(j, c))));
      }
    }
  }
  return {worst < 1e-5, fmt("max abs error %.3g over 100 steps", worst)};
}

// ---- P2 ----------------------------------------------------------------------

Outcome sampling_fidelity() {
  Rng rng(21);
  const int k = 8;
  const Eigen::Index d = 4;
  const Codebook cb = Codebook::from_vectors(test::random_matrix(k, d, rng),
                                             std::vector<double>(k, 1.0), 0.99);
  const RowVec z = test::random_matrix(1, d, rng, 0.5);
  const Vec dist = distances(z, cb);

  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return dist(a) < dist(b); });

  const int draws = 100000;
  const double critical_df2 = 9.2103;  // chi-square 0.99 quantile, 2 degrees of freedom
  double worst_stat = 0.0;
  bool ok = true;
  for (double tau : {0.5, 1.0, 2.0}) {
    long double weights[3], total = 0;
    for (int i = 0; i < 3; ++i) {
      weights[i] = std::exp(-static_cast<long double>(dist(order[i])) / tau);
      total += weights[i];
    }
    std::map<int, int> counts;
    Rng draw_rng(static_cast<std::uint64_t>(tau * 100));
    for (int i = 0; i < draws; ++i) ++counts[sample_code(z, cb, {3, tau}, draw_rng).index];
    double stat = 0.0;
    int seen = 0;
    for (int i = 0; i < 3; ++i) {
      const double expected = static_cast<double>(weights[i] / total) * draws;
      const double observed = counts.count(order[i]) ? counts[order[i]] : 0;
      seen += static_cast<int>(observed);
      stat += (observed - expected) * (observed - expected) / expected;
    }
    ok = ok && seen == draws && stat < critical_df2;
    worst_stat = std::max(worst_stat, stat);
  }

  bool deterministic = true;
  for (int i = 0; i < 1000; ++i) {
    deterministic = deterministic && sample_code(z, cb, {1, 1.0}, rng).index == order[0];
    deterministic = deterministic && sample_code(z, cb, {3, 1e-6}, rng).index == order[0];
  }
  return {ok && deterministic,
          fmt("max chi-square %.3f (critical 9.210), k=1 and tau->0 ", worst_stat) +
              (deterministic ? "deterministic" : "NOT deterministic")};
}

// ---- P3 ----------------------------------------------------------------------

Outcome spherical_init() {
  Rng rng(31);
  const Mat x = test::random_matrix(1000, 16, rng);
  const int k = 16;
  const SphericalInit init = spherical_kmeanspp(x, k, 5);
  double unit_err = 0.0, scale_err = 0.0;
  const Vec norms = x.rowwise().norm();
  for (int j = 0; j < k; ++j) {
    unit_err = std::max(unit_err, std::fabs(init.unit_centroids.row(j).norm() - 1.0));
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < init.assignment.size(); ++i) {
      if (init.assignment[i] != j) continue;
      sum += norms(static_cast<Eigen::Index>(i));
      ++count;
    }
    const double target = count > 0 ? sum / count : norms.mean();
    scale_err = std::max(scale_err, std::fabs(init.codebook.vectors.row(j).norm() - target));
  }
  Mat hand(2, 2);
  hand << 3, 0, 0, 4;
  const RowVec e = spherical_kmeanspp(hand, 1, 1).codebook.vectors.row(0);
  const double hand_err = std::max(std::fabs(e(0) - 2.47487), std::fabs(e(1) - 2.47487));
  const bool pass = unit_err < 1e-6 && scale_err < 1e-6 && hand_err < 1e-4;
  return {pass, fmt("unit-norm err %.2g, scale err %.2g, ", unit_err, scale_err) +
                    fmt("hand example (%.5f, %.5f)", e(0), e(1))};
}

// ---- P4 ----------------------------------------------------------------------

double encoder_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::Index d = 16, t = 4;
  EncoderParams p = EncoderParams::identity_init(d);
  p.weight.value += test::random_matrix(d, d, rng, 0.3);
  p.bias.value = test::random_matrix(1, d, rng, 0.2);
  p.norm.gain.value.array() += test::random_matrix(1, d, rng, 0.1).array();
  p.norm.bias.value = test::random_matrix(1, d, rng, 0.1);
  p.logit.value(0, 0) = 0.3;
  const Mat x = test::random_matrix(t, d, rng);
  const Mat y = test::random_matrix(t, d, rng);
  nn::ParamRefs params;
  p.collect(params);
  for (auto* q : params) q->zero_grad();
  EncoderCache cache;
  const Mat z = encoder_forward(p, x, &cache);
  encoder_backward(p, cache, (2.0 / t) * (z - y));
  const auto loss = [&] { return (encoder_forward(p, x) - y).squaredNorm() / t; };
  double worst = 0.0;
  for (auto* q : params) {
    worst = std::max(worst, test::check_gradient(*q, loss, test::all_entries(*q)).max_rel_error);
  }
  return worst;
}

double decoder_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::Index d = 16, t = 4;
  DecoderConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 4;
  cfg.ffn_dim = 32;
  cfg.dropout = 0.0;
  DecoderParams p = DecoderParams::init(d, cfg, rng);
  nn::ParamRefs params;
  p.collect(params);
  for (auto* q : params) q->value += test::random_matrix(q->value.rows(), q->value.cols(), rng, 0.1);
  const Mat z = test::random_matrix(t, d, rng);
  const Mat mem = test::random_matrix(t, d, rng);
  const Mat y = test::random_matrix(t, d, rng);
  Rng unused(0);
  for (auto* q : params) q->zero_grad();
  DecoderCache cache;
  const Mat y_hat = decoder_forward(p, z, mem, {}, Mode::kEval, unused, &cache);
  const DecoderGrads g = decoder_backward(p, cache, (2.0 / t) * (y_hat - y));
  const auto loss = [&] {
    return (decoder_forward(p, z, mem, {}, Mode::kEval, unused) - y).squaredNorm() / t;
  };
  double worst = 0.0;
  for (auto* q : params) {
    worst = std::max(worst, test::check_gradient(*q, loss, test::all_entries(*q)).max_rel_error);
  }
  nn::Param zin("z_q", z), min("memory", mem);
  zin.grad = g.d_input;
  min.grad = g.d_memory;
  const auto loss_z = [&] {
    return (decoder_forward(p, zin.value, mem, {}, Mode::kEval, unused) - y).squaredNorm() / t;
  };
  const auto loss_m = [&] {
    return (decoder_forward(p, z, min.value, {}, Mode::kEval, unused) - y).squaredNorm() / t;
  };
  worst = std::max(worst, test::check_gradient(zin, loss_z, test::all_entries(zin)).max_rel_error);
  worst = std::max(worst, test::check_gradient(min, loss_m, test::all_entries(min)).max_rel_error);
  return worst;
}

Outcome gradient_checks() {
  double enc = 0.0, dec = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    enc = std::max(enc, encoder_gradient_error(seed));
    dec = std::max(dec, decoder_gradient_error(seed));
  }
  return {enc <= 1e-3 && dec <= 1e-3,
          fmt("max relative error encoder %.2g, decoder %.2g (5 seeds)", enc, dec)};
}

// ---- P5 ----------------------------------------------------------------------

Outcome temperature_trend() {
  const std::vector<double> taus{0.5, 1.0, 2.0, 3.0};
  std::vector<double> means;
  for (double tau : taus) {
    double sum = 0.0;
    for (int s = 1; s <= kSeeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s);
      const SynthOutput data = planted(seed);
      const FitResult r = fit(planted_train_config(seed, tau), data.dataset);
      sum += r.history[static_cast<std::size_t>(r.best.epoch - 1)].val_perplexity;
    }
    means.push_back(sum / kSeeds);
  }
  bool increasing = true;
  std::string detail = "mean val perplexity";
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (i > 0) increasing = increasing && means[i] > means[i - 1];
    detail += fmt(" tau=%.1f:%.3f", taus[i], means[i]);
  }
  return {increasing, detail};
}

// ---- P6 ----------------------------------------------------------------------

Outcome faithfulness_separation() {
  bool pass = true;
  double worst_gap = 1.0, worst_drift = 0.0;
  for (const auto& e : planted_evaluations()) {
    const auto& r = e.clvq;
    const double gap = r.random.mean - r.perturbed.mean;
    const double drift = std::fabs(r.random.mean - r.original.mean);
    pass = pass && gap > 0.10 && drift < 0.03;
    worst_gap = std::min(worst_gap, gap);
    worst_drift = std::max(worst_drift, drift);
  }
  return {pass, fmt("min(random - perturbed) %.4f, max|random - original| %.4f over 5 seeds",
                    worst_gap, worst_drift)};
}

// ---- P7 ----------------------------------------------------------------------

Outcome method_ranking() {
  int wins = 0, losses = 0;
  std::string per_seed;
  for (const auto& e : planted_evaluations()) {
    const double a = e.clvq.perturbed.mean, b = e.clustering.perturbed.mean;
    wins += a < b;
    losses += a > b;
    per_seed += fmt(" %.4f/%.4f", a, b);
  }
  const int n = wins + losses;
  double p = 1.0;
  if (n > 0) {
    p = 0.0;
    for (int i = wins; i <= n; ++i) {
      double c = 1.0;
      for (int j = 0; j < i; ++j) c = c * (n - j) / (j + 1);
      p += c * std::pow(0.5, n);
    }
  }
  return {p < 0.1, "clvqvae/clustering perturbed:" + per_seed +
                       fmt("; sign test %.0f of %.0f", wins, n) + fmt(", p=%.4f", p)};
}

// ---- P8 ----------------------------------------------------------------------

Outcome projection_algebra() {
  Rng rng(81);
  double orth = 0.0, idem = 0.0, grow = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Index d = 2 + i % 63;
    const RowVec x = test::random_matrix(1, d, rng, 3.0);
    const RowVec v = test::random_matrix(1, d, rng, 0.1 + (i % 7));
    const RowVec px = project_out(x, v);
    orth = std::max(orth, std::fabs(px.dot(v)) / (x.norm() * v.norm()));
    idem = std::max(idem, (project_out(px, v) - px).norm() / x.norm());
    grow = std::max(grow, (px.norm() - x.norm()) / x.norm());
  }
  return {orth <= 1e-6 && idem <= 1e-6 && grow <= 1e-6,
          fmt("max |<Px,v>|/(|x||v|) %.2g, idempotence %.2g", orth, idem) +
              fmt(", norm growth %.2g", grow)};
}

// ---- P9 ----------------------------------------------------------------------

Outcome perplexity_metric() {
  const double uniform = perplexity(std::vector<std::int64_t>(400, 7));
  std::vector<std::int64_t> degenerate(400, 0);
  degenerate[17] = 1234;
  const double single = perplexity(degenerate);
  const double util = utilization_percent(198.776, 400);
  return {uniform == 400.0 && single == 1.0 && util >= 49.69 && util <= 49.70,
          fmt("uniform %.17g, degenerate %.17g, ", uniform, single) +
              fmt("utilization %.4f%%", util)};
}

// ---- P10 ---------------------------------------------------------------------

struct PipelineRun {
  EpochLog first_epoch;
  std::string export_bytes;
};

PipelineRun pipeline(const std::string& dir) {
  SynthConfig sc;
  sc.concepts = 16;
  sc.dim = 32;
  sc.sentences = 200;
  sc.label_concepts = 4;
  sc.seed = 101;
  const ActivationDataset ds = generate_planted(sc).dataset;
  TrainConfig c;
  c.codebook_size = 16;
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 101;
  c.decoder.num_layers = 1;
  c.decoder.num_heads = 2;
  c.decoder.ffn_dim = 32;
  const FitResult r = fit(c, ds);
  const VqConceptModel model(r.best.model, "clvqvae");
  const auto assignments = assign_tokens(ds, ds.indices(Split::kTrain), model);
  std::vector<WordcloudRequest> requests;
  for (int j = 0; j < model.num_concepts(); ++j) requests.push_back({j, std::nullopt});
  const std::string path = dir + "/concepts.jsonl";
  export_wordcloud_data(assignments, model.num_concepts(), requests, "clvqvae", path);
  std::ifstream in(path, std::ios::binary);
  return {r.history.front(),
          std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>())};
}

Outcome reproducibility() {
  const test::TempDir a("acceptance_repro_a"), b("acceptance_repro_b");
  const PipelineRun x = pipeline(a.path()), y = pipeline(b.path());
  const bool losses = x.first_epoch.train_loss == y.first_epoch.train_loss &&
                      x.first_epoch.val_loss == y.first_epoch.val_loss &&
                      x.first_epoch.val_perplexity == y.first_epoch.val_perplexity;
  const bool bytes = !x.export_bytes.empty() && x.export_bytes == y.export_bytes;
  return {losses && bytes,
          fmt("epoch-1 train loss %.17g vs %.17g, ", x.first_epoch.train_loss,
              y.first_epoch.train_loss) +
              "export " + std::to_string(x.export_bytes.size()) + " bytes " +
              (bytes ? "identical" : "DIFFERENT")};
}

}  // namespace
}  // namespace clvq

int main(int argc, char** argv) {
  using namespace clvq;
  const std::vector<std::string> only(argv + 1, argv + argc);
  const std::vector<Criterion> criteria{
      {"P1", "quantizer EMA oracle", 5.0, ema_oracle},
      {"P2", "sampling fidelity", 10.0, sampling_fidelity},
      {"P3", "spherical init", 0.0, spherical_init},
      {"P4", "gradient checks", 0.0, gradient_checks},
      {"P5", "temperature trend", 600.0, temperature_trend},
      {"P6", "faithfulness separation", 600.0, faithfulness_separation},
      {"P7", "method ranking", 0.0, method_ranking},
      {"P8", "projection algebra", 0.0, projection_algebra},
      {"P9", "perplexity metric", 0.0, perplexity_metric},
      {"P10", "reproducibility", 0.0, reproducibility},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.time_limit_s <= 0.0 || secs < c.time_limit_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s %s %s: %s [%.1fs%s]\n", c.id.c_str(), pass ? "PASS" : "FAIL", c.title.c_str(),
                o.detail.c_str(), secs,
                c.time_limit_s > 0.0 ? (in_time ? " within limit" : " OVER LIMIT") : "");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
