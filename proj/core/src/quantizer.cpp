#include "clvq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clvq/error.hpp"

namespace clvq {

void Codebook::record_usage(const std::vector<int>& indices) {
  if (usage.size() != static_cast<std::size_t>(size())) reset_usage();
  for (int j : indices) ++usage[static_cast<std::size_t>(j)];
}

Codebook Codebook::from_vectors(Mat vectors, const std::vector<double>& masses, double gamma) {
  if (vectors.rows() < 1) throw UsageError("codebook needs at least one vector");
  if (!(gamma > 0.0 && gamma < 1.0)) throw UsageError("EMA decay must lie in (0, 1)");
  Codebook cb;
  const auto k = vectors.rows();
  cb.ema_counts.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) cb.ema_counts(j) = masses[static_cast<std::size_t>(j)];
  cb.ema_sums = vectors.array().colwise() * cb.ema_counts.array();
  cb.vectors = std::move(vectors);
  cb.gamma = gamma;
  cb.reset_usage();
  return cb;
}

void SamplerConfig::validate(int codebook_size) const {
  if (top_k < 1 || top_k > codebook_size) {
    throw UsageError("top_k must lie in [1, " + std::to_string(codebook_size) + "]");
  }
  if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
}

namespace {

void require_inputs(const Mat& inputs, int k) {
  if (k < 1) throw UsageError("codebook size must be at least 1");
  if (k > inputs.rows()) {
    throw UsageError("codebook size " + std::to_string(k) + " exceeds the " +
                     std::to_string(inputs.rows()) + " available inputs");
  }
}

// Clusters that end up empty keep one pseudo-count so their code never divides 0 by eps.
std::vector<double> masses_from_sizes(const std::vector<int>& sizes) {
  std::vector<double> out;
  out.reserve(sizes.size());
  for (int s : sizes) out.push_back(s > 0 ? static_cast<double>(s) : 1.0);
  return out;
}

}  // namespace

SphericalInit spherical_kmeanspp(const Mat& inputs, int k, std::uint64_t seed, int max_iters,
                                 double tol, double gamma) {
  require_inputs(inputs, k);
  const Vec norms = inputs.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (norms(i) == 0.0) {
      throw UsageError("input row " + std::to_string(i) + " has zero norm");
    }
  }
  const Mat unit = inputs.array().colwise() / norms.array();
  Rng rng(seed);
  KMeansResult km = kmeans(unit, k, rng, {max_iters, tol, true});

  const double overall_mean = norms.mean();
  Vec mean_norm = Vec::Zero(k);
  for (std::size_t i = 0; i < km.assignment.size(); ++i) {
    mean_norm(km.assignment[i]) += norms(static_cast<Eigen::Index>(i));
  }
  Mat scaled(k, inputs.cols());
  for (int j = 0; j < k; ++j) {
    const int size = km.cluster_size[static_cast<std::size_t>(j)];
    const double scale = size > 0 ? mean_norm(j) / size : overall_mean;
    scaled.row(j) = km.centroids.row(j) * scale;
  }
  SphericalInit out;
  out.codebook = Codebook::from_vectors(std::move(scaled), masses_from_sizes(km.cluster_size), gamma);
  out.unit_centroids = std::move(km.centroids);
  out.assignment = std::move(km.assignment);
  return out;
}

Codebook init_spherical_kmeanspp(const Mat& inputs, int k, std::uint64_t seed, int max_iters,
                                 double tol, double gamma) {
  return spherical_kmeanspp(inputs, k, seed, max_iters, tol, gamma).codebook;
}

Codebook init_kmeanspp(const Mat& inputs, int k, std::uint64_t seed, int max_iters, double tol,
                       double gamma) {
  require_inputs(inputs, k);
  Rng rng(seed);
  KMeansResult km = kmeans(inputs, k, rng, {max_iters, tol, false});
  return Codebook::from_vectors(std::move(km.centroids), masses_from_sizes(km.cluster_size),
                                gamma);
}

Codebook init_random(const Mat& inputs, int k, std::uint64_t seed, double gamma) {
  require_inputs(inputs, k);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(inputs.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Mat picked(k, inputs.cols());
  for (int j = 0; j < k; ++j) picked.row(j) = inputs.row(order[static_cast<std::size_t>(j)]);
  // Each sampled code starts with the mass of an equal share of the inputs.
  const double mass = static_cast<double>(inputs.rows()) / k;
  return Codebook::from_vectors(std::move(picked),
                                std::vector<double>(static_cast<std::size_t>(k), mass), gamma);
}

Vec distances(const Eigen::Ref<const RowVec>& z, const Codebook& cb) {
  if (z.size() != cb.dim()) throw ShapeError("distance query has the wrong dimension");
  return (cb.vectors.rowwise() - z).rowwise().squaredNorm();
}

TopKDistribution top_k_distribution(const Vec& dist, int top_k, double temperature) {
  const auto k = static_cast<std::size_t>(dist.size());
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(top_k), k);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](int a, int b) { return dist(a) < dist(b) || (dist(a) == dist(b) && a < b); });
  order.resize(keep);

  TopKDistribution out;
  out.indices = order;
  out.probabilities.resize(keep);
  // The nearest code has the largest logit -d/tau, so subtracting it bounds every exponent by 0.
  const double best = dist(order.front());
  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    out.probabilities[i] = std::exp(-(dist(order[i]) - best) / temperature);
    total += out.probabilities[i];
  }
  for (auto& p : out.probabilities) p /= total;
  return out;
}

CodeChoice sample_code(const Eigen::Ref<const RowVec>& z, const Codebook& cb,
                       const SamplerConfig& config, Rng& rng) {
  const TopKDistribution dist = top_k_distribution(distances(z, cb), config.top_k,
                                                   config.temperature);
  if (dist.indices.size() == 1) return {dist.indices.front(), 1.0};
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.indices.size(); ++i) {
    acc += dist.probabilities[i];
    if (u < acc) return {dist.indices[i], dist.probabilities[i]};
  }
  // Rounding left u beyond the accumulated mass; fall back to the last code with mass.
  for (std::size_t i = dist.indices.size(); i-- > 0;) {
    if (dist.probabilities[i] > 0.0) return {dist.indices[i], dist.probabilities[i]};
  }
  return {dist.indices.front(), dist.probabilities.front()};
}

CodeChoice nearest_code(const Eigen::Ref<const RowVec>& z, const Codebook& cb) {
  const Vec d = distances(z, cb);
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < d.size(); ++j) {
    if (d(j) < d(best)) best = j;
  }
  return {static_cast<int>(best), 1.0};
}

Quantized quantize_batch(const Mat& z_e, const Codebook& cb, const SamplerConfig& config,
                         Mode mode, Rng& rng) {
  if (z_e.cols() != cb.dim()) throw ShapeError("quantizer input has the wrong dimension");
  Quantized out;
  out.z_q.resize(z_e.rows(), z_e.cols());
  out.indices.resize(static_cast<std::size_t>(z_e.rows()));
  for (Eigen::Index t = 0; t < z_e.rows(); ++t) {
    const CodeChoice c = mode == Mode::kTrain ? sample_code(z_e.row(t), cb, config, rng)
                                              : nearest_code(z_e.row(t), cb);
    out.indices[static_cast<std::size_t>(t)] = c.index;
    out.z_q.row(t) = cb.vectors.row(c.index);
  }
  return out;
}

void ema_update(Codebook& cb, const Mat& z_e, const std::vector<int>& indices) {
  if (static_cast<std::size_t>(z_e.rows()) != indices.size()) {
    throw ShapeError("ema_update needs one index per row");
  }
  const int k = cb.size();
  Vec counts = Vec::Zero(k);
  Mat sums = Mat::Zero(k, cb.dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int j = indices[i];
    if (j < 0 || j >= k) throw UsageError("code index out of range in ema_update");
    counts(j) += 1.0;
    sums.row(j) += z_e.row(static_cast<Eigen::Index>(i));
  }
  const double g = cb.gamma;
  cb.ema_counts = g * cb.ema_counts + (1.0 - g) * counts;
  cb.ema_sums = g * cb.ema_sums + (1.0 - g) * sums;
  cb.vectors = cb.ema_sums.array().colwise() / (cb.ema_counts.array() + Codebook::kSmoothing);
}

double perplexity(const std::vector<std::int64_t>& usage) {
  double total = 0.0;
  for (auto c : usage) total += static_cast<double>(c);
  if (total <= 0.0) throw UsageError("perplexity of an empty usage histogram is undefined");
  // Uniform mass over n codes has perplexity exactly n; skip the exp(log) round trip.
  std::int64_t first = 0;
  std::int64_t used = 0;
  bool uniform = true;
  for (auto c : usage) {
    if (c <= 0) continue;
    if (first == 0) first = c;
    uniform = uniform && c == first;
    ++used;
  }
  if (uniform) return static_cast<double>(used);
  double entropy = 0.0;
  for (auto c : usage) {
    if (c <= 0) continue;
    const double p = static_cast<double>(c) / total;
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

double utilization_percent(double ppl, int codebook_size) {
  return ppl / static_cast<double>(codebook_size) * 100.0;
}

}  // namespace clvq
