#pragma once

#include <cstdint>
#include <vector>

#include "clvq/kmeans.hpp"
#include "clvq/types.hpp"

namespace clvq {

/// K concept vectors plus the exponential-moving-average accumulators that
/// update them.
struct Codebook {
  /// Added to the counts at the division only, so decayed dead codes stay finite.
  static constexpr double kSmoothing = 1e-5;

  Mat vectors;     // K x d
  Vec ema_counts;  // K
  Mat ema_sums;    // K x d
  double gamma = 0.99;
  std::vector<std::int64_t> usage;  // per evaluation pass

  int size() const { return static_cast<int>(vectors.rows()); }
  Eigen::Index dim() const { return vectors.cols(); }

  void reset_usage() { usage.assign(static_cast<std::size_t>(size()), 0); }
  void record_usage(const std::vector<int>& indices);

  /// Builds a codebook whose accumulators agree with `vectors`: N_j = mass_j, m_j = N_j e_j.
  static Codebook from_vectors(Mat vectors, const std::vector<double>& masses, double gamma);
};

struct SamplerConfig {
  int top_k = 5;
  double temperature = 1.0;
  std::uint64_t rng_seed = 42;

  /// Throws UsageError unless 1 <= top_k <= codebook_size and temperature > 0.
  void validate(int codebook_size) const;
};

struct SphericalInit {
  Codebook codebook;
  Mat unit_centroids;  // before magnitude scaling
  std::vector<int> assignment;
};

/// Directional k-means++ on unit-normalized inputs, each centroid then
/// rescaled by the mean original norm of its cluster members.
SphericalInit spherical_kmeanspp(const Mat& inputs, int k, std::uint64_t seed,
                                 int max_iters = 100, double tol = 1e-4, double gamma = 0.99);
Codebook init_spherical_kmeanspp(const Mat& inputs, int k, std::uint64_t seed,
                                 int max_iters = 100, double tol = 1e-4, double gamma = 0.99);
Codebook init_kmeanspp(const Mat& inputs, int k, std::uint64_t seed, int max_iters = 100,
                       double tol = 1e-4, double gamma = 0.99);
/// K distinct input rows drawn uniformly without replacement.
Codebook init_random(const Mat& inputs, int k, std::uint64_t seed, double gamma = 0.99);

/// Squared Euclidean distance from `z` to every code.
Vec distances(const Eigen::Ref<const RowVec>& z, const Codebook& codebook);

struct CodeChoice {
  int index = 0;
  double probability = 1.0;
};

struct TopKDistribution {
  std::vector<int> indices;  // ascending distance, lower index first on ties
  std::vector<double> probabilities;
};

/// Softmax of -d/tau restricted to the top_k nearest codes.
TopKDistribution top_k_distribution(const Vec& dist, int top_k, double temperature);

CodeChoice sample_code(const Eigen::Ref<const RowVec>& z, const Codebook& codebook,
                       const SamplerConfig& config, Rng& rng);

/// Deterministic nearest code, lowest index on ties.
CodeChoice nearest_code(const Eigen::Ref<const RowVec>& z, const Codebook& codebook);

struct Quantized {
  Mat z_q;
  std::vector<int> indices;
};

/// Train mode samples each row from the top-k distribution; eval mode takes
/// the argmin. The backward pass is the identity on z_e (straight-through),
/// and the codebook receives no gradient.
Quantized quantize_batch(const Mat& z_e, const Codebook& codebook, const SamplerConfig& config,
                         Mode mode, Rng& rng);

/// Forward value z_q written as z_e + (z_q - z_e) with the difference treated as a constant.
inline Mat straight_through(const Mat& z_e, const Mat& z_q) { return z_e + (z_q - z_e); }
/// Gradient wrt z_e given the gradient wrt z_q: the identity.
inline Mat straight_through_backward(const Mat& dz_q) { return dz_q; }

/// One decay step of the count and sum accumulators followed by e_j = m_j / (N_j + eps).
void ema_update(Codebook& codebook, const Mat& z_e, const std::vector<int>& indices);

/// exp(entropy) of the empirical code usage. Throws UsageError on an empty histogram.
double perplexity(const std::vector<std::int64_t>& usage);
/// Perplexity as a percentage of the codebook size.
double utilization_percent(double perplexity, int codebook_size);

}  // namespace clvq
