#pragma once

#include <vector>

#include "clvq/types.hpp"

namespace clvq {

struct KMeansOptions {
  int max_iters = 100;
  /// Stop once the mean centroid displacement of an iteration drops below this.
  double tol = 1e-4;
  /// Renormalize centroids to unit length after every update (inputs must be unit rows).
  bool spherical = false;
};

struct KMeansResult {
  Mat centroids;                 // K x d
  std::vector<int> assignment;   // one cluster id per input row
  std::vector<int> cluster_size;
  int iterations = 0;
};

/// k-means++ seeding on squared Euclidean distance. When every remaining
/// point coincides with a chosen center, the next center is drawn uniformly.
Mat kmeanspp_seeds(const Mat& points, int k, Rng& rng);

/// Nearest centroid by squared Euclidean distance; lowest index wins ties.
int nearest_row(const Mat& centroids, const Eigen::Ref<const RowVec>& x);

/// Seeding followed by Lloyd iterations. Empty clusters keep their previous centroid.
KMeansResult kmeans(const Mat& points, int k, Rng& rng, const KMeansOptions& options);

}  // namespace clvq
