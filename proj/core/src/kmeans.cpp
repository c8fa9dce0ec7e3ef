#include "clvq/kmeans.hpp"

#include <limits>

#include "clvq/error.hpp"

namespace clvq {

Mat kmeanspp_seeds(const Mat& points, int k, Rng& rng) {
  const Eigen::Index n = points.rows();
  if (k < 1) throw UsageError("k must be at least 1");
  if (k > n) throw UsageError("cannot pick " + std::to_string(k) + " centroids from " +
                              std::to_string(n) + " points");
  Mat seeds(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  seeds.row(0) = points.row(pick(rng));
  Vec best = (points.rowwise() - seeds.row(0)).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = best.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += best(i);
        if (acc > target && best(i) > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    seeds.row(c) = points.row(chosen);
    best = best.cwiseMin((points.rowwise() - seeds.row(c)).rowwise().squaredNorm());
  }
  return seeds;
}

int nearest_row(const Mat& centroids, const Eigen::Ref<const RowVec>& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
    const double d = (centroids.row(j) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

namespace {

void assign_all(const Mat& points, const Mat& centroids, std::vector<int>& assignment) {
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    assignment[static_cast<std::size_t>(i)] = nearest_row(centroids, points.row(i));
  }
}

}  // namespace

KMeansResult kmeans(const Mat& points, int k, Rng& rng, const KMeansOptions& opt) {
  KMeansResult out;
  out.centroids = kmeanspp_seeds(points, k, rng);
  const auto n = static_cast<std::size_t>(points.rows());
  out.assignment.assign(n, 0);
  for (int it = 0; it < opt.max_iters; ++it) {
    assign_all(points, out.centroids, out.assignment);
    Mat sums = Mat::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(out.assignment[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(out.assignment[i])];
    }
    Mat next = out.centroids;
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] == 0) continue;
      RowVec c = sums.row(j) / counts[static_cast<std::size_t>(j)];
      if (opt.spherical) {
        const double norm = c.norm();
        if (norm == 0.0) continue;
        c /= norm;
      }
      next.row(j) = c;
    }
    const double movement = (next - out.centroids).rowwise().norm().mean();
    out.centroids = std::move(next);
    out.iterations = it + 1;
    if (movement < opt.tol) break;
  }
  assign_all(points, out.centroids, out.assignment);
  out.cluster_size.assign(static_cast<std::size_t>(k), 0);
  for (int a : out.assignment) ++out.cluster_size[static_cast<std::size_t>(a)];
  return out;
}

}  // namespace clvq
