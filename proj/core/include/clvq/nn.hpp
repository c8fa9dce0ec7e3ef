#pragma once

#include <string>
#include <vector>

#include "clvq/types.hpp"

namespace clvq::nn {

/// A trainable tensor and its accumulated gradient. Vectors are stored as 1 x n.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
};

using ParamRefs = std::vector<Param*>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for dense layers.
Mat uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, Eigen::Index in, Eigen::Index out, Rng& rng, bool zero_bias = false);

  Mat forward(const Mat& x) const;
  /// Accumulates weight/bias gradients and returns dL/dx.
  Mat backward(const Mat& x, const Mat& dy);

  Eigen::Index in_dim() const { return weight.value.cols(); }
  Eigen::Index out_dim() const { return weight.value.rows(); }
  void collect(ParamRefs& out) { out.push_back(&weight); out.push_back(&bias); }

  Param weight;  // out x in
  Param bias;    // 1 x out
};

class LayerNorm {
 public:
  static constexpr double kEps = 1e-5;

  struct Cache {
    Mat xhat;
    Vec inv_std;
  };

  LayerNorm() = default;
  LayerNorm(std::string name, Eigen::Index dim);

  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void collect(ParamRefs& out) { out.push_back(&gain); out.push_back(&bias); }

  Param gain;
  Param bias;
};

/// Row-wise normalization without affine parameters.
Mat normalize_rows(const Mat& x, double eps, Mat* xhat, Vec* inv_std);
/// Backward of normalize_rows given its cache and the gradient wrt xhat.
Mat normalize_rows_backward(const Mat& xhat, const Vec& inv_std, const Mat& dxhat);

/// Visibility mask: true where query row may attend to key column.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Row softmax over visible entries; rows with no visible entry become zero.
Mat masked_softmax(const Mat& scores, const Mask& visible);

class MultiHeadAttention {
 public:
  struct Cache {
    Mat xq, xkv;
    Mat q, k, v;
    std::vector<Mat> probs;  // one T_q x T_k matrix per head
    Mat concat;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Eigen::Index dim, int heads, Rng& rng);

  Mat forward(const Mat& xq, const Mat& xkv, const Mask& visible, Cache* cache = nullptr) const;
  /// Returns (dL/dxq, dL/dxkv).
  std::pair<Mat, Mat> backward(const Cache& cache, const Mat& dout);
  void collect(ParamRefs& out);

  int heads() const { return heads_; }

  Linear wq, wk, wv, wo;

 private:
  int heads_ = 1;
};

/// Inverted dropout mask: entries are 0 or 1/(1-p). Empty when inactive.
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng);
inline Mat apply_mask(const Mat& x, const Mat& mask) {
  return mask.size() == 0 ? x : Mat(x.cwiseProduct(mask));
}

Mat relu(const Mat& x);

/// Fixed sinusoidal position table, T x d.
Mat sinusoidal_positions(Eigen::Index length, Eigen::Index dim);

double global_grad_norm(const ParamRefs& params);
/// Rescales gradients so their global norm is at most `max_norm`. Returns the pre-clip norm.
double clip_grad_norm(const ParamRefs& params, double max_norm);

}  // namespace clvq::nn
