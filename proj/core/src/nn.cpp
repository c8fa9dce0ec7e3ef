#include "clvq/nn.hpp"

#include <cmath>
#include <limits>

#include "clvq/error.hpp"

namespace clvq::nn {

Mat uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

Linear::Linear(std::string name, Eigen::Index in, Eigen::Index out, Rng& rng, bool zero_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Param(name + ".weight", uniform_init(out, in, bound, rng));
  bias = Param(name + ".bias", zero_bias ? Mat::Zero(1, out) : uniform_init(1, out, bound, rng));
}

Mat Linear::forward(const Mat& x) const {
  Mat y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy) {
  weight.grad.noalias() += dy.transpose() * x;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value;
}

Mat normalize_rows(const Mat& x, double eps, Mat* xhat, Vec* inv_std) {
  const Eigen::Index n = x.cols();
  Vec mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Vec var = centered.rowwise().squaredNorm() / static_cast<double>(n);
  Vec inv = (var.array() + eps).rsqrt().matrix();
  Mat out = centered.array().colwise() * inv.array();
  if (xhat) *xhat = out;
  if (inv_std) *inv_std = inv;
  return out;
}

Mat normalize_rows_backward(const Mat& xhat, const Vec& inv_std, const Mat& dxhat) {
  const double n = static_cast<double>(xhat.cols());
  Vec sum_d = dxhat.rowwise().sum();
  Vec sum_dx = dxhat.cwiseProduct(xhat).rowwise().sum();
  Mat dx = (n * dxhat).colwise() - sum_d;
  dx -= (xhat.array().colwise() * sum_dx.array()).matrix();
  dx = (dx.array().colwise() * (inv_std.array() / n)).matrix();
  return dx;
}

LayerNorm::LayerNorm(std::string name, Eigen::Index dim)
    : gain(name + ".gain", Mat::Ones(1, dim)), bias(name + ".bias", Mat::Zero(1, dim)) {}

Mat LayerNorm::forward(const Mat& x, Cache* cache) const {
  Mat xhat;
  Vec inv;
  normalize_rows(x, kEps, &xhat, &inv);
  Mat y = xhat.array().rowwise() * gain.value.row(0).array();
  y.rowwise() += bias.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Mat LayerNorm::backward(const Cache& cache, const Mat& dy) {
  gain.grad.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
  bias.grad.row(0) += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gain.value.row(0).array();
  return normalize_rows_backward(cache.xhat, cache.inv_std, dxhat);
}

Mat masked_softmax(const Mat& scores, const Mask& visible) {
  Mat out = Mat::Zero(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (visible(i, j)) mx = std::max(mx, scores(i, j));
    }
    if (!std::isfinite(mx)) continue;
    double total = 0.0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (visible(i, j)) {
        out(i, j) = std::exp(scores(i, j) - mx);
        total += out(i, j);
      }
    }
    out.row(i) /= total;
  }
  return out;
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, Eigen::Index dim, int heads,
                                       Rng& rng)
    : wq(name + ".q", dim, dim, rng, true),
      wk(name + ".k", dim, dim, rng, true),
      wv(name + ".v", dim, dim, rng, true),
      wo(name + ".o", dim, dim, rng, true),
      heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw UsageError("model dim must be divisible by the number of heads");
  }
}

Mat MultiHeadAttention::forward(const Mat& xq, const Mat& xkv, const Mask& visible,
                                Cache* cache) const {
  const Eigen::Index dim = wq.out_dim();
  const Eigen::Index hd = dim / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat q = wq.forward(xq);
  Mat k = wk.forward(xkv);
  Mat v = wv.forward(xkv);
  Mat concat(xq.rows(), dim);
  std::vector<Mat> probs;
  probs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const auto c0 = h * hd;
    Mat scores = (q.middleCols(c0, hd) * k.middleCols(c0, hd).transpose()) * scale;
    Mat p = masked_softmax(scores, visible);
    concat.middleCols(c0, hd).noalias() = p * v.middleCols(c0, hd);
    probs.push_back(std::move(p));
  }
  Mat out = wo.forward(concat);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return out;
}

std::pair<Mat, Mat> MultiHeadAttention::backward(const Cache& c, const Mat& dout) {
  const Eigen::Index dim = wq.out_dim();
  const Eigen::Index hd = dim / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat dconcat = wo.backward(c.concat, dout);
  Mat dq = Mat::Zero(c.q.rows(), dim);
  Mat dk = Mat::Zero(c.k.rows(), dim);
  Mat dv = Mat::Zero(c.v.rows(), dim);
  for (int h = 0; h < heads_; ++h) {
    const auto c0 = h * hd;
    const Mat& p = c.probs[static_cast<std::size_t>(h)];
    Mat dctx = dconcat.middleCols(c0, hd);
    dv.middleCols(c0, hd).noalias() += p.transpose() * dctx;
    Mat dp = dctx * c.v.middleCols(c0, hd).transpose();
    // Softmax backward; masked entries have p = 0 and drop out.
    Vec rowdot = dp.cwiseProduct(p).rowwise().sum();
    Mat ds = p.cwiseProduct(dp.colwise() - rowdot) * scale;
    dq.middleCols(c0, hd).noalias() += ds * c.k.middleCols(c0, hd);
    dk.middleCols(c0, hd).noalias() += ds.transpose() * c.q.middleCols(c0, hd);
  }
  Mat dxq = wq.backward(c.xq, dq);
  Mat dxkv = wk.backward(c.xkv, dk);
  dxkv += wv.backward(c.xkv, dv);
  return {std::move(dxq), std::move(dxkv)};
}

void MultiHeadAttention::collect(ParamRefs& out) {
  wq.collect(out);
  wk.collect(out);
  wv.collect(out);
  wo.collect(out);
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  if (p <= 0.0) return {};
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = keep(rng) ? scale : 0.0;
  }
  return m;
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat sinusoidal_positions(Eigen::Index length, Eigen::Index dim) {
  Mat pe(length, dim);
  for (Eigen::Index t = 0; t < length; ++t) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) /
                                                static_cast<double>(dim));
      const double angle = static_cast<double>(t) * rate;
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

double global_grad_norm(const ParamRefs& params) {
  double total = 0.0;
  for (const auto* p : params) total += p->grad.squaredNorm();
  return std::sqrt(total);
}

double clip_grad_norm(const ParamRefs& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto* p : params) p->grad *= s;
  }
  return norm;
}

}  // namespace clvq::nn
