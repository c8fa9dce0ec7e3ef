#include "clvq/encoder.hpp"

#include <cmath>

#include "clvq/error.hpp"

namespace clvq {
namespace {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace

EncoderParams EncoderParams::identity_init(Eigen::Index dim, AlphaMode mode, double fixed_alpha) {
  if (dim <= 0) throw UsageError("encoder dimension must be positive");
  if (mode == AlphaMode::kFixed && (fixed_alpha < 0.0 || fixed_alpha > 1.0)) {
    throw UsageError("fixed alpha must lie in [0, 1]");
  }
  EncoderParams p;
  p.weight = nn::Param("encoder.weight", Mat::Identity(dim, dim));
  p.bias = nn::Param("encoder.bias", Mat::Zero(1, dim));
  p.norm = nn::LayerNorm("encoder.norm", dim);
  p.logit = nn::Param("encoder.alpha_logit", Mat::Constant(1, 1, kInitLogit));
  p.mode = mode;
  p.fixed_alpha = fixed_alpha;
  return p;
}

void EncoderParams::collect(nn::ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
  norm.collect(out);
  if (mode != AlphaMode::kFixed) out.push_back(&logit);
}

double effective_alpha(const EncoderParams& p) {
  switch (p.mode) {
    case AlphaMode::kAdaptiveLimited:
      return sigmoid(p.logit.value(0, 0)) * EncoderParams::kAlphaCap;
    case AlphaMode::kAdaptiveComplete:
      return sigmoid(p.logit.value(0, 0));
    case AlphaMode::kFixed:
      return p.fixed_alpha;
  }
  return 0.0;
}

Mat encoder_forward(const EncoderParams& p, const Mat& x, EncoderCache* cache) {
  if (x.cols() != p.dim()) {
    throw ShapeError("encoder input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(p.dim()));
  }
  const double alpha = effective_alpha(p);
  if (alpha == 0.0 && !cache) return x;
  Mat pre = x * p.weight.value.transpose();
  pre.rowwise() += p.bias.value.row(0);
  nn::LayerNorm::Cache ln;
  Mat normed = p.norm.forward(pre, &ln);
  Mat z = (1.0 - alpha) * x + alpha * normed;
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->norm = std::move(ln);
    cache->normed = std::move(normed);
    cache->alpha = alpha;
  }
  return z;
}

void encoder_backward(EncoderParams& p, const EncoderCache& c, const Mat& dz) {
  const double alpha = c.alpha;
  if (p.mode != AlphaMode::kFixed) {
    const double dalpha = dz.cwiseProduct(c.normed - c.x).sum();
    const double s = sigmoid(p.logit.value(0, 0));
    const double cap = p.mode == AlphaMode::kAdaptiveLimited ? EncoderParams::kAlphaCap : 1.0;
    p.logit.grad(0, 0) += dalpha * cap * s * (1.0 - s);
  }
  Mat dpre = p.norm.backward(c.norm, alpha * dz);
  p.weight.grad.noalias() += dpre.transpose() * c.x;
  p.bias.grad.row(0) += dpre.colwise().sum();
}

}  // namespace clvq
