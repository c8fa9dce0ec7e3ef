#pragma once

#include "clvq/nn.hpp"
#include "clvq/types.hpp"

namespace clvq {

enum class AlphaMode {
  kAdaptiveLimited,   // alpha = sigmoid(a) * 0.5
  kAdaptiveComplete,  // alpha = sigmoid(a)
  kFixed,             // alpha constant, a unused
};

/// Residual interpolation encoder:
///   z_e = (1 - alpha) * x + alpha * LN(W x + b)
/// applied independently to every row of x.
struct EncoderParams {
  static constexpr double kAlphaCap = 0.5;
  static constexpr double kInitLogit = -1.0;

  nn::Param weight;   // d x d
  nn::Param bias;     // 1 x d
  nn::LayerNorm norm;
  nn::Param logit;    // 1 x 1, the interpolation logit a
  AlphaMode mode = AlphaMode::kAdaptiveLimited;
  double fixed_alpha = 0.0;

  /// Identity weight, zero bias, a = -1.
  static EncoderParams identity_init(Eigen::Index dim, AlphaMode mode = AlphaMode::kAdaptiveLimited,
                                     double fixed_alpha = 0.0);

  Eigen::Index dim() const { return weight.value.rows(); }
  void collect(nn::ParamRefs& out);
};

double effective_alpha(const EncoderParams& params);

struct EncoderCache {
  Mat x;
  Mat pre;  // W x + b
  nn::LayerNorm::Cache norm;
  Mat normed;
  double alpha = 0.0;
};

Mat encoder_forward(const EncoderParams& params, const Mat& x, EncoderCache* cache = nullptr);

/// Accumulates parameter gradients given dL/dz_e. The input is data, so no
/// input gradient is returned.
void encoder_backward(EncoderParams& params, const EncoderCache& cache, const Mat& dz);

}  // namespace clvq
