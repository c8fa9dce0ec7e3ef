#pragma once

#include <vector>

#include "clvq/nn.hpp"
#include "clvq/types.hpp"

namespace clvq {

struct DecoderConfig {
  int num_layers = 6;
  int num_heads = 8;
  int ffn_dim = 2048;
  double dropout = 0.1;

  void validate(Eigen::Index model_dim) const;
};

struct DecoderLayer {
  nn::LayerNorm norm_self, norm_cross, norm_ffn;
  nn::MultiHeadAttention self_attn, cross_attn;
  nn::Linear ffn_in, ffn_out;
};

/// Pre-norm transformer decoder: causal self-attention over the quantized
/// stream, cross-attention into the unquantized encoder output, and a
/// position-wise feed-forward block, followed by a linear read-out.
struct DecoderParams {
  DecoderConfig config;
  Eigen::Index model_dim = 0;
  std::vector<DecoderLayer> layers;
  nn::Linear readout;

  static DecoderParams init(Eigen::Index model_dim, const DecoderConfig& config, Rng& rng);
  void collect(nn::ParamRefs& out);
};

struct AttentionMasks {
  nn::Mask causal;
  nn::Mask cross;
};

/// Throws ShapeError when T = 0 or every position is padding.
AttentionMasks build_masks(Eigen::Index length, const std::vector<bool>& pad);

struct DecoderLayerCache {
  Mat input;
  nn::LayerNorm::Cache norm_self, norm_cross, norm_ffn;
  nn::MultiHeadAttention::Cache self_attn, cross_attn;
  Mat drop_self, drop_cross, drop_hidden, drop_out;
  Mat ffn_input, ffn_pre, ffn_hidden;
};

struct DecoderCache {
  std::vector<DecoderLayerCache> layers;
  Mat memory;
  Mat final_stream;
};

/// `pad` may be empty (no padding). Dropout is drawn from `rng` in train mode only.
Mat decoder_forward(const DecoderParams& params, const Mat& z_q, const Mat& memory,
                    const std::vector<bool>& pad, Mode mode, Rng& rng,
                    DecoderCache* cache = nullptr);

struct DecoderGrads {
  Mat d_input;   // wrt z_q
  Mat d_memory;  // wrt memory
};

DecoderGrads decoder_backward(DecoderParams& params, const DecoderCache& cache, const Mat& dy);

}  // namespace clvq
