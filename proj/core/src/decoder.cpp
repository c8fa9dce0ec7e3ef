#include "clvq/decoder.hpp"

#include "clvq/error.hpp"

namespace clvq {

void DecoderConfig::validate(Eigen::Index model_dim) const {
  if (num_layers < 1) throw UsageError("decoder needs at least one layer");
  if (num_heads < 1 || model_dim % num_heads != 0) {
    throw UsageError("model dim " + std::to_string(model_dim) +
                     " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (ffn_dim < 1) throw UsageError("ffn_dim must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw UsageError("dropout must lie in [0, 1)");
}

DecoderParams DecoderParams::init(Eigen::Index dim, const DecoderConfig& config, Rng& rng) {
  config.validate(dim);
  DecoderParams p;
  p.config = config;
  p.model_dim = dim;
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string name = "decoder.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.norm_self = nn::LayerNorm(name + ".norm_self", dim);
    layer.self_attn = nn::MultiHeadAttention(name + ".self_attn", dim, config.num_heads, rng);
    layer.norm_cross = nn::LayerNorm(name + ".norm_cross", dim);
    layer.cross_attn = nn::MultiHeadAttention(name + ".cross_attn", dim, config.num_heads, rng);
    layer.norm_ffn = nn::LayerNorm(name + ".norm_ffn", dim);
    layer.ffn_in = nn::Linear(name + ".ffn_in", dim, config.ffn_dim, rng);
    layer.ffn_out = nn::Linear(name + ".ffn_out", config.ffn_dim, dim, rng);
    p.layers.push_back(std::move(layer));
  }
  p.readout = nn::Linear("decoder.readout", dim, dim, rng);
  return p;
}

void DecoderParams::collect(nn::ParamRefs& out) {
  for (auto& l : layers) {
    l.norm_self.collect(out);
    l.self_attn.collect(out);
    l.norm_cross.collect(out);
    l.cross_attn.collect(out);
    l.norm_ffn.collect(out);
    l.ffn_in.collect(out);
    l.ffn_out.collect(out);
  }
  readout.collect(out);
}

AttentionMasks build_masks(Eigen::Index length, const std::vector<bool>& pad) {
  if (length == 0) throw ShapeError("cannot build masks for an empty sequence");
  if (!pad.empty() && static_cast<Eigen::Index>(pad.size()) != length) {
    throw ShapeError("pad mask length does not match the sequence length");
  }
  auto is_pad = [&](Eigen::Index i) { return !pad.empty() && pad[static_cast<std::size_t>(i)]; };
  bool any_real = false;
  for (Eigen::Index i = 0; i < length; ++i) any_real = any_real || !is_pad(i);
  if (!any_real) throw ShapeError("every position is padding");
  AttentionMasks m;
  m.causal.resize(length, length);
  m.cross.resize(length, length);
  for (Eigen::Index i = 0; i < length; ++i) {
    for (Eigen::Index j = 0; j < length; ++j) {
      const bool both = !is_pad(i) && !is_pad(j);
      m.cross(i, j) = both;
      m.causal(i, j) = both && j <= i;
    }
  }
  return m;
}

Mat decoder_forward(const DecoderParams& p, const Mat& z_q, const Mat& memory,
                    const std::vector<bool>& pad, Mode mode, Rng& rng, DecoderCache* cache) {
  if (z_q.cols() != p.model_dim || memory.cols() != p.model_dim || z_q.rows() != memory.rows()) {
    throw ShapeError("decoder inputs must both be T x " + std::to_string(p.model_dim));
  }
  const AttentionMasks masks = build_masks(z_q.rows(), pad);
  const double drop = mode == Mode::kTrain ? p.config.dropout : 0.0;
  const Eigen::Index t = z_q.rows();
  const Eigen::Index d = p.model_dim;

  Mat h = z_q + nn::sinusoidal_positions(t, d);
  if (cache) {
    cache->layers.assign(p.layers.size(), {});
    cache->memory = memory;
  }
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const DecoderLayer& L = p.layers[li];
    DecoderLayerCache local;
    DecoderLayerCache& c = cache ? cache->layers[li] : local;
    c.input = h;

    Mat a_in = L.norm_self.forward(h, &c.norm_self);
    Mat a = L.self_attn.forward(a_in, a_in, masks.causal, &c.self_attn);
    c.drop_self = nn::dropout_mask(t, d, drop, rng);
    h += nn::apply_mask(a, c.drop_self);

    Mat x_in = L.norm_cross.forward(h, &c.norm_cross);
    Mat x = L.cross_attn.forward(x_in, memory, masks.cross, &c.cross_attn);
    c.drop_cross = nn::dropout_mask(t, d, drop, rng);
    h += nn::apply_mask(x, c.drop_cross);

    c.ffn_input = L.norm_ffn.forward(h, &c.norm_ffn);
    c.ffn_pre = L.ffn_in.forward(c.ffn_input);
    c.drop_hidden = nn::dropout_mask(t, p.config.ffn_dim, drop, rng);
    c.ffn_hidden = nn::apply_mask(nn::relu(c.ffn_pre), c.drop_hidden);
    c.drop_out = nn::dropout_mask(t, d, drop, rng);
    h += nn::apply_mask(L.ffn_out.forward(c.ffn_hidden), c.drop_out);
  }
  if (cache) cache->final_stream = h;
  return p.readout.forward(h);
}

DecoderGrads decoder_backward(DecoderParams& p, const DecoderCache& cache, const Mat& dy) {
  Mat dh = p.readout.backward(cache.final_stream, dy);
  Mat dmem = Mat::Zero(cache.memory.rows(), cache.memory.cols());
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    DecoderLayer& L = p.layers[li];
    const DecoderLayerCache& c = cache.layers[li];

    Mat dff = nn::apply_mask(dh, c.drop_out);
    Mat dhidden = L.ffn_out.backward(c.ffn_hidden, dff);
    dhidden = nn::apply_mask(dhidden, c.drop_hidden);
    dhidden = dhidden.cwiseProduct((c.ffn_pre.array() > 0.0).cast<double>().matrix());
    Mat dffn_in = L.ffn_in.backward(c.ffn_input, dhidden);
    dh += L.norm_ffn.backward(c.norm_ffn, dffn_in);

    Mat dx = nn::apply_mask(dh, c.drop_cross);
    auto [dq_cross, dkv_cross] = L.cross_attn.backward(c.cross_attn, dx);
    dmem += dkv_cross;
    dh += L.norm_cross.backward(c.norm_cross, dq_cross);

    Mat da = nn::apply_mask(dh, c.drop_self);
    auto [dq_self, dkv_self] = L.self_attn.backward(c.self_attn, da);
    dh += L.norm_self.backward(c.norm_self, dq_self + dkv_self);
  }
  return {std::move(dh), std::move(dmem)};
}

}  // namespace clvq
