#include <gtest/gtest.h>

#include <algorithm>

#include "clvq/decoder.hpp"
#include "clvq/error.hpp"
#include "support/test_util.hpp"

namespace clvq {
namespace {

DecoderParams small_decoder(Eigen::Index d, int layers, int heads, Rng& rng, double dropout = 0.0) {
  DecoderConfig cfg;
  cfg.num_layers = layers;
  cfg.num_heads = heads;
  cfg.ffn_dim = 2 * static_cast<int>(d);
  cfg.dropout = dropout;
  DecoderParams p = DecoderParams::init(d, cfg, rng);
  // Move the norms and attention biases off their neutral initial values.
  nn::ParamRefs params;
  p.collect(params);
  for (auto* q : params) {
    if (q->name.find("norm") != std::string::npos || q->name.find("attn") != std::string::npos) {
      q->value += test::random_matrix(q->value.rows(), q->value.cols(), rng, 0.1);
    }
  }
  return p;
}

TEST(BuildMasks, LowerTriangularWithoutPadding) {
  const AttentionMasks m = build_masks(3, {});
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      EXPECT_EQ(m.causal(i, j), j <= i);
      EXPECT_TRUE(m.cross(i, j));
    }
  }
}

TEST(BuildMasks, PaddedPositionExcluded) {
  const AttentionMasks m = build_masks(3, {false, false, true});
  for (int i = 0; i < 3; ++i) {
    EXPECT_FALSE(m.causal(2, i));
    EXPECT_FALSE(m.causal(i, 2));
    EXPECT_FALSE(m.cross(2, i));
    EXPECT_FALSE(m.cross(i, 2));
  }
  EXPECT_TRUE(m.causal(1, 0));
  EXPECT_FALSE(m.causal(0, 1));
  EXPECT_TRUE(m.cross(0, 1));
}

TEST(BuildMasks, Errors) {
  EXPECT_THROW(build_masks(0, {}), ShapeError);
  EXPECT_THROW(build_masks(2, {true, true}), ShapeError);
  EXPECT_THROW(build_masks(2, {false}), ShapeError);
}

TEST(DecoderConfig, Validation) {
  DecoderConfig c;
  EXPECT_THROW(c.validate(12), UsageError);
  EXPECT_NO_THROW(c.validate(16));
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(16), UsageError);
  c = DecoderConfig{};
  c.num_layers = 0;
  EXPECT_THROW(c.validate(16), UsageError);
}

TEST(Decoder, LengthOneDependsOnlyOnThatRow) {
  Rng rng(1);
  const DecoderParams p = small_decoder(8, 2, 2, rng);
  const Mat z = test::random_matrix(1, 8, rng);
  const Mat mem = test::random_matrix(1, 8, rng);
  Rng unused(0);
  const Mat a = decoder_forward(p, z, mem, {}, Mode::kEval, unused);
  const Mat b = decoder_forward(p, z, mem, {}, Mode::kEval, unused);
  EXPECT_EQ(a.rows(), 1);
  EXPECT_EQ(a, b);
}

TEST(Decoder, ShapeMismatchRejected) {
  Rng rng(2);
  const DecoderParams p = small_decoder(8, 1, 2, rng);
  EXPECT_THROW(decoder_forward(p, Mat::Zero(3, 8), Mat::Zero(2, 8), {}, Mode::kEval, rng),
               ShapeError);
  EXPECT_THROW(decoder_forward(p, Mat::Zero(3, 4), Mat::Zero(3, 4), {}, Mode::kEval, rng),
               ShapeError);
}

TEST(Decoder, CausalForEveryDepth) {
  for (int layers = 1; layers <= 6; ++layers) {
    Rng rng(static_cast<std::uint64_t>(10 + layers));
    const DecoderParams p = small_decoder(16, layers, 4, rng);
    const Mat z = test::random_matrix(6, 16, rng);
    const Mat mem = test::random_matrix(6, 16, rng);
    Rng unused(0);
    const Mat base = decoder_forward(p, z, mem, {}, Mode::kEval, unused);
    EXPECT_EQ(base.rows(), 6);
    EXPECT_EQ(base.cols(), 16);
    for (Eigen::Index t = 0; t + 1 < 6; ++t) {
      Mat changed = z;
      changed.bottomRows(5 - t) += test::random_matrix(5 - t, 16, rng, 3.0);
      const Mat out = decoder_forward(p, changed, mem, {}, Mode::kEval, unused);
      EXPECT_LT((out.topRows(t + 1) - base.topRows(t + 1)).cwiseAbs().maxCoeff(), 1e-6)
          << "layers=" << layers << " t=" << t;
      EXPECT_GT((out.row(t + 1) - base.row(t + 1)).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Decoder, EvalIsBitwiseDeterministic) {
  Rng rng(3);
  const DecoderParams p = small_decoder(8, 2, 2, rng, 0.3);
  const Mat z = test::random_matrix(4, 8, rng);
  const Mat mem = test::random_matrix(4, 8, rng);
  Rng r1(1), r2(2);
  EXPECT_EQ(decoder_forward(p, z, mem, {}, Mode::kEval, r1),
            decoder_forward(p, z, mem, {}, Mode::kEval, r2));
}

TEST(Decoder, DropoutOnlyInTrainMode) {
  Rng rng(4);
  const DecoderParams p = small_decoder(8, 2, 2, rng, 0.5);
  const Mat z = test::random_matrix(4, 8, rng);
  const Mat mem = test::random_matrix(4, 8, rng);
  Rng r1(1), r2(2);
  const Mat a = decoder_forward(p, z, mem, {}, Mode::kTrain, r1);
  const Mat b = decoder_forward(p, z, mem, {}, Mode::kTrain, r2);
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Decoder, PermutingSentencesPermutesOutputs) {
  Rng rng(5);
  const DecoderParams p = small_decoder(8, 2, 2, rng);
  std::vector<Mat> z, mem, out;
  for (int s = 0; s < 4; ++s) {
    z.push_back(test::random_matrix(2 + s, 8, rng));
    mem.push_back(test::random_matrix(2 + s, 8, rng));
  }
  Rng unused(0);
  for (int s = 0; s < 4; ++s) out.push_back(decoder_forward(p, z[s], mem[s], {}, Mode::kEval, unused));
  const std::vector<int> perm{2, 0, 3, 1};
  for (int i = 0; i < 4; ++i) {
    const int s = perm[static_cast<std::size_t>(i)];
    EXPECT_EQ(decoder_forward(p, z[s], mem[s], {}, Mode::kEval, unused), out[s]);
  }
}

TEST(Decoder, PaddingMatchesUnpaddedPrefix) {
  Rng rng(6);
  const DecoderParams p = small_decoder(8, 2, 2, rng);
  const Mat z = test::random_matrix(4, 8, rng);
  const Mat mem = test::random_matrix(4, 8, rng);
  Rng unused(0);
  const Mat padded = decoder_forward(p, z, mem, {false, false, false, true}, Mode::kEval, unused);
  const Mat short_out = decoder_forward(p, z.topRows(3), mem.topRows(3), {}, Mode::kEval, unused);
  EXPECT_LT((padded.topRows(3) - short_out).cwiseAbs().maxCoeff(), 1e-12);
}

class DecoderGradient : public ::testing::TestWithParam<int> {};

TEST_P(DecoderGradient, MatchesCentralDifferences) {
  const int seed = GetParam();
  Rng rng(static_cast<std::uint64_t>(seed));
  const Eigen::Index d = 16, t = 4;
  DecoderParams p = small_decoder(d, 2, 4, rng);
  const Mat z = test::random_matrix(t, d, rng);
  const Mat mem = test::random_matrix(t, d, rng);
  const Mat y = test::random_matrix(t, d, rng);
  Rng unused(0);

  nn::ParamRefs params;
  p.collect(params);
  for (auto* q : params) q->zero_grad();
  DecoderCache cache;
  const Mat y_hat = decoder_forward(p, z, mem, {}, Mode::kEval, unused, &cache);
  const DecoderGrads g = decoder_backward(p, cache, (2.0 / t) * (y_hat - y));

  const auto loss = [&] {
    return (y - decoder_forward(p, z, mem, {}, Mode::kEval, unused)).squaredNorm() / t;
  };
  std::size_t total = 0, checked = 0;
  double worst = 0.0;
  for (auto* q : params) {
    auto entries = test::all_entries(*q);
    total += entries.size();
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(std::max<std::size_t>(2, entries.size() / 100));
    const auto check = test::check_gradient(*q, loss, entries);
    worst = std::max(worst, check.max_rel_error);
    checked += check.checked;
    EXPECT_LT(check.max_rel_error, 1e-3) << q->name;
  }
  EXPECT_GE(checked * 100, total);

  // Input and memory gradients.
  nn::Param zin("z_q", z), min("memory", mem);
  zin.grad = g.d_input;
  min.grad = g.d_memory;
  const auto loss_z = [&] {
    return (y - decoder_forward(p, zin.value, mem, {}, Mode::kEval, unused)).squaredNorm() / t;
  };
  const auto loss_m = [&] {
    return (y - decoder_forward(p, z, min.value, {}, Mode::kEval, unused)).squaredNorm() / t;
  };
  EXPECT_LT(test::check_gradient(zin, loss_z, test::all_entries(zin)).max_rel_error, 1e-3);
  EXPECT_LT(test::check_gradient(min, loss_m, test::all_entries(min)).max_rel_error, 1e-3);
}

INSTANTIATE_TEST_SUITE_P(Seeds, DecoderGradient, ::testing::Values(1, 2, 3));

}  // namespace
}  // namespace clvq
