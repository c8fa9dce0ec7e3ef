#include <gtest/gtest.h>

#include <cmath>

#include "clvq/error.hpp"
#include "clvq/probe_eval.hpp"
#include "clvq/synth.hpp"
#include "support/test_util.hpp"

namespace clvq {
namespace {

// Concept of a token is the token itself.
class IdentityConcepts : public ConceptModel {
 public:
  explicit IdentityConcepts(Eigen::Index d) : d_(d) {}
  std::string method() const override { return "identity"; }
  Eigen::Index dim() const override { return d_; }
  int num_concepts() const override { return 1; }
  ConceptHit concept_for_token(const RowVec& token) const override { return {0, token}; }

 private:
  Eigen::Index d_;
};

// Concept of a token is the planted direction it is most aligned with.
class PlantedConcepts : public ConceptModel {
 public:
  explicit PlantedConcepts(Mat directions) : dirs_(std::move(directions)) {}
  std::string method() const override { return "planted"; }
  Eigen::Index dim() const override { return dirs_.cols(); }
  int num_concepts() const override { return static_cast<int>(dirs_.rows()); }
  ConceptHit concept_for_token(const RowVec& token) const override {
    Eigen::Index best = 0;
    (dirs_ * token.transpose()).cwiseAbs().maxCoeff(&best);
    return {static_cast<int>(best), dirs_.row(best)};
  }

 private:
  Mat dirs_;
};

// Fixed direction regardless of the token.
class ConstantConcept : public ConceptModel {
 public:
  explicit ConstantConcept(RowVec v) : v_(std::move(v)) {}
  std::string method() const override { return "constant"; }
  Eigen::Index dim() const override { return v_.size(); }
  int num_concepts() const override { return 1; }
  ConceptHit concept_for_token(const RowVec&) const override { return {0, v_}; }

 private:
  RowVec v_;
};

ProbeConfig fast_probe(std::uint64_t seed = 1) {
  ProbeConfig c;
  c.hidden = 32;
  c.epochs = 40;
  c.seed = seed;
  return c;
}

void blobs(int n, int d, double gap, Rng& rng, Mat& x, std::vector<int>& y) {
  std::normal_distribution<double> noise(0.0, 1.0);
  x.resize(n, d);
  y.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    y[static_cast<std::size_t>(i)] = label;
    for (int j = 0; j < d; ++j) x(i, j) = noise(rng) + (j == 0 ? (label ? gap : -gap) : 0.0);
  }
}

TEST(Probe, SeparableBlobs) {
  Rng rng(1);
  Mat train_x, test_x;
  std::vector<int> train_y, test_y;
  blobs(400, 16, 4.0, rng, train_x, train_y);
  blobs(400, 16, 4.0, rng, test_x, test_y);
  const ProbeParams probe = train_probe(train_x, train_y, 2, ProbeConfig{});
  EXPECT_EQ(probe.hidden.out_dim(), 256);
  EXPECT_GE(probe_accuracy(probe, test_x, test_y), 0.95);
}

TEST(Probe, ShuffledLabelsAreChance) {
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Mat train_x, test_x;
    std::vector<int> train_y, test_y;
    blobs(200, 8, 0.0, rng, train_x, train_y);
    blobs(1000, 8, 0.0, rng, test_x, test_y);
    std::shuffle(train_y.begin(), train_y.end(), rng);
    total += probe_accuracy(train_probe(train_x, train_y, 2, fast_probe(seed)), test_x, test_y);
  }
  EXPECT_NEAR(total / 5.0, 0.5, 0.05);
}

TEST(Probe, OneExamplePerClass) {
  Mat x(2, 3);
  x << 1, 0, 0, 0, 1, 0;
  const ProbeParams probe = train_probe(x, {0, 1}, 2, fast_probe());
  const double acc = probe_accuracy(probe, x, {0, 1});
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST(Probe, Errors) {
  Mat x = Mat::Ones(4, 2);
  EXPECT_THROW(train_probe(x, {0, 0, 0, 0}, 2, fast_probe()), UsageError);
  EXPECT_THROW(train_probe(x.topRows(1), {0}, 2, fast_probe()), UsageError);
  EXPECT_THROW(train_probe(x, {0, 1, 0}, 2, fast_probe()), ShapeError);
  EXPECT_THROW(train_probe(x, {0, 1, 0, 1}, 1, fast_probe()), UsageError);
}

TEST(Probe, LogitGradientMatchesDifferences) {
  Rng rng(3);
  Mat x;
  std::vector<int> y;
  blobs(50, 5, 2.0, rng, x, y);
  const ProbeParams probe = train_probe(x, y, 2, fast_probe());
  const RowVec e = x.row(3);
  const RowVec g = logit_gradient(probe, e, 1);
  for (Eigen::Index j = 0; j < 5; ++j) {
    RowVec p = e, m = e;
    p(j) += 1e-6;
    m(j) -= 1e-6;
    const double fd = (probe_logits(probe, p)(0, 1) - probe_logits(probe, m)(0, 1)) / 2e-6;
    EXPECT_NEAR(g(j), fd, 1e-5);
  }
}

TEST(ProjectOut, Examples) {
  RowVec x(2), v(2);
  x << 1, 1;
  v << 1, 0;
  EXPECT_TRUE(project_out(x, v).isApprox(RowVec(RowVec::Unit(2, 1))));
  x << 2, 3;
  v << 0, 5;
  const RowVec r = project_out(x, v);
  EXPECT_DOUBLE_EQ(r(0), 2.0);
  EXPECT_DOUBLE_EQ(r(1), 0.0);
  EXPECT_EQ(project_out(v, v).norm(), 0.0);
  EXPECT_THROW(project_out(x, RowVec::Zero(2)), UsageError);
}

TEST(ProjectOut, OrthogonalIdempotentNonExpanding) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const RowVec x = test::random_matrix(1, 7, rng, 3.0);
    const RowVec v = test::random_matrix(1, 7, rng, 0.5);
    const RowVec p = project_out(x, v);
    const double scale = x.norm() * v.norm();
    EXPECT_LE(std::abs(p.dot(v)), 1e-6 * scale);
    EXPECT_LE((project_out(p, v) - p).norm(), 1e-6 * x.norm());
    EXPECT_LE(p.norm(), x.norm() * (1 + 1e-12));
  }
}

ProbeParams linear_probe(const RowVec& w) {
  // hidden = x + 10 (kept positive), logit0 = w.hidden + 100, logit1 = 0.
  const auto d = w.size();
  Rng rng(0);
  ProbeParams p;
  p.hidden = nn::Linear("h", d, d, rng);
  p.hidden.weight.value = Mat::Identity(d, d);
  p.hidden.bias.value = RowVec::Constant(d, 10.0);
  p.output = nn::Linear("o", d, 2, rng);
  p.output.weight.value = Mat::Zero(2, d);
  p.output.weight.value.row(0) = w;
  p.output.bias.value.setZero();
  p.output.bias.value(0, 0) = 100.0;
  return p;
}

SentenceRecord record_of(const Mat& tokens, const RowVec& sent) {
  SentenceRecord r;
  for (Eigen::Index t = 0; t < tokens.rows(); ++t) r.tokens.push_back("t" + std::to_string(t));
  r.acts_l = tokens.cast<float>();
  r.acts_h = r.acts_l;
  r.sent_embed = sent.transpose().cast<float>();
  return r;
}

TEST(SelectSalient, SingleToken) {
  Rng rng(5);
  const RowVec w = test::random_matrix(1, 4, rng);
  const SentenceRecord r = record_of(test::random_matrix(1, 4, rng), RowVec::Zero(4));
  const IdentityConcepts model(4);
  EXPECT_EQ(select_salient(r, model, linear_probe(w), Saliency::kGradient).token, 0u);
  EXPECT_EQ(select_salient(r, model, linear_probe(w), Saliency::kProjection).token, 0u);
}

TEST(SelectSalient, GradientAlignedToken) {
  RowVec w = RowVec::Zero(6);
  w(5) = 2.0;
  Mat tokens = Mat::Zero(5, 6);
  for (int t = 0; t < 5; ++t) tokens(t, t) = 1.0 + t;  // orthogonal to w
  tokens(3, 5) = -0.5;
  tokens(3, 3) = 0.0;
  const SentenceRecord r = record_of(tokens, RowVec::Zero(6));
  const SalientChoice c = select_salient(r, IdentityConcepts(6), linear_probe(w), Saliency::kGradient);
  EXPECT_EQ(c.token, 3u);
  EXPECT_TRUE(c.concept_vector.isApprox(RowVec(tokens.row(3))));
}

TEST(SelectSalient, ProjectionCriterionAndTies) {
  Mat tokens = Mat::Zero(3, 3);
  tokens.row(0) << 1, 0, 0;
  tokens.row(1) << 0, 1, 0;
  tokens.row(2) << 0, 2, 0;
  RowVec sent(3);
  sent << 0.5, 3.0, 0.0;
  const SentenceRecord r = record_of(tokens, sent);
  const RowVec w = RowVec::Ones(3);
  // Tokens 1 and 2 share a direction; the lower index wins.
  EXPECT_EQ(select_salient(r, IdentityConcepts(3), linear_probe(w), Saliency::kProjection).token,
            1u);
  EXPECT_EQ(parse_saliency("projection"), Saliency::kProjection);
  EXPECT_THROW(parse_saliency("occlusion"), UsageError);
}

TEST(SelectSalient, AllZeroConceptsRejected) {
  const SentenceRecord r = record_of(Mat::Zero(2, 3), RowVec::Ones(3));
  EXPECT_THROW(select_salient(r, IdentityConcepts(3), linear_probe(RowVec::Ones(3)),
                              Saliency::kGradient),
               NumericError);
}

class PlantedTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SynthConfig cfg;
    cfg.sentences = 400;
    cfg.dim = 32;
    cfg.concepts = 16;
    cfg.label_concepts = 4;
    cfg.seed = 3;
    out_ = new SynthOutput(generate_planted(cfg));
    const auto& ds = out_->dataset;
    const auto train = ds.indices(Split::kTrain);
    probe_ = new ProbeParams(train_probe(sentence_embeddings(ds, train),
                                         sentence_labels(ds, train), 2, fast_probe()));
  }
  static void TearDownTestSuite() {
    delete out_;
    delete probe_;
  }
  static SynthOutput* out_;
  static ProbeParams* probe_;
};
SynthOutput* PlantedTest::out_ = nullptr;
ProbeParams* PlantedTest::probe_ = nullptr;

TEST_F(PlantedTest, GradientSelectionRecoversLabelToken) {
  const auto& ds = out_->dataset;
  const PlantedConcepts model(out_->directions);
  const auto test_idx = ds.indices(Split::kTest);
  int hits = 0;
  for (auto i : test_idx) {
    hits += select_salient(ds.records[i], model, *probe_, Saliency::kGradient).token ==
            out_->label_position[i];
  }
  EXPECT_GE(hits, static_cast<int>(0.9 * static_cast<double>(test_idx.size())));
}

TEST_F(PlantedTest, FaithfulnessSeparation) {
  const auto& ds = out_->dataset;
  const auto test_idx = ds.indices(Split::kTest);
  const FaithfulnessReport r =
      evaluate_faithfulness(ds, test_idx, PlantedConcepts(out_->directions), *probe_, {});
  EXPECT_EQ(r.method, "planted");
  EXPECT_EQ(r.criterion, "gradient");
  EXPECT_EQ(r.salience.size(), test_idx.size());
  EXPECT_LT(r.perturbed.mean, r.random.mean - 0.1);
  EXPECT_GT(r.original.mean, 0.9);
  for (const MeanStd& m : {r.original, r.perturbed, r.random}) {
    EXPECT_GE(m.mean, 0.0);
    EXPECT_LE(m.mean, 1.0);
    EXPECT_GE(m.std, 0.0);
  }
  const FaithfulnessReport again =
      evaluate_faithfulness(ds, test_idx, PlantedConcepts(out_->directions), *probe_, {});
  EXPECT_EQ(again.random.mean, r.random.mean);
  EXPECT_EQ(again.random.std, r.random.std);
}

TEST_F(PlantedTest, NullPerturbationKeepsAccuracy) {
  // Zero out the last coordinate so a concept along it removes nothing.
  ActivationDataset ds = out_->dataset;
  for (auto& rec : ds.records) rec.sent_embed(ds.manifest.embedding_dim - 1) = 0.0f;
  const RowVec v = RowVec::Unit(ds.manifest.embedding_dim, ds.manifest.embedding_dim - 1);
  const auto test_idx = ds.indices(Split::kTest);
  const FaithfulnessReport r = evaluate_faithfulness(ds, test_idx, ConstantConcept(v), *probe_, {});
  EXPECT_DOUBLE_EQ(r.perturbed.mean, r.original.mean);
  EXPECT_THROW(evaluate_faithfulness(ds, {}, ConstantConcept(v), *probe_, {}), UsageError);
}

TEST(Report, TableAndJsonLayout) {
  FaithfulnessReport r;
  r.method = "clvqvae";
  r.criterion = "gradient";
  r.original = {0.9, 0.01};
  r.perturbed = {0.6, 0.02};
  r.random = {0.88, 0.015};
  r.salience.push_back({4, 1, 7});
  const std::string table = format_report_table({r});
  EXPECT_EQ(table.rfind("| Method | Original CLS | Perturbed CLS | Random Perturbed CLS |", 0), 0u);
  EXPECT_NE(table.find("| clvqvae | 0.9000 ± 0.0100 | 0.6000 ± 0.0200 | 0.8800 ± 0.0150 |"),
            std::string::npos);
  const std::string json = reports_to_json({r});
  EXPECT_NE(json.find("\"perturbed_acc\""), std::string::npos);
  EXPECT_NE(json.find("\"concept_id\": 7"), std::string::npos);
}

}  // namespace
}  // namespace clvq
