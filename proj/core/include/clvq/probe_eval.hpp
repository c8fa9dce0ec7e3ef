#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clvq/activation_store.hpp"
#include "clvq/concepts.hpp"
#include "clvq/nn.hpp"

namespace clvq {

struct ProbeConfig {
  int hidden = 256;
  double dropout = 0.2;
  int epochs = 100;
  int batch_size = 128;
  double lr = 5e-3;
  double weight_decay = 1e-4;
  /// Share of the training embeddings held out for best-epoch selection.
  double val_fraction = 0.1;
  std::uint64_t seed = 42;
};

/// Two-layer rectifier classifier over sentence embeddings.
struct ProbeParams {
  nn::Linear hidden;
  nn::Linear output;
  double dropout = 0.0;

  int num_classes() const { return static_cast<int>(output.out_dim()); }
  Eigen::Index dim() const { return hidden.in_dim(); }
};

/// Trains on unmodified embeddings and keeps the epoch with the best held-out accuracy.
ProbeParams train_probe(const Mat& embeddings, const std::vector<int>& labels, int num_classes,
                        const ProbeConfig& config);

/// Eval-mode logits, one row per embedding.
Mat probe_logits(const ProbeParams& probe, const Mat& embeddings);
int probe_predict(const ProbeParams& probe, const RowVec& embedding);
double probe_accuracy(const ProbeParams& probe, const Mat& embeddings,
                      const std::vector<int>& labels);
/// d logit[cls] / d embedding, eval mode.
RowVec logit_gradient(const ProbeParams& probe, const RowVec& embedding, int cls);

/// x - (<x,v>/<v,v>) v. Throws UsageError for a zero `v`.
RowVec project_out(const RowVec& x, const RowVec& v);

enum class Saliency { kGradient, kProjection };
std::string to_string(Saliency s);
Saliency parse_saliency(const std::string& s);

struct SalientChoice {
  std::size_t token = 0;
  int concept_id = 0;
  RowVec concept_vector;
};

/// Picks the token whose concept vector best explains the probe decision.
/// kGradient: argmax_t |cos(grad of predicted logit, v_t)|.
/// kProjection: argmax_t |<sent_embed, v_t>| / |v_t|.
/// Ties go to the lowest token index.
SalientChoice select_salient(const SentenceRecord& record, const ConceptModel& model,
                             const ProbeParams& probe, Saliency criterion);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct SentenceSalience {
  std::size_t record = 0;
  std::size_t token = 0;
  int concept_id = 0;
};

struct FaithfulnessReport {
  std::string method;
  std::string criterion;
  MeanStd original;
  MeanStd perturbed;
  MeanStd random;
  std::vector<SentenceSalience> salience;
};

struct FaithfulnessConfig {
  Saliency saliency = Saliency::kGradient;
  int bootstrap = 10;
  std::uint64_t seed = 42;
};

/// Scores one fixed probe on original, concept-ablated and randomly ablated
/// sentence embeddings; spread comes from bootstrap resamples of `test`.
FaithfulnessReport evaluate_faithfulness(const ActivationDataset& dataset,
                                         const std::vector<std::size_t>& test,
                                         const ConceptModel& model, const ProbeParams& probe,
                                         const FaithfulnessConfig& config);

/// Column layout: Method | Original CLS | Perturbed CLS | Random Perturbed CLS.
std::string format_report_table(const std::vector<FaithfulnessReport>& reports);
std::string reports_to_json(const std::vector<FaithfulnessReport>& reports);

/// Sentence embeddings and labels of the given records.
Mat sentence_embeddings(const ActivationDataset& dataset, const std::vector<std::size_t>& records);
std::vector<int> sentence_labels(const ActivationDataset& dataset,
                                 const std::vector<std::size_t>& records);

}  // namespace clvq
