#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clvq/activation_store.hpp"
#include "clvq/kv_text.hpp"

namespace clvq {

/// Planted-concept data: every token is a noisy, randomly scaled copy of one
/// of `concepts` unit directions. Each sentence carries exactly one token from
/// a label concept, and that concept alone determines the sentence label.
/// Sentence embeddings are the sum of the token activations plus noise.
struct SynthConfig {
  int concepts = 32;
  int dim = 64;
  int sentences = 1000;
  int min_tokens = 6;
  int max_tokens = 10;
  int label_concepts = 8;
  int classes = 2;
  int words_per_concept = 3;
  double magnitude_min = 0.2;
  double magnitude_max = 3.0;
  double noise = 0.05;
  double embed_noise = 0.05;
  /// Scale of the random perturbation of the identity in the layer-l -> layer-h map.
  double layer_mixing = 0.3;
  double layer_shift = 0.5;
  int layer_l = 4;
  int layer_h = 8;
  std::uint64_t seed = 42;
  SplitFractions fractions{0.6, 0.1, 0.3};

  void validate() const;
  void to_kv(KvText& out) const;
  static SynthConfig from_kv(const KvText& kv);
  static std::vector<std::string> config_keys();
};

struct SynthOutput {
  ActivationDataset dataset;
  Mat directions;                               // concepts x dim, unit rows
  std::vector<std::vector<int>> token_concepts;  // per record, per token
  std::vector<std::size_t> label_position;       // per record
};

SynthOutput generate_planted(const SynthConfig& config);

/// Concept id encoded in a generated token string, or -1.
int planted_concept_of(const std::string& token);

}  // namespace clvq
