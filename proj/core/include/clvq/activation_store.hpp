#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "clvq/types.hpp"

namespace clvq {

inline constexpr int kDatasetFormatVersion = 1;

struct ActivationManifest {
  int format_version = kDatasetFormatVersion;
  std::string model_name;
  int layer_l = 0;
  int layer_h = 0;
  int embedding_dim = 0;
  std::size_t num_sentences = 0;
  std::vector<std::string> label_names;
  /// Only "little" is accepted.
  std::string endianness = "little";

  bool single_layer() const { return layer_l == layer_h; }
};

/// One sentence: word tokens with paired layer-l / layer-h activations.
struct SentenceRecord {
  std::vector<std::string> tokens;
  MatF acts_l;  // T x d
  MatF acts_h;  // T x d
  VecF sent_embed;
  std::uint32_t label = 0;

  std::size_t length() const { return tokens.size(); }
};

enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

struct ActivationDataset {
  ActivationManifest manifest;
  std::vector<SentenceRecord> records;
  std::vector<Split> split_assignment;

  /// Indices of the records tagged with `split`, ascending.
  std::vector<std::size_t> indices(Split split) const;
  std::size_t token_count(Split split) const;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Throws DataError/ShapeError describing the first violated invariant.
void validate(const ActivationDataset& dataset);

/// Writes `manifest.txt` and `records.bin` into `dir` (created if missing).
void write_dataset(const ActivationDataset& dataset, const std::string& dir);
ActivationDataset read_dataset(const std::string& dir);

/// Returns a copy of `dataset` with a seeded, deterministic split assignment.
ActivationDataset split_dataset(const ActivationDataset& dataset, SplitFractions fractions,
                                std::uint64_t seed);

/// Row-stacks the layer-l (or layer-h) token activations of the given records.
Mat stack_tokens(const ActivationDataset& dataset, const std::vector<std::size_t>& records,
                 bool higher_layer = false);

}  // namespace clvq
