#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clvq/activation_store.hpp"
#include "clvq/concepts.hpp"

namespace clvq {

/// Tokens mapped to one concept. `tokens` is ranked by count (descending),
/// then text (ascending); text is lowercased for merging.
struct ConceptAssignment {
  int concept_id = 0;
  std::vector<std::pair<std::string, std::int64_t>> tokens;
  std::int64_t total = 0;
  /// Up to kSampleSize distinct original-case spellings, in first-seen order.
  std::vector<std::string> sample;

  static constexpr std::size_t kSampleSize = 10;
};

/// Nearest-concept assignment of every token of `records`. Concepts that
/// receive no token are omitted; the result is ordered by concept id.
std::vector<ConceptAssignment> assign_tokens(const ActivationDataset& dataset,
                                             const std::vector<std::size_t>& records,
                                             const ConceptModel& model);

struct WordcloudRequest {
  int concept_id = 0;
  std::optional<std::size_t> sentence_id;
};

struct WordcloudRecord {
  int concept_id = 0;
  std::vector<std::pair<std::string, std::int64_t>> tokens;
  std::optional<std::size_t> sentence_id;
  std::string method;
};

/// Writes one JSON object per line:
///   {"concept_id":..,"tokens":[[text,count],..],"sentence_id":..|null,"method":..}
/// Throws UsageError for ids outside [0, num_concepts).
void export_wordcloud_data(const std::vector<ConceptAssignment>& assignments, int num_concepts,
                           const std::vector<WordcloudRequest>& requests,
                           const std::string& method, const std::string& path);
std::vector<WordcloudRecord> read_wordcloud_data(const std::string& path);

std::string to_lower_ascii(std::string s);

}  // namespace clvq
