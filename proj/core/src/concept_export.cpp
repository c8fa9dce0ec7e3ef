#include "clvq/concept_export.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clvq/binary_io.hpp"
#include "clvq/error.hpp"

namespace clvq {

std::string to_lower_ascii(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<ConceptAssignment> assign_tokens(const ActivationDataset& ds,
                                             const std::vector<std::size_t>& records,
                                             const ConceptModel& model) {
  struct Acc {
    std::map<std::string, std::int64_t> counts;
    std::int64_t total = 0;
    std::vector<std::string> sample;
  };
  std::map<int, Acc> by_concept;
  for (auto i : records) {
    const SentenceRecord& r = ds.records[i];
    for (Eigen::Index t = 0; t < r.acts_l.rows(); ++t) {
      const int id = model.concept_for_token(r.acts_l.row(t).cast<double>()).id;
      Acc& acc = by_concept[id];
      const std::string& word = r.tokens[static_cast<std::size_t>(t)];
      ++acc.counts[to_lower_ascii(word)];
      ++acc.total;
      if (acc.sample.size() < ConceptAssignment::kSampleSize &&
          std::find(acc.sample.begin(), acc.sample.end(), word) == acc.sample.end()) {
        acc.sample.push_back(word);
      }
    }
  }
  std::vector<ConceptAssignment> out;
  for (auto& [id, acc] : by_concept) {
    ConceptAssignment a;
    a.concept_id = id;
    a.total = acc.total;
    a.sample = std::move(acc.sample);
    a.tokens.assign(acc.counts.begin(), acc.counts.end());
    std::stable_sort(a.tokens.begin(), a.tokens.end(),
                     [](const auto& x, const auto& y) { return x.second > y.second; });
    out.push_back(std::move(a));
  }
  return out;
}

void export_wordcloud_data(const std::vector<ConceptAssignment>& assignments, int num_concepts,
                           const std::vector<WordcloudRequest>& requests,
                           const std::string& method, const std::string& path) {
  std::string text;
  for (const auto& req : requests) {
    if (req.concept_id < 0 || req.concept_id >= num_concepts) {
      throw UsageError("unknown concept id " + std::to_string(req.concept_id) + " (have " +
                       std::to_string(num_concepts) + ")");
    }
    nlohmann::ordered_json j;
    j["concept_id"] = req.concept_id;
    nlohmann::ordered_json toks = nlohmann::ordered_json::array();
    for (const auto& a : assignments) {
      if (a.concept_id != req.concept_id) continue;
      for (const auto& [word, count] : a.tokens) toks.push_back({word, count});
    }
    j["tokens"] = std::move(toks);
    j["sentence_id"] = req.sentence_id ? nlohmann::ordered_json(*req.sentence_id)
                                       : nlohmann::ordered_json(nullptr);
    j["method"] = method;
    text += j.dump();
    text += '\n';
  }
  write_file(path, {text.data(), text.size()});
}

std::vector<WordcloudRecord> read_wordcloud_data(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<WordcloudRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      WordcloudRecord r;
      r.concept_id = j.at("concept_id").get<int>();
      for (const auto& t : j.at("tokens")) {
        r.tokens.emplace_back(t.at(0).get<std::string>(), t.at(1).get<std::int64_t>());
      }
      if (!j.at("sentence_id").is_null()) r.sentence_id = j.at("sentence_id").get<std::size_t>();
      r.method = j.at("method").get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace clvq
