#include "clvq/synth.hpp"

#include <cctype>
#include <cstdio>

#include "clvq/error.hpp"

namespace clvq {

void SynthConfig::validate() const {
  if (dim < 1) throw UsageError("dim must be positive");
  if (classes < 2) throw UsageError("need at least two classes");
  if (label_concepts < classes) throw UsageError("need at least one label concept per class");
  if (concepts <= label_concepts) throw UsageError("need at least one non-label concept");
  if (sentences < 1) throw UsageError("sentences must be positive");
  if (min_tokens < 1 || max_tokens < min_tokens) throw UsageError("invalid token count range");
  if (words_per_concept < 1) throw UsageError("words_per_concept must be positive");
  if (!(magnitude_min > 0.0) || magnitude_max < magnitude_min) {
    throw UsageError("invalid magnitude range");
  }
  if (noise < 0.0 || embed_noise < 0.0 || layer_mixing < 0.0) {
    throw UsageError("noise levels must be non-negative");
  }
  if (layer_l > layer_h) throw UsageError("layer_l must not exceed layer_h");
}

std::vector<std::string> SynthConfig::config_keys() {
  return {"concepts", "dim", "sentences", "min_tokens", "max_tokens", "label_concepts",
          "classes", "words_per_concept", "magnitude_min", "magnitude_max", "noise",
          "embed_noise", "layer_mixing", "layer_shift", "layer_l", "layer_h", "seed",
          "train_fraction", "val_fraction", "test_fraction"};
}

void SynthConfig::to_kv(KvText& kv) const {
  kv.set("concepts", std::to_string(concepts));
  kv.set("dim", std::to_string(dim));
  kv.set("sentences", std::to_string(sentences));
  kv.set("min_tokens", std::to_string(min_tokens));
  kv.set("max_tokens", std::to_string(max_tokens));
  kv.set("label_concepts", std::to_string(label_concepts));
  kv.set("classes", std::to_string(classes));
  kv.set("words_per_concept", std::to_string(words_per_concept));
  kv.set("magnitude_min", format_double(magnitude_min));
  kv.set("magnitude_max", format_double(magnitude_max));
  kv.set("noise", format_double(noise));
  kv.set("embed_noise", format_double(embed_noise));
  kv.set("layer_mixing", format_double(layer_mixing));
  kv.set("layer_shift", format_double(layer_shift));
  kv.set("layer_l", std::to_string(layer_l));
  kv.set("layer_h", std::to_string(layer_h));
  kv.set("seed", std::to_string(seed));
  kv.set("train_fraction", format_double(fractions.train));
  kv.set("val_fraction", format_double(fractions.val));
  kv.set("test_fraction", format_double(fractions.test));
}

SynthConfig SynthConfig::from_kv(const KvText& kv) {
  SynthConfig c;
  auto int_of = [&](const char* key, int& field) {
    if (auto v = kv.find(key)) field = static_cast<int>(parse_int(*v, key));
  };
  auto dbl_of = [&](const char* key, double& field) {
    if (auto v = kv.find(key)) field = parse_double(*v, key);
  };
  int_of("concepts", c.concepts);
  int_of("dim", c.dim);
  int_of("sentences", c.sentences);
  int_of("min_tokens", c.min_tokens);
  int_of("max_tokens", c.max_tokens);
  int_of("label_concepts", c.label_concepts);
  int_of("classes", c.classes);
  int_of("words_per_concept", c.words_per_concept);
  dbl_of("magnitude_min", c.magnitude_min);
  dbl_of("magnitude_max", c.magnitude_max);
  dbl_of("noise", c.noise);
  dbl_of("embed_noise", c.embed_noise);
  dbl_of("layer_mixing", c.layer_mixing);
  dbl_of("layer_shift", c.layer_shift);
  int_of("layer_l", c.layer_l);
  int_of("layer_h", c.layer_h);
  if (auto v = kv.find("seed")) {
    const auto s = parse_int(*v, "seed");
    if (s < 0) throw UsageError("seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
  }
  dbl_of("train_fraction", c.fractions.train);
  dbl_of("val_fraction", c.fractions.val);
  dbl_of("test_fraction", c.fractions.test);
  return c;
}

namespace {

std::string word_for(int concept_id, int word, bool capitalize) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "concept%02d_w%d", concept_id, word);
  std::string s(buf);
  if (capitalize) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

RowVec random_unit(Eigen::Index d, std::normal_distribution<double>& normal, Rng& rng) {
  RowVec v(d);
  do {
    for (Eigen::Index j = 0; j < d; ++j) v(j) = normal(rng);
  } while (v.norm() == 0.0);
  return v.normalized();
}

}  // namespace

int planted_concept_of(const std::string& token) {
  int id = -1, word = -1;
  const std::string lower = [&] {
    std::string s = token;
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }();
  if (std::sscanf(lower.c_str(), "concept%d_w%d", &id, &word) != 2) return -1;
  return id;
}

SynthOutput generate_planted(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> magnitude(cfg.magnitude_min, cfg.magnitude_max);
  std::uniform_int_distribution<int> length(cfg.min_tokens, cfg.max_tokens);
  std::uniform_int_distribution<int> label_concept(0, cfg.label_concepts - 1);
  std::uniform_int_distribution<int> other_concept(cfg.label_concepts, cfg.concepts - 1);
  std::uniform_int_distribution<int> word(0, cfg.words_per_concept - 1);

  const Eigen::Index d = cfg.dim;
  SynthOutput out;
  out.directions.resize(cfg.concepts, d);
  Mat shifts(cfg.concepts, d);
  for (int c = 0; c < cfg.concepts; ++c) out.directions.row(c) = random_unit(d, normal, rng);
  for (int c = 0; c < cfg.concepts; ++c) shifts.row(c) = random_unit(d, normal, rng);
  Mat mixing = Mat::Identity(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      mixing(i, j) += cfg.layer_mixing * normal(rng) / std::sqrt(static_cast<double>(d));
    }
  }

  ActivationDataset& ds = out.dataset;
  ds.manifest.model_name = "synthetic-planted";
  ds.manifest.layer_l = cfg.layer_l;
  ds.manifest.layer_h = cfg.layer_h;
  ds.manifest.embedding_dim = cfg.dim;
  ds.manifest.num_sentences = static_cast<std::size_t>(cfg.sentences);
  for (int k = 0; k < cfg.classes; ++k) ds.manifest.label_names.push_back("class" + std::to_string(k));

  for (int s = 0; s < cfg.sentences; ++s) {
    const int t_len = length(rng);
    std::uniform_int_distribution<int> pos(0, t_len - 1);
    const int label_pos = pos(rng);
    const int planted = label_concept(rng);
    SentenceRecord r;
    r.label = static_cast<std::uint32_t>(planted % cfg.classes);
    r.acts_l.resize(t_len, d);
    r.acts_h.resize(t_len, d);
    std::vector<int> concepts_here;
    RowVec sent = RowVec::Zero(d);
    for (int t = 0; t < t_len; ++t) {
      const int c = t == label_pos ? planted : other_concept(rng);
      concepts_here.push_back(c);
      r.tokens.push_back(word_for(c, word(rng), t == 0));
      const double scale = magnitude(rng);
      RowVec x = scale * out.directions.row(c);
      for (Eigen::Index j = 0; j < d; ++j) x(j) += cfg.noise * normal(rng);
      const RowVec y = x * mixing.transpose() + cfg.layer_shift * shifts.row(c);
      r.acts_l.row(t) = x.cast<float>();
      r.acts_h.row(t) = y.cast<float>();
      sent += x;
    }
    for (Eigen::Index j = 0; j < d; ++j) sent(j) += cfg.embed_noise * normal(rng);
    r.sent_embed = sent.transpose().cast<float>();
    ds.records.push_back(std::move(r));
    out.token_concepts.push_back(std::move(concepts_here));
    out.label_position.push_back(static_cast<std::size_t>(label_pos));
  }
  ds.split_assignment.assign(ds.records.size(), Split::kTrain);
  out.dataset = split_dataset(ds, cfg.fractions, cfg.seed);
  validate(out.dataset);
  return out;
}

}  // namespace clvq
