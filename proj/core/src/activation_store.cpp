#include "clvq/activation_store.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "clvq/binary_io.hpp"
#include "clvq/error.hpp"
#include "clvq/kv_text.hpp"

namespace clvq {
namespace {

constexpr std::size_t kIndexEntryBytes = 4 + 4 + 8;
constexpr const char* kManifestFile = "manifest.txt";
constexpr const char* kRecordsFile = "records.bin";

char split_char(Split s) { return static_cast<char>('0' + static_cast<int>(s)); }

bool all_finite(const float* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

std::vector<std::size_t> ActivationDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split_assignment.size(); ++i) {
    if (split_assignment[i] == split) out.push_back(i);
  }
  return out;
}

std::size_t ActivationDataset::token_count(Split split) const {
  std::size_t n = 0;
  for (auto i : indices(split)) n += records[i].length();
  return n;
}

void validate(const ActivationDataset& ds) {
  const auto& m = ds.manifest;
  if (m.format_version != kDatasetFormatVersion) {
    throw FormatVersionError("unsupported dataset format_version " +
                             std::to_string(m.format_version));
  }
  if (m.endianness != "little") throw DataError("unsupported endianness '" + m.endianness + "'");
  if (m.embedding_dim <= 0) throw ShapeError("embedding_dim must be positive");
  if (m.layer_l > m.layer_h) throw DataError("layer_l must not exceed layer_h");
  if (m.label_names.empty()) throw DataError("label_names must not be empty");
  for (const auto& name : m.label_names) {
    if (name.empty() || name.find_first_of(",\n") != std::string::npos) {
      throw DataError("label names must be non-empty and free of ',' and newlines");
    }
  }
  if (m.num_sentences != ds.records.size()) {
    throw ShapeError("manifest advertises " + std::to_string(m.num_sentences) +
                     " sentences but " + std::to_string(ds.records.size()) + " are present");
  }
  if (ds.split_assignment.size() != ds.records.size()) {
    throw ShapeError("split assignment does not cover every record");
  }
  const auto d = static_cast<Eigen::Index>(m.embedding_dim);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    const std::string where = "record " + std::to_string(i);
    const auto t = static_cast<Eigen::Index>(r.tokens.size());
    if (t < 1) throw ShapeError(where + ": no tokens");
    if (r.acts_l.rows() != t || r.acts_l.cols() != d || r.acts_h.rows() != t ||
        r.acts_h.cols() != d || r.sent_embed.size() != d) {
      throw ShapeError(where + ": activation shapes do not match T x d");
    }
    if (r.label >= m.label_names.size()) throw DataError(where + ": label out of range");
    if (!all_finite(r.acts_l.data(), r.acts_l.size()) ||
        !all_finite(r.acts_h.data(), r.acts_h.size()) ||
        !all_finite(r.sent_embed.data(), r.sent_embed.size())) {
      throw DataError(where + ": non-finite value");
    }
  }
}

void write_dataset(const ActivationDataset& ds, const std::string& dir) {
  validate(ds);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir);

  const std::size_t n = ds.records.size();
  ByteWriter body;
  std::vector<std::uint64_t> offsets(n);
  const std::size_t table_bytes = n * kIndexEntryBytes;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = ds.records[i];
    offsets[i] = table_bytes + body.size();
    body.put_span<float>({r.acts_l.data(), static_cast<std::size_t>(r.acts_l.size())});
    body.put_span<float>({r.acts_h.data(), static_cast<std::size_t>(r.acts_h.size())});
    body.put_span<float>({r.sent_embed.data(), static_cast<std::size_t>(r.sent_embed.size())});
    body.put<std::uint32_t>(r.label);
    for (const auto& tok : r.tokens) {
      body.put<std::uint32_t>(static_cast<std::uint32_t>(tok.size()));
      body.put_bytes(tok);
    }
  }
  ByteWriter blob;
  for (std::size_t i = 0; i < n; ++i) {
    blob.put<std::uint32_t>(static_cast<std::uint32_t>(i));
    blob.put<std::uint32_t>(static_cast<std::uint32_t>(ds.records[i].tokens.size()));
    blob.put<std::uint64_t>(offsets[i]);
  }
  std::vector<char> bytes = blob.bytes();
  bytes.insert(bytes.end(), body.bytes().begin(), body.bytes().end());

  KvText kv;
  const auto& m = ds.manifest;
  kv.set("format_version", std::to_string(m.format_version));
  kv.set("model_name", m.model_name);
  kv.set("layer_l", std::to_string(m.layer_l));
  kv.set("layer_h", std::to_string(m.layer_h));
  kv.set("embedding_dim", std::to_string(m.embedding_dim));
  kv.set("num_sentences", std::to_string(m.num_sentences));
  kv.set("label_names", join(m.label_names, ','));
  kv.set("endianness", m.endianness);
  std::string splits;
  for (auto s : ds.split_assignment) splits += split_char(s);
  kv.set("split_assignment", splits);
  const std::string manifest = kv.serialize();

  const auto base = std::filesystem::path(dir);
  write_file((base / kRecordsFile).string(), bytes);
  write_file((base / kManifestFile).string(), {manifest.data(), manifest.size()});
}

ActivationDataset read_dataset(const std::string& dir) {
  const auto base = std::filesystem::path(dir);
  const auto manifest_path = (base / kManifestFile).string();
  if (!std::filesystem::exists(manifest_path)) throw IoError("no dataset manifest at " + dir);
  const KvText kv = KvText::load(manifest_path);
  kv.reject_unknown({"format_version", "model_name", "layer_l", "layer_h", "embedding_dim",
                     "num_sentences", "label_names", "endianness", "split_assignment"});

  ActivationDataset ds;
  auto& m = ds.manifest;
  m.format_version = static_cast<int>(kv.get_int("format_version"));
  if (m.format_version != kDatasetFormatVersion) {
    throw FormatVersionError(manifest_path + ": unsupported format_version " +
                             std::to_string(m.format_version));
  }
  m.model_name = kv.get("model_name");
  m.layer_l = static_cast<int>(kv.get_int("layer_l"));
  m.layer_h = static_cast<int>(kv.get_int("layer_h"));
  m.embedding_dim = static_cast<int>(kv.get_int("embedding_dim"));
  const long long n_signed = kv.get_int("num_sentences");
  if (n_signed < 0) throw ShapeError("negative num_sentences");
  m.num_sentences = static_cast<std::size_t>(n_signed);
  m.label_names = split(kv.get("label_names"), ',');
  m.endianness = kv.get("endianness");
  if (m.embedding_dim <= 0) throw ShapeError("embedding_dim must be positive");

  const std::string splits = kv.get("split_assignment");
  if (splits.size() != m.num_sentences) {
    throw ShapeError("split_assignment length does not match num_sentences");
  }
  for (char c : splits) {
    if (c < '0' || c > '2') throw DataError("invalid split tag '" + std::string(1, c) + "'");
    ds.split_assignment.push_back(static_cast<Split>(c - '0'));
  }

  const auto records_path = (base / kRecordsFile).string();
  const std::vector<char> bytes = read_file(records_path);
  ByteReader in(bytes, records_path);
  const std::size_t n = m.num_sentences;
  const std::size_t table_bytes = n * kIndexEntryBytes;
  if (bytes.size() < table_bytes) throw IoError(records_path + ": truncated index table");

  struct Entry {
    std::uint32_t id, tokens;
    std::uint64_t offset;
  };
  std::vector<Entry> table(n);
  for (std::size_t i = 0; i < n; ++i) {
    table[i].id = in.get<std::uint32_t>();
    table[i].tokens = in.get<std::uint32_t>();
    table[i].offset = in.get<std::uint64_t>();
    if (table[i].id != i) {
      throw ShapeError(records_path + ": index entry " + std::to_string(i) +
                       " is inconsistent with num_sentences");
    }
    const std::uint64_t min_offset = i == 0 ? table_bytes : table[i - 1].offset + 1;
    if ((i == 0 && table[i].offset != table_bytes) || table[i].offset < min_offset ||
        table[i].offset > bytes.size()) {
      throw ShapeError(records_path + ": index offsets inconsistent at record " +
                       std::to_string(i));
    }
  }

  const auto d = static_cast<Eigen::Index>(m.embedding_dim);
  ds.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.seek(table[i].offset);
    auto& r = ds.records[i];
    const auto t = static_cast<Eigen::Index>(table[i].tokens);
    r.acts_l.resize(t, d);
    r.acts_h.resize(t, d);
    r.sent_embed.resize(d);
    in.get_span<float>({r.acts_l.data(), static_cast<std::size_t>(r.acts_l.size())});
    in.get_span<float>({r.acts_h.data(), static_cast<std::size_t>(r.acts_h.size())});
    in.get_span<float>({r.sent_embed.data(), static_cast<std::size_t>(r.sent_embed.size())});
    r.label = in.get<std::uint32_t>();
    r.tokens.reserve(table[i].tokens);
    for (std::uint32_t k = 0; k < table[i].tokens; ++k) {
      const auto len = in.get<std::uint32_t>();
      r.tokens.push_back(in.get_bytes(len));
    }
    const std::uint64_t end = i + 1 < n ? table[i + 1].offset : bytes.size();
    if (in.pos() != end) {
      throw ShapeError(records_path + ": record " + std::to_string(i) +
                       " does not fill its declared extent");
    }
  }
  validate(ds);
  return ds;
}

ActivationDataset split_dataset(const ActivationDataset& ds, SplitFractions f,
                                std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0) throw UsageError("split fractions must be >= 0");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw UsageError("split fractions must sum to 1");
  }
  const std::size_t n = ds.records.size();
  // Largest-remainder apportionment keeps each count within one record of its target.
  const std::array<double, 3> frac{f.train, f.val, f.test};
  std::array<std::size_t, 3> count{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = frac[k] * static_cast<double>(n);
    count[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - static_cast<double>(count[k]);
    assigned += count[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; assigned < n; k = (k + 1) % 3) {
    ++count[order[k]];
    ++assigned;
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  ActivationDataset out = ds;
  out.split_assignment.assign(n, Split::kTrain);
  for (std::size_t i = 0; i < n; ++i) {
    Split s = Split::kTrain;
    if (i >= count[0] + count[1]) {
      s = Split::kTest;
    } else if (i >= count[0]) {
      s = Split::kVal;
    }
    out.split_assignment[perm[i]] = s;
  }
  return out;
}

Mat stack_tokens(const ActivationDataset& ds, const std::vector<std::size_t>& records,
                 bool higher_layer) {
  Eigen::Index rows = 0;
  for (auto i : records) rows += static_cast<Eigen::Index>(ds.records[i].length());
  Mat out(rows, ds.manifest.embedding_dim);
  Eigen::Index r = 0;
  for (auto i : records) {
    const auto& src = higher_layer ? ds.records[i].acts_h : ds.records[i].acts_l;
    out.middleRows(r, src.rows()) = src.cast<double>();
    r += src.rows();
  }
  return out;
}

}  // namespace clvq
