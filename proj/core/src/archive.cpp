#include "clvq/archive.hpp"

#include <string_view>

#include "clvq/binary_io.hpp"
#include "clvq/error.hpp"

namespace clvq {
namespace {

constexpr std::string_view kMagic = "clvq-archive\n";
constexpr std::string_view kEnd = "\nend\n";
constexpr std::string_view kTensorPrefix = "tensor.";

}  // namespace

void Archive::add(const std::string& name, const Mat& tensor) {
  if (has(name)) throw UsageError("duplicate tensor '" + name + "'");
  tensors_.emplace_back(name, tensor);
}

bool Archive::has(const std::string& name) const {
  for (const auto& [n, t] : tensors_) {
    if (n == name) return true;
  }
  return false;
}

const Mat& Archive::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors_) {
    if (n == name) return t;
  }
  throw DataError("archive has no tensor '" + name + "'");
}

std::vector<char> Archive::serialize() const {
  ByteWriter payload;
  KvText header;
  header.set("format_version", std::to_string(kArchiveFormatVersion));
  for (const auto& [k, v] : meta.entries()) {
    if (k == "format_version" || k == "payload_bytes" || k.rfind(kTensorPrefix, 0) == 0) {
      throw UsageError("reserved archive key '" + k + "'");
    }
    header.set(k, v);
  }
  for (const auto& [name, t] : tensors_) {
    header.set(std::string(kTensorPrefix) + name, std::to_string(t.rows()) + " " +
                                                     std::to_string(t.cols()) + " " +
                                                     std::to_string(payload.size()));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) payload.put<double>(t(i, j));
    }
  }
  header.set("payload_bytes", std::to_string(payload.size()));
  std::string text(kMagic);
  text += header.serialize();
  text.pop_back();  // kEnd supplies the newline
  text += kEnd;
  std::vector<char> out(text.begin(), text.end());
  out.insert(out.end(), payload.bytes().begin(), payload.bytes().end());
  return out;
}

Archive Archive::deserialize(const std::vector<char>& bytes, const std::string& origin) {
  const std::string_view all(bytes.data(), bytes.size());
  if (all.substr(0, kMagic.size()) != kMagic) throw DataError(origin + ": not a clvq archive");
  const auto end = all.find(kEnd);
  if (end == std::string_view::npos) throw IoError(origin + ": truncated header");
  const KvText header = KvText::parse(all.substr(kMagic.size(), end - kMagic.size()), origin);
  const auto version = header.get_int("format_version");
  if (version != kArchiveFormatVersion) {
    throw FormatVersionError(origin + ": unsupported archive format_version " +
                             std::to_string(version));
  }
  const std::size_t payload_start = end + kEnd.size();
  const auto payload_bytes = static_cast<std::size_t>(header.get_int("payload_bytes"));
  if (bytes.size() != payload_start + payload_bytes) {
    throw IoError(origin + ": payload is " + std::to_string(bytes.size() - payload_start) +
                  " bytes, header declares " + std::to_string(payload_bytes));
  }
  ByteReader in(std::span<const char>(bytes).subspan(payload_start), origin);

  Archive a;
  for (const auto& [k, v] : header.entries()) {
    if (k == "format_version" || k == "payload_bytes") continue;
    if (k.rfind(kTensorPrefix, 0) != 0) {
      a.meta.set(k, v);
      continue;
    }
    const auto parts = split(v, ' ');
    if (parts.size() != 3) throw DataError(origin + ": malformed tensor entry '" + k + "'");
    const auto rows = parse_int(parts[0], k);
    const auto cols = parse_int(parts[1], k);
    const auto offset = parse_int(parts[2], k);
    if (rows < 0 || cols < 0 || offset < 0) throw DataError(origin + ": negative extent in " + k);
    in.seek(static_cast<std::size_t>(offset));
    Mat t(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) t(i, j) = in.get<double>();
    }
    a.tensors_.emplace_back(k.substr(kTensorPrefix.size()), std::move(t));
  }
  return a;
}

void Archive::save(const std::string& path) const {
  const auto bytes = serialize();
  write_file(path, bytes);
}

Archive Archive::load(const std::string& path) { return deserialize(read_file(path), path); }

}  // namespace clvq
