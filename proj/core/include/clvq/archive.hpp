#pragma once

#include <string>
#include <vector>

#include "clvq/kv_text.hpp"
#include "clvq/types.hpp"

namespace clvq {

inline constexpr int kArchiveFormatVersion = 1;

/// Versioned container: a `key = value` text header followed by a raw
/// little-endian float64 payload. Tensors are stored row-major.
///
///   clvq-archive
///   format_version = 1
///   ...metadata...
///   tensor.<name> = <rows> <cols> <byte offset into payload>
///   payload_bytes = <n>
///   end
///   <payload>
class Archive {
 public:
  KvText meta;

  void add(const std::string& name, const Mat& tensor);
  bool has(const std::string& name) const;
  const Mat& tensor(const std::string& name) const;
  const std::vector<std::pair<std::string, Mat>>& tensors() const { return tensors_; }

  std::vector<char> serialize() const;
  static Archive deserialize(const std::vector<char>& bytes, const std::string& origin);

  void save(const std::string& path) const;
  /// Fully parses into a new object; nothing is returned on error.
  static Archive load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Mat>> tensors_;
};

}  // namespace clvq
