#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace clvq {

/// Ordered `key = value` text, one entry per line. `#` starts a comment line.
/// Used for dataset manifests, checkpoint headers, and run configs.
class KvText {
 public:
  static KvText parse(std::string_view text, std::string_view origin);
  static KvText load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;

  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string serialize() const;

  /// Throws UsageError naming the first key not in `allowed`.
  void reject_unknown(const std::vector<std::string>& allowed) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::map<std::string, std::size_t> index_;
  std::string origin_;
};

long long parse_int(std::string_view text, std::string_view what);
double parse_double(std::string_view text, std::string_view what);
std::string format_double(double v);
std::vector<std::string> split(std::string_view text, char sep);

}  // namespace clvq
