#include "clvq/kv_text.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "clvq/error.hpp"

namespace clvq {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KvText KvText::parse(std::string_view text, std::string_view origin) {
  KvText kv;
  kv.origin_ = std::string(origin);
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw DataError(kv.origin_ + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) {
      throw DataError(kv.origin_ + ":" + std::to_string(line_no) + ": empty key");
    }
    if (kv.contains(key)) {
      throw DataError(kv.origin_ + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    kv.set(key, value);
  }
  return kv;
}

KvText KvText::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void KvText::set(const std::string& key, const std::string& value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw UsageError("key/value may not contain '=' or newlines: " + key);
  }
  if (auto it = index_.find(key); it != index_.end()) {
    entries_[it->second].second = value;
    return;
  }
  index_[key] = entries_.size();
  entries_.emplace_back(key, value);
}

bool KvText::contains(const std::string& key) const { return index_.count(key) != 0; }

const std::string& KvText::get(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw DataError(origin_ + ": missing key '" + key + "'");
  return entries_[it->second].second;
}

std::optional<std::string> KvText::find(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return entries_[it->second].second;
}

long long KvText::get_int(const std::string& key) const { return parse_int(get(key), key); }

double KvText::get_double(const std::string& key) const { return parse_double(get(key), key); }

std::string KvText::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void KvText::reject_unknown(const std::vector<std::string>& allowed) const {
  for (const auto& [k, v] : entries_) {
    bool ok = false;
    for (const auto& a : allowed) ok = ok || a == k;
    if (!ok) throw UsageError(origin_ + ": unknown key '" + k + "'");
  }
}

long long parse_int(std::string_view text, std::string_view what) {
  long long v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) {
    throw DataError("invalid integer for " + std::string(what) + ": '" + std::string(text) + "'");
  }
  return v;
}

double parse_double(std::string_view text, std::string_view what) {
  // from_chars for double is unavailable on older libstdc++; strtod is locale-"C" here.
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw DataError("invalid number for " + std::string(what) + ": '" + s + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.emplace_back(trim(text.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace clvq
