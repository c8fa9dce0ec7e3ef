#include "clvq/binary_io.hpp"

#include <filesystem>
#include <fstream>

namespace clvq {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path);
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<char> out(size);
  in.seekg(0);
  if (size > 0 && !in.read(out.data(), static_cast<std::streamsize>(size))) {
    throw IoError("read failed: " + path);
  }
  return out;
}

void write_file(const std::string& path, std::span<const char> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write " + path + ": " + ec.message());
}

}  // namespace clvq
