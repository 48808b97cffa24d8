#include "urnet/bytes.hpp"

#include <cstdio>
#include <memory>

namespace urnet::bytes {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::vector<std::uint8_t> read_file(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw Error("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> data;
  std::uint8_t chunk[1 << 16];
  std::size_t got;
  while ((got = std::fread(chunk, 1, sizeof chunk, f.get())) > 0) {
    data.insert(data.end(), chunk, chunk + got);
  }
  if (std::ferror(f.get())) throw Error("read failed on '" + path + "'");
  return data;
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw Error("cannot open '" + path + "' for writing");
  if (!data.empty() &&
      std::fwrite(data.data(), 1, data.size(), f.get()) != data.size()) {
    throw Error("write failed on '" + path + "'");
  }
  if (std::fflush(f.get()) != 0) throw Error("write failed on '" + path + "'");
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace urnet::bytes
