#include "startrain/common.hpp"

#include <zlib.h>

#include <fstream>
#include <sstream>

namespace startrain {

int RngStream::sample_weighted(const std::vector<double>& w) {
  double total = 0;
  for (double x : w) total += x;
  if (total <= 0) return 0;
  double u = uniform() * total;
  double acc = 0;
  int last_pos = 0;
  for (size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0) continue;  // zero-weight entries must never win on fp residue
    last_pos = static_cast<int>(i);
    acc += w[i];
    if (u < acc) return last_pos;
  }
  return last_pos;
}

uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> tags) {
  uint64_t h = fnv1a64(&base, sizeof(base));
  for (uint64_t t : tags) h = fnv1a64(&t, sizeof(t), h);
  // splitmix64 finalizer to decorrelate nearby inputs
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + p.string());
  out << content;
}

std::vector<uint8_t> zlib_compress(const uint8_t* data, size_t n) {
  uLongf bound = compressBound(static_cast<uLong>(n));
  std::vector<uint8_t> out(bound);
  if (compress2(out.data(), &bound, data, static_cast<uLong>(n), Z_DEFAULT_COMPRESSION) != Z_OK)
    throw std::runtime_error("zlib compress failed");
  out.resize(bound);
  return out;
}

std::vector<uint8_t> zlib_decompress(const uint8_t* data, size_t n, size_t raw_size) {
  std::vector<uint8_t> out(raw_size);
  uLongf len = static_cast<uLongf>(raw_size);
  if (uncompress(out.data(), &len, data, static_cast<uLong>(n)) != Z_OK || len != raw_size)
    throw DatasetError("zlib decompress failed");
  return out;
}

uint32_t crc32_of(const uint8_t* data, size_t n) {
  return static_cast<uint32_t>(crc32(0L, data, static_cast<uInt>(n)));
}

CsvLogger::CsvLogger(const std::filesystem::path& p, const std::vector<std::string>& columns)
    : path_(p), ncols_(columns.size()) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  for (size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << "\n";
}

void CsvLogger::append(const std::vector<double>& row) {
  if (path_.empty()) return;
  if (row.size() != ncols_) throw std::runtime_error("csv row width mismatch");
  std::ofstream out(path_, std::ios::app);
  out.precision(10);
  for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
  out << "\n";
}

}  // namespace startrain
