#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace startrain {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Point2i {
  int r = -1;
  int c = -1;
  bool operator==(const Point2i&) const = default;
};

// Deterministic per-purpose RNG streams. All simulation and sampling
// randomness flows through these; torch's global RNG is only used for
// parameter init.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return static_cast<int>(lo + next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }
  double uniform() {
    return (next_u64() >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
  }
  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }
  // Samples an index from unnormalized nonnegative weights.
  int sample_weighted(const std::vector<double>& w);

  std::mt19937_64& raw() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

// Derives an independent child seed from a base seed and a tag path.
uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> tags);

uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ull);
inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }
std::string hex64(uint64_t v);

std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& content);

std::vector<uint8_t> zlib_compress(const uint8_t* data, size_t n);
std::vector<uint8_t> zlib_decompress(const uint8_t* data, size_t n, size_t raw_size);
uint32_t crc32_of(const uint8_t* data, size_t n);

// Append-only CSV metrics log; writes the header once on creation.
class CsvLogger {
 public:
  CsvLogger() = default;
  CsvLogger(const std::filesystem::path& p, const std::vector<std::string>& columns);
  void append(const std::vector<double>& row);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  size_t ncols_ = 0;
};

}  // namespace startrain
