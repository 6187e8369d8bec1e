#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "startrain/replay.hpp"
#include "startrain/schema.hpp"

namespace startrain {

// Preprocessing statistics stored with a dataset and carried into
// checkpoints so live play normalizes inputs the same way training did.
struct NormStats {
  std::array<double, kNumPlayerScalars> player_mean{};
  std::array<double, kNumPlayerScalars> player_std{};  // 1.0 when unset
  double game_loop_mean = 0;
  double game_loop_std = 1;

  NormStats() { player_std.fill(1.0); }
  std::string to_json() const;
  static NormStats from_json(const std::string& text);
};

// One training sequence: <= seq_len consecutive frames from a single game.
struct Sequence {
  int game_id = 0;
  int start_frame = 0;
  uint8_t starts_episode = 0;
  std::vector<FeatureObservation> obs;
  std::vector<HierarchicalAction> targets;

  int length() const { return static_cast<int>(obs.size()); }
};

// Chunked binary container: fixed header, one zlib-deflated chunk per
// sequence (crc32-checked), then a chunk index, so any sequence loads
// without touching the rest of the file.
class DatasetWriter {
 public:
  DatasetWriter(const ActionSchema& schema, int seq_len);

  // Splits one game into sequences and buffers them compressed.
  void add_game(const std::vector<ResimFrame>& frames, const ReplayMeta& meta);
  int num_sequences() const { return static_cast<int>(chunks_.size()); }
  int num_frames() const { return num_frames_; }
  int num_games() const { return num_games_; }
  NormStats stats() const;

  void write(const std::filesystem::path& path) const;

 private:
  const ActionSchema& schema_;
  int seq_len_;
  int num_frames_ = 0;
  int num_games_ = 0;
  struct Chunk {
    std::vector<uint8_t> blob;  // deflated payload
    uint32_t crc = 0;
    uint32_t raw_size = 0;
    uint16_t length = 0;
    int32_t game_id = 0;
  };
  std::vector<Chunk> chunks_;
  // running moments for normalization stats
  std::array<double, kNumPlayerScalars> sum_{}, sumsq_{};
  double gl_sum_ = 0, gl_sumsq_ = 0;
  int64_t stat_n_ = 0;
};

class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);  // DatasetError on damage

  int num_sequences() const { return static_cast<int>(index_.size()); }
  int seq_len() const { return seq_len_; }
  uint64_t schema_hash() const { return schema_hash_; }
  const NormStats& stats() const { return stats_; }
  int sequence_length(int idx) const { return index_[size_t(idx)].length; }
  int sequence_game(int idx) const { return index_[size_t(idx)].game_id; }

  Sequence load(int idx) const;  // decompress + decode one sequence

 private:
  struct IndexEntry {
    uint64_t offset = 0;
    uint32_t size = 0;
    uint32_t crc = 0;
    uint32_t raw_size = 0;
    uint16_t length = 0;
    int32_t game_id = 0;
  };
  std::vector<uint8_t> file_;  // whole file kept compressed in memory
  std::vector<IndexEntry> index_;
  int seq_len_ = 0;
  uint64_t schema_hash_ = 0;
  NormStats stats_;
  int num_actions_ = 0;
  int screen_layers_ = 0, minimap_layers_ = 0;
  int screen_size_ = 0, minimap_size_ = 0;

  friend class DatasetWriter;
};

// Frame codec shared by writer/reader and tests.
void encode_frame(std::vector<uint8_t>& out, const FeatureObservation& obs,
                  const HierarchicalAction& target);
void decode_frame(const uint8_t*& p, const uint8_t* end, FeatureObservation& obs,
                  HierarchicalAction& target, int screen_elems, int minimap_elems,
                  int num_actions);

}  // namespace startrain
