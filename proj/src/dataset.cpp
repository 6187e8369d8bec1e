#include "startrain/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "startrain/common.hpp"

namespace startrain {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'S', 'T', 'D', 'S'};
constexpr uint32_t kVersion = 1;
// cargo, multi_select, production_queue, single_select
constexpr int kListWidths[4] = {7, 7, 2, 7};

void put_bytes(std::vector<uint8_t>& out, const void* p, size_t n) {
  const uint8_t* b = static_cast<const uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}
template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  put_bytes(out, &v, sizeof(T));
}
void put_i16s(std::vector<uint8_t>& out, const int32_t* v, size_t n) {
  for (size_t i = 0; i < n; ++i) put<int16_t>(out, int16_t(v[i]));
}

struct Cursor {
  const uint8_t* p;
  const uint8_t* end;
  void need(size_t n) const {
    if (size_t(end - p) < n) throw DatasetError("chunk payload truncated");
  }
  template <typename T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
  }
  void take_i16s(int32_t* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = take<int16_t>();
  }
};

void encode_list(std::vector<uint8_t>& out, const ItemList& list, int width) {
  put<int32_t>(out, list.n);
  int stored = list.stored_rows(width);
  put<int32_t>(out, stored);
  put_i16s(out, list.rows.data(), size_t(stored) * size_t(width));
}

ItemList decode_list(Cursor& c, int width) {
  ItemList list;
  list.n = c.take<int32_t>();
  int stored = c.take<int32_t>();
  if (stored < 0 || stored > kItemListCap) throw DatasetError("bad item list row count");
  list.rows.resize(size_t(stored) * size_t(width));
  c.take_i16s(list.rows.data(), list.rows.size());
  return list;
}

void encode_point(std::vector<uint8_t>& out, Point2i p) {
  put<int16_t>(out, int16_t(p.r));
  put<int16_t>(out, int16_t(p.c));
}

Point2i decode_point(Cursor& c) {
  Point2i p;
  p.r = c.take<int16_t>();
  p.c = c.take<int16_t>();
  return p;
}

int16_t opt_i16(const std::optional<int>& v) { return v ? int16_t(*v) : int16_t(-1); }
int16_t opt_r(const std::optional<Point2i>& v) { return v ? int16_t(v->r) : int16_t(-1); }
int16_t opt_c(const std::optional<Point2i>& v) { return v ? int16_t(v->c) : int16_t(-1); }

}  // namespace

std::string NormStats::to_json() const {
  ordered_json j;
  j["player_mean"] = player_mean;
  j["player_std"] = player_std;
  j["game_loop_mean"] = game_loop_mean;
  j["game_loop_std"] = game_loop_std;
  return j.dump();
}

NormStats NormStats::from_json(const std::string& text) try {
  ordered_json j = ordered_json::parse(text);
  NormStats s;
  for (int i = 0; i < kNumPlayerScalars; ++i) {
    s.player_mean[size_t(i)] = j.at("player_mean").at(size_t(i)).get<double>();
    s.player_std[size_t(i)] = j.at("player_std").at(size_t(i)).get<double>();
  }
  s.game_loop_mean = j.at("game_loop_mean").get<double>();
  s.game_loop_std = j.at("game_loop_std").get<double>();
  return s;
} catch (const std::exception& e) {
  throw DatasetError(std::string("bad normalization stats: ") + e.what());
}

void encode_frame(std::vector<uint8_t>& out, const FeatureObservation& obs,
                  const HierarchicalAction& target) {
  put_i16s(out, obs.screen.data(), obs.screen.size());
  put_i16s(out, obs.minimap.data(), obs.minimap.size());
  encode_list(out, obs.cargo, kListWidths[0]);
  encode_list(out, obs.multi_select, kListWidths[1]);
  encode_list(out, obs.production_queue, kListWidths[2]);
  encode_list(out, obs.single_select, kListWidths[3]);
  put_i16s(out, obs.control_groups.data(), obs.control_groups.size());
  put_i16s(out, obs.control_groups_hint.data(), obs.control_groups_hint.size());
  for (double v : obs.player) put<double>(out, v);
  put<double>(out, obs.game_loop);
  put_bytes(out, obs.available_actions.data(), obs.available_actions.size());
  put<int32_t>(out, obs.prev_action);
  put_i16s(out, obs.build_order.data(), obs.build_order.size());
  put<int16_t>(out, int16_t(obs.mmr_bucket));
  encode_point(out, obs.prev_screen_point);
  encode_point(out, obs.prev_minimap_point);

  put<int16_t>(out, int16_t(target.action_id));
  put<int16_t>(out, int16_t(target.delay_bucket));
  put<int16_t>(out, opt_i16(target.queued));
  put<int16_t>(out, opt_r(target.screen1));
  put<int16_t>(out, opt_c(target.screen1));
  put<int16_t>(out, opt_r(target.screen2));
  put<int16_t>(out, opt_c(target.screen2));
  put<int16_t>(out, opt_r(target.minimap));
  put<int16_t>(out, opt_c(target.minimap));
  put<int16_t>(out, opt_i16(target.control_group_id));
  put<int16_t>(out, opt_i16(target.control_group_op));
  put<int16_t>(out, opt_i16(target.select_modifier));
}

void decode_frame(const uint8_t*& p, const uint8_t* end, FeatureObservation& obs,
                  HierarchicalAction& target, int screen_elems, int minimap_elems,
                  int num_actions) {
  Cursor c{p, end};
  obs.screen.resize(size_t(screen_elems));
  c.take_i16s(obs.screen.data(), obs.screen.size());
  obs.minimap.resize(size_t(minimap_elems));
  c.take_i16s(obs.minimap.data(), obs.minimap.size());
  obs.cargo = decode_list(c, kListWidths[0]);
  obs.multi_select = decode_list(c, kListWidths[1]);
  obs.production_queue = decode_list(c, kListWidths[2]);
  obs.single_select = decode_list(c, kListWidths[3]);
  c.take_i16s(obs.control_groups.data(), obs.control_groups.size());
  c.take_i16s(obs.control_groups_hint.data(), obs.control_groups_hint.size());
  for (double& v : obs.player) v = c.take<double>();
  obs.game_loop = c.take<double>();
  obs.available_actions.resize(size_t(num_actions));
  c.need(obs.available_actions.size());
  std::memcpy(obs.available_actions.data(), c.p, obs.available_actions.size());
  c.p += obs.available_actions.size();
  obs.prev_action = c.take<int32_t>();
  c.take_i16s(obs.build_order.data(), obs.build_order.size());
  obs.mmr_bucket = c.take<int16_t>();
  obs.prev_screen_point = decode_point(c);
  obs.prev_minimap_point = decode_point(c);

  target = HierarchicalAction{};
  target.action_id = c.take<int16_t>();
  target.delay_bucket = c.take<int16_t>();
  auto opt = [](int16_t v) -> std::optional<int> {
    if (v < 0) return std::nullopt;
    return int(v);
  };
  target.queued = opt(c.take<int16_t>());
  int16_t r1 = c.take<int16_t>(), c1 = c.take<int16_t>();
  if (r1 >= 0) target.screen1 = Point2i{r1, c1};
  int16_t r2 = c.take<int16_t>(), c2 = c.take<int16_t>();
  if (r2 >= 0) target.screen2 = Point2i{r2, c2};
  int16_t rm = c.take<int16_t>(), cm = c.take<int16_t>();
  if (rm >= 0) target.minimap = Point2i{rm, cm};
  target.control_group_id = opt(c.take<int16_t>());
  target.control_group_op = opt(c.take<int16_t>());
  target.select_modifier = opt(c.take<int16_t>());
  p = c.p;
}

DatasetWriter::DatasetWriter(const ActionSchema& schema, int seq_len)
    : schema_(schema), seq_len_(seq_len) {
  if (seq_len < 1) throw DatasetError("sequence length must be positive");
}

void DatasetWriter::add_game(const std::vector<ResimFrame>& frames, const ReplayMeta& meta) {
  (void)meta;
  if (frames.empty()) return;
  const int game_id = num_games_++;
  const int n = static_cast<int>(frames.size());
  for (const ResimFrame& f : frames) {
    for (int i = 0; i < kNumPlayerScalars; ++i) {
      sum_[size_t(i)] += f.obs.player[size_t(i)];
      sumsq_[size_t(i)] += f.obs.player[size_t(i)] * f.obs.player[size_t(i)];
    }
    gl_sum_ += f.obs.game_loop;
    gl_sumsq_ += f.obs.game_loop * f.obs.game_loop;
    ++stat_n_;
  }
  for (int start = 0; start < n; start += seq_len_) {
    const int len = std::min(seq_len_, n - start);
    std::vector<uint8_t> raw;
    raw.reserve(size_t(len) * 4096);
    put<int32_t>(raw, game_id);
    put<int32_t>(raw, start);
    put<uint8_t>(raw, start == 0 ? 1 : 0);
    put<uint16_t>(raw, uint16_t(len));
    for (int i = 0; i < len; ++i)
      encode_frame(raw, frames[size_t(start + i)].obs, frames[size_t(start + i)].target);
    Chunk ch;
    ch.raw_size = uint32_t(raw.size());
    ch.length = uint16_t(len);
    ch.blob = zlib_compress(raw.data(), raw.size());
    ch.crc = crc32_of(ch.blob.data(), ch.blob.size());
    ch.game_id = game_id;
    chunks_.push_back(std::move(ch));
    num_frames_ += len;
  }
}

NormStats DatasetWriter::stats() const {
  NormStats s;
  if (stat_n_ == 0) return s;
  const double n = double(stat_n_);
  for (int i = 0; i < kNumPlayerScalars; ++i) {
    s.player_mean[size_t(i)] = sum_[size_t(i)] / n;
    double var = sumsq_[size_t(i)] / n - s.player_mean[size_t(i)] * s.player_mean[size_t(i)];
    s.player_std[size_t(i)] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  s.game_loop_mean = gl_sum_ / n;
  double var = gl_sumsq_ / n - s.game_loop_mean * s.game_loop_mean;
  s.game_loop_std = var > 1e-12 ? std::sqrt(var) : 1.0;
  return s;
}

void DatasetWriter::write(const std::filesystem::path& path) const {
  const FeatureSpec& fs = schema_.features;
  std::string stats_json = stats().to_json();

  std::vector<uint8_t> head;
  put_bytes(head, kMagic, 4);
  put<uint32_t>(head, kVersion);
  put<uint64_t>(head, schema_.hash());
  put<int32_t>(head, seq_len_);
  put<int32_t>(head, schema_.num_actions());
  put<int32_t>(head, int32_t(fs.screen.size()));
  put<int32_t>(head, int32_t(fs.minimap.size()));
  put<int32_t>(head, fs.screen_size);
  put<int32_t>(head, fs.minimap_size);
  put<int64_t>(head, int64_t(chunks_.size()));
  put<uint32_t>(head, uint32_t(stats_json.size()));
  put_bytes(head, stats_json.data(), stats_json.size());
  // index offset patched in after chunk sizes are known
  uint64_t index_offset = head.size() + 8;
  for (const Chunk& ch : chunks_) index_offset += ch.blob.size();
  put<uint64_t>(head, index_offset);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open dataset for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(head.data()), std::streamsize(head.size()));
  uint64_t offset = head.size();
  std::vector<uint8_t> index;
  for (const Chunk& ch : chunks_) {
    out.write(reinterpret_cast<const char*>(ch.blob.data()), std::streamsize(ch.blob.size()));
    put<uint64_t>(index, offset);
    put<uint32_t>(index, uint32_t(ch.blob.size()));
    put<uint32_t>(index, ch.crc);
    put<uint32_t>(index, ch.raw_size);
    put<uint16_t>(index, ch.length);
    put<int32_t>(index, ch.game_id);
    offset += ch.blob.size();
  }
  out.write(reinterpret_cast<const char*>(index.data()), std::streamsize(index.size()));
  if (!out) throw DatasetError("failed writing dataset: " + path.string());
}

DatasetReader::DatasetReader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset: " + path.string());
  file_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  Cursor c{file_.data(), file_.data() + file_.size()};
  char magic[4];
  c.need(4);
  std::memcpy(magic, c.p, 4);
  c.p += 4;
  if (std::memcmp(magic, kMagic, 4) != 0) throw DatasetError("not a dataset file");
  if (c.take<uint32_t>() != kVersion) throw DatasetError("unsupported dataset version");
  schema_hash_ = c.take<uint64_t>();
  seq_len_ = c.take<int32_t>();
  num_actions_ = c.take<int32_t>();
  screen_layers_ = c.take<int32_t>();
  minimap_layers_ = c.take<int32_t>();
  screen_size_ = c.take<int32_t>();
  minimap_size_ = c.take<int32_t>();
  int64_t num_chunks = c.take<int64_t>();
  uint32_t stats_len = c.take<uint32_t>();
  c.need(stats_len);
  stats_ = NormStats::from_json(std::string(reinterpret_cast<const char*>(c.p), stats_len));
  c.p += stats_len;
  uint64_t index_offset = c.take<uint64_t>();
  if (num_chunks < 0 || index_offset > file_.size()) throw DatasetError("corrupt dataset header");
  size_t index_size = size_t(num_chunks) * 26;
  if (index_offset + index_size > file_.size()) throw DatasetError("dataset index out of range");
  Cursor ic{file_.data() + index_offset, file_.data() + index_offset + index_size};
  index_.resize(size_t(num_chunks));
  for (IndexEntry& e : index_) {
    e.offset = ic.take<uint64_t>();
    e.size = ic.take<uint32_t>();
    e.crc = ic.take<uint32_t>();
    e.raw_size = ic.take<uint32_t>();
    e.length = ic.take<uint16_t>();
    e.game_id = ic.take<int32_t>();
    if (e.offset + e.size > file_.size()) throw DatasetError("dataset chunk out of range");
  }
}

Sequence DatasetReader::load(int idx) const {
  if (idx < 0 || idx >= num_sequences()) throw DatasetError("sequence index out of range");
  const IndexEntry& e = index_[size_t(idx)];
  const uint8_t* blob = file_.data() + e.offset;
  if (crc32_of(blob, e.size) != e.crc) throw DatasetError("dataset chunk crc mismatch");
  std::vector<uint8_t> raw = zlib_decompress(blob, e.size, e.raw_size);
  Cursor c{raw.data(), raw.data() + raw.size()};
  Sequence seq;
  seq.game_id = c.take<int32_t>();
  seq.start_frame = c.take<int32_t>();
  seq.starts_episode = c.take<uint8_t>();
  uint16_t len = c.take<uint16_t>();
  if (len != e.length) throw DatasetError("chunk length mismatch");
  seq.obs.resize(len);
  seq.targets.resize(len);
  const uint8_t* p = c.p;
  const int screen_elems = screen_layers_ * screen_size_ * screen_size_;
  const int minimap_elems = minimap_layers_ * minimap_size_ * minimap_size_;
  for (int i = 0; i < len; ++i)
    decode_frame(p, raw.data() + raw.size(), seq.obs[size_t(i)], seq.targets[size_t(i)],
                 screen_elems, minimap_elems, num_actions_);
  if (p != raw.data() + raw.size()) throw DatasetError("trailing bytes in chunk");
  return seq;
}

}  // namespace startrain
