#include <cmath>
#include <fstream>

#include "testing.hpp"

using namespace startrain;

namespace {

std::vector<ResimFrame> resim_game(const RunConfig& cfg, uint64_t seed) {
  ActionSchema schema = cfg.make_schema();
  ReplayLog log = testutil::record_game(cfg, seed, env::OpponentLevel::kEasy,
                                        env::OpponentLevel::kVeryEasy);
  ResimResult rr = resimulate(log, schema, arena::env_config_from(cfg));
  if (!rr.hash_ok) throw std::runtime_error("resim diverged");
  return std::move(rr.frames);
}

std::vector<uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("dataset writing is deterministic and round-trips") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  testutil::TempDir tmp("ds");

  std::vector<std::vector<ResimFrame>> games;
  games.push_back(resim_game(cfg, 71));
  games.push_back(resim_game(cfg, 72));

  auto write_all = [&](const std::filesystem::path& p) {
    DatasetWriter w(schema, cfg.bc.seq_len);
    ReplayMeta meta;
    for (const auto& g : games) w.add_game(g, meta);
    w.write(p);
    return w.num_frames();
  };
  int frames_written = write_all(tmp / "a.bin");
  write_all(tmp / "b.bin");
  CHECK(slurp(tmp / "a.bin") == slurp(tmp / "b.bin"));  // byte-identical

  DatasetReader r(tmp / "a.bin");
  CHECK(r.schema_hash() == schema.hash());
  CHECK(r.seq_len() == cfg.bc.seq_len);

  // sequences tile each game in order: lengths sum to the frame count,
  // every frame survives the round trip exactly
  int total = 0;
  size_t game = 0, offset = 0;
  for (int i = 0; i < r.num_sequences(); ++i) {
    Sequence s = r.load(i);
    CHECK(s.length() == r.sequence_length(i));
    CHECK(s.game_id == r.sequence_game(i));
    if (offset == 0) {
      CHECK(s.starts_episode == 1);
    } else {
      CHECK(s.starts_episode == 0);
    }
    REQUIRE(size_t(s.game_id) == game);
    CHECK(s.start_frame == int(offset));
    for (int k = 0; k < s.length(); ++k) {
      const ResimFrame& want = games[game][offset + size_t(k)];
      CHECK(s.obs[size_t(k)] == want.obs);
      CHECK(s.targets[size_t(k)] == want.target);
    }
    total += s.length();
    offset += size_t(s.length());
    if (offset == games[game].size()) {
      ++game;
      offset = 0;
    }
    CHECK(s.length() <= cfg.bc.seq_len);
  }
  CHECK(total == frames_written);
  CHECK(game == games.size());
}

TEST_CASE("frame codec round-trips a single frame") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  std::vector<ResimFrame> frames = resim_game(cfg, 73);
  const FeatureSpec& fs = schema.features;
  int screen_elems = int(fs.screen.size()) * fs.screen_size * fs.screen_size;
  int minimap_elems = int(fs.minimap.size()) * fs.minimap_size * fs.minimap_size;

  for (size_t pick : {size_t(0), frames.size() / 2, frames.size() - 1}) {
    std::vector<uint8_t> buf;
    encode_frame(buf, frames[pick].obs, frames[pick].target);
    FeatureObservation obs;
    HierarchicalAction target;
    const uint8_t* p = buf.data();
    decode_frame(p, buf.data() + buf.size(), obs, target, screen_elems, minimap_elems,
                 schema.num_actions());
    CHECK(p == buf.data() + buf.size());  // consumed exactly
    CHECK(obs == frames[pick].obs);
    CHECK(target == frames[pick].target);
  }
}

TEST_CASE("dataset damage is detected") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  testutil::TempDir tmp("dsdmg");
  {
    DatasetWriter w(schema, cfg.bc.seq_len);
    ReplayMeta meta;
    w.add_game(resim_game(cfg, 74), meta);
    w.write(tmp / "d.bin");
  }

  SUBCASE("bit flip inside a chunk fails its crc on load") {
    std::vector<uint8_t> raw = slurp(tmp / "d.bin");
    raw[raw.size() / 3] ^= 0x40;  // somewhere inside compressed payload
    std::ofstream(tmp / "d.bin", std::ios::binary)
        .write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    bool threw = false;
    try {
      DatasetReader r(tmp / "d.bin");
      for (int i = 0; i < r.num_sequences(); ++i) (void)r.load(i);
    } catch (const DatasetError&) {
      threw = true;
    }
    CHECK(threw);
  }

  SUBCASE("truncation") {
    std::vector<uint8_t> raw = slurp(tmp / "d.bin");
    raw.resize(raw.size() / 2);
    std::ofstream(tmp / "d.bin", std::ios::binary)
        .write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    CHECK_THROWS_AS(DatasetReader(tmp / "d.bin"), DatasetError);
  }

  SUBCASE("missing file") { CHECK_THROWS_AS(DatasetReader(tmp / "nope.bin"), DatasetError); }

  SUBCASE("not a dataset") {
    write_text_file(tmp / "d.bin", "some text file");
    CHECK_THROWS_AS(DatasetReader(tmp / "d.bin"), DatasetError);
  }
}

TEST_CASE("normalization stats match hand-computed moments") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  std::vector<ResimFrame> frames = resim_game(cfg, 75);

  DatasetWriter w(schema, cfg.bc.seq_len);
  ReplayMeta meta;
  w.add_game(frames, meta);
  NormStats s = w.stats();

  const double n = double(frames.size());
  for (int i = 0; i < kNumPlayerScalars; ++i) {
    double sum = 0, sumsq = 0;
    for (const ResimFrame& f : frames) {
      sum += f.obs.player[size_t(i)];
      sumsq += f.obs.player[size_t(i)] * f.obs.player[size_t(i)];
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    double std = var > 1e-12 ? std::sqrt(var) : 1.0;
    CHECK(s.player_mean[size_t(i)] == doctest::Approx(mean).epsilon(1e-9));
    CHECK(s.player_std[size_t(i)] == doctest::Approx(std).epsilon(1e-9));
  }
  double gsum = 0, gsumsq = 0;
  for (const ResimFrame& f : frames) {
    gsum += f.obs.game_loop;
    gsumsq += f.obs.game_loop * f.obs.game_loop;
  }
  double gmean = gsum / n;
  double gvar = gsumsq / n - gmean * gmean;
  CHECK(s.game_loop_mean == doctest::Approx(gmean).epsilon(1e-9));
  CHECK(s.game_loop_std == doctest::Approx(gvar > 1e-12 ? std::sqrt(gvar) : 1.0).epsilon(1e-9));

  // stats serialize losslessly enough for reuse
  NormStats back = NormStats::from_json(s.to_json());
  CHECK(back.player_mean[0] == doctest::Approx(s.player_mean[0]).epsilon(1e-12));
  CHECK(back.game_loop_std == doctest::Approx(s.game_loop_std).epsilon(1e-12));
  CHECK_THROWS_AS(NormStats::from_json("nope"), DatasetError);

  // a dataset with a single frame falls back to unit scale
  DatasetWriter w1(schema, cfg.bc.seq_len);
  w1.add_game({frames[0]}, meta);
  NormStats s1 = w1.stats();
  for (int i = 0; i < kNumPlayerScalars; ++i) CHECK(s1.player_std[size_t(i)] == 1.0);
}
