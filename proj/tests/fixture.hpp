#pragma once

// Small on-disk dataset exercising every task and context type.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "movieseq/movieseq.hpp"

namespace movieseq::testing {

inline constexpr const char* kFixturePlot =
    "The harbor town wakes before dawn.\n"
    "Fishermen load nets onto the old boat.\n"
    "\n"
    "A storm rolls over the harbor at noon.\n"
    "The boat sinks near the rocks.\n"
    "\n"
    "At night the town gathers to mourn.\n"
    "Max lights a lantern for the lost crew.\n";

inline constexpr const char* kFixtureSubtitles =
    "0.0\t2.0\tMax\tquokka whispers softly\n"
    "2.5\t4.0\tEve\tpelican answers loudly\n"
    "9.0\t12.0\t\tmarmot hums alone\n"
    "19.0\t22.0\tMax\tnarwhal sings twice\n"
    "29.0\t31.0\tEve\tibis laughs again\n";

/// Words that only ever appear through the subtitle context.
inline const std::vector<std::string>& fixture_subtitle_words() {
  static const std::vector<std::string> w{"quokka", "pelican", "marmot", "narwhal", "ibis"};
  return w;
}

inline nlohmann::json fixture_media(std::uint64_t seed, std::size_t frames = 2) {
  return nlohmann::json::array({{{"seed", seed}, {"frames", frames}}});
}

inline nlohmann::json fixture_bank() {
  return nlohmann::json::array({{{"name", "Max"}, {"photo", {{"seed", 500}}}}, {{"name", "Eve"}, {"photo", {{"seed", 501}}}}});
}

inline std::vector<nlohmann::json> fixture_records() {
  using nlohmann::json;
  std::vector<json> r;
  const json labels = json::array({"speak", "scene", "relation"});
  const char* classes[] = {"speak", "scene", "relation", "speak"};
  for (int k = 0; k < 4; ++k) {
    r.push_back({{"id", "c" + std::to_string(k)}, {"task", "classify"}, {"split", "train"}, {"media", fixture_media(100 + k)},
                 {"question", "What happens?"}, {"answer", classes[k]}, {"labels", labels}});
  }
  r.push_back({{"id", "i0"}, {"task", "identify"}, {"split", "train"}, {"media", fixture_media(120)},
               {"contexts", json::array({{{"type", "characters"}, {"mode", "a"}, {"bank", fixture_bank()}, {"present", {"Max"}}}})}});
  r.push_back({{"id", "p0"}, {"task", "caption"}, {"split", "train"}, {"media", fixture_media(130)},
               {"contexts", json::array({{{"type", "plot"}, {"file", "plot.txt"}, {"query", "storm harbor"}}})},
               {"question", "Describe the clip."}, {"answer", "the boat sinks"}});
  r.push_back({{"id", "b0"}, {"task", "caption"}, {"split", "train"}, {"media", fixture_media(135)},
               {"contexts", json::array({{{"type", "characters"}, {"mode", "b"}, {"bank", fixture_bank()}, {"present", {"Eve"}}}})},
               {"question", "Describe the clip."}, {"answer", "Eve waves"}});
  const char* narrations[] = {"Max walks in", "Eve sits down", "they talk"};
  for (int k = 0; k < 3; ++k) {
    json ctx = json::array({{{"type", "subtitle"}, {"file", "subs.tsv"}, {"start", 10.0 * k}, {"end", 10.0 * k + 3.0}}});
    json hist = json::array();
    for (int h = 0; h < k; ++h) hist.push_back("a" + std::to_string(h));
    if (k > 0) ctx.push_back({{"type", "history"}, {"ids", hist}});
    r.push_back({{"id", "a" + std::to_string(k)}, {"task", "ad"}, {"split", "train"}, {"media", fixture_media(140 + 5 * k)},
                 {"contexts", ctx}, {"question", "Narrate."}, {"answer", narrations[k]}, {"group", "m1"}, {"timestamp", 10.0 * k + 1.0}});
  }
  r.push_back({{"id", "q0"}, {"task", "mcq"}, {"split", "train"}, {"media", fixture_media(160)}, {"question", "Who acts?"},
               {"options", {"the cat", "a dog", "Max", "Eve", "nobody"}}, {"gold", 2}});
  r.push_back({{"id", "r0"}, {"task", "retrieve"}, {"split", "train"}, {"media", fixture_media(170)}, {"question", "Describe the clip."},
               {"answer", "a dog runs"}});

  r.push_back({{"id", "tc0"}, {"task", "classify"}, {"split", "test"}, {"media", fixture_media(200)}, {"question", "What happens?"},
               {"answer", "scene"}, {"labels", labels}});
  r.push_back({{"id", "tc1"}, {"task", "classify"}, {"split", "test"}, {"media", fixture_media(201)}, {"question", "What happens?"},
               {"answer", "speak"}, {"labels", labels}});
  r.push_back({{"id", "ti0"}, {"task", "identify"}, {"split", "test"}, {"media", fixture_media(210)},
               {"contexts", json::array({{{"type", "characters"}, {"mode", "a"}, {"bank", fixture_bank()}, {"present", {"Max", "Eve"}}}})}});
  r.push_back({{"id", "tp0"}, {"task", "caption"}, {"split", "test"}, {"media", fixture_media(220)},
               {"contexts", json::array({{{"type", "plot"}, {"file", "plot.txt"}, {"t", 50.0}, {"T", 100.0}, {"w", 2}}})},
               {"question", "Describe the clip."}, {"answer", "the storm comes"}});
  const char* test_narrations[] = {"Eve opens the door", "Max smiles", "the boat leaves"};
  for (int k = 0; k < 3; ++k) {
    json ctx = json::array({{{"type", "subtitle"}, {"file", "subs.tsv"}, {"start", 10.0 * k}, {"end", 10.0 * k + 3.0}}});
    json hist = json::array();
    for (int h = 0; h < k; ++h) hist.push_back("ta" + std::to_string(h));
    if (k > 0) ctx.push_back({{"type", "history"}, {"ids", hist}});
    r.push_back({{"id", "ta" + std::to_string(k)}, {"task", "ad"}, {"split", "test"}, {"media", fixture_media(240 + 5 * k)},
                 {"contexts", ctx}, {"question", "Narrate."}, {"answer", test_narrations[k]}, {"group", "m2"},
                 {"timestamp", 10.0 * k + 1.0}});
  }
  r.push_back({{"id", "tq0"}, {"task", "mcq"}, {"split", "test"}, {"media", fixture_media(260)}, {"question", "Who acts?"},
               {"options", {"the cat", "a dog", "Max", "Eve", "nobody"}}, {"gold", 3}});
  r.push_back({{"id", "tr0"}, {"task", "retrieve"}, {"split", "test"}, {"media", fixture_media(270)}, {"question", "Describe the clip."},
               {"answer", "a dog runs"}});
  r.push_back({{"id", "tr1"}, {"task", "retrieve"}, {"split", "test"}, {"media", fixture_media(271)}, {"question", "Describe the clip."},
               {"answer", "the cat sleeps"}});
  return r;
}

inline constexpr const char* kFixtureConfig =
    "# tiny model for tests\n"
    "d_model = 16\n"
    "n_layers = 1\n"
    "n_heads = 2\n"
    "lora_rank = 2\n"
    "lora_alpha = 4\n"
    "learning_rate = 0.003\n"
    "max_len = 160\n"
    "max_new_tokens = 6\n"
    "visual_dim = 8\n"
    "projector_heads = 2\n"
    "max_frames = 4\n"
    "frames_classify = 2\n"
    "frames_identify = 2\n"
    "frames_caption = 2\n"
    "frames_retrieve = 2\n"
    "frames_mcq = 2\n"
    "frames_ad = 2\n"
    "epochs = 2\n"
    "batch_size = 4\n"
    "seed = 7\n";

struct Fixture {
  std::filesystem::path dir;
  std::string manifest;
  std::string config;
  std::string plot;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::string manifest_text(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + '\n';
  return out;
}

inline Fixture write_fixture(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "plot.txt", kFixturePlot);
  write_file(dir / "subs.tsv", kFixtureSubtitles);
  write_file(dir / "manifest.jsonl", manifest_text(fixture_records()));
  write_file(dir / "run.cfg", kFixtureConfig);
  return {dir, (dir / "manifest.jsonl").string(), (dir / "run.cfg").string(), (dir / "plot.txt").string()};
}

inline RunConfig fixture_config(const Fixture& f) {
  RunConfig c = load_run_config(f.config);
  c.manifest = f.manifest;
  c.checkpoint_dir = (f.dir / "ckpt").string();
  c.out_dir = (f.dir / "out").string();
  return c;
}

}  // namespace movieseq::testing
