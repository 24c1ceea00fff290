#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "movieseq/config.hpp"
#include "movieseq/error.hpp"
#include "movieseq/instructions.hpp"
#include "movieseq/visual.hpp"

// Manifest rows (JSONL, one object per line):
//   id        string, unique
//   task      classify | identify | caption | retrieve | mcq | ad
//   split     train | val | test
//   media     [{"seed": s, "frames": n} | {"row": r, "frames": n}, ...]
//             the clip is the concatenation of the spans, in order
//   contexts  optional list of
//               {"type": "characters", "mode": "a"|"b",
//                "bank": [{"name": n, "photo": {"seed": s} | {"row": r}}, ...],
//                "present": [names]}
//               {"type": "plot", "file": f, "query": q}
//               {"type": "plot", "file": f, "t": t, "T": T, "w": w}
//               {"type": "subtitle", "file": f, "start": s, "end": e}
//               {"type": "history", "ids": [record ids, oldest first]}
//   question  string
//   answer    string (training target; caption / query text for evaluation)
//   options   5 strings, with "gold" index (mcq)
//   labels    label set (classify; optional, otherwise every classify answer)
//   group     paragraph group for repetition scoring (default: id)
//   timestamp seconds (required for records used as history)
// File paths resolve against the manifest's directory.

namespace movieseq {

struct MediaSpan {
  FrameRef first;
  std::size_t frames = 1;
};

struct CharacterContext {
  CharacterMode mode = CharacterMode::kA;
  CharacterBank bank;
  std::vector<std::string> present;
};

struct PlotContext {
  std::string file;  // resolved path
  std::optional<std::string> query;
  double t = 0.0;
  double duration = 0.0;
  std::optional<std::size_t> window;
};

struct SubtitleContext {
  std::string file;
  double start = 0.0;
  double end = 0.0;
};

struct ManifestRecord {
  std::string id;
  Task task = Task::kCaption;
  std::string split;
  std::vector<MediaSpan> media;
  std::optional<CharacterContext> characters;
  std::optional<PlotContext> plot;
  std::optional<SubtitleContext> subtitle;
  std::optional<std::vector<std::string>> history;
  std::string question;
  std::string answer;
  std::vector<std::string> options;
  std::optional<std::size_t> gold;
  std::vector<std::string> labels;
  std::string group;
  std::optional<double> timestamp;
  std::size_t line = 0;

  std::size_t total_frames() const {
    std::size_t n = 0;
    for (const auto& m : media) n += m.frames;
    return n;
  }

  FrameRef frame(std::size_t i) const {
    for (const auto& m : media) {
      if (i < m.frames) return {m.first.kind, m.first.value + i};
      i -= m.frames;
    }
    throw Error(ErrorCode::kInvalidArgument, "frame index past the end of record " + id);
  }

  /// The target text used for training.
  std::string target() const {
    if (task == Task::kMcq) return options.at(*gold);
    return answer;
  }
};

/// Records plus the side files they reference, loaded once.
struct Manifest {
  std::vector<ManifestRecord> records;
  std::map<std::string, Plot> plots;
  std::map<std::string, SubtitleTrack> subtitles;
  std::map<std::string, std::size_t> index;
  std::string hash;  // FNV-1a of the manifest bytes, hex

  const ManifestRecord& at(const std::string& id) const {
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorCode::kDanglingRef, "no record '" + id + "'");
    return records[it->second];
  }
};

namespace detail {

inline Error schema_error(std::size_t line, const std::string& field, const std::string& why) {
  return Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": field '" + field + "': " + why);
}

inline FrameRef parse_frame_ref(const nlohmann::json& j, std::size_t line, const std::string& field) {
  if (!j.is_object()) throw schema_error(line, field, "expected an object");
  const bool has_seed = j.contains("seed");
  const bool has_row = j.contains("row");
  if (has_seed == has_row) throw schema_error(line, field, "needs exactly one of 'seed' or 'row'");
  const auto& v = has_seed ? j["seed"] : j["row"];
  if (!v.is_number_unsigned()) throw schema_error(line, field, "frame reference must be a nonnegative integer");
  return has_seed ? FrameRef::seed(v.get<std::uint64_t>()) : FrameRef::row(v.get<std::uint64_t>());
}

inline std::string get_string(const nlohmann::json& j, const char* key, std::size_t line, bool required) {
  if (!j.contains(key)) {
    if (required) throw schema_error(line, key, "missing");
    return {};
  }
  if (!j[key].is_string()) throw schema_error(line, key, "expected a string");
  return j[key].get<std::string>();
}

inline double get_number(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw schema_error(line, key, "missing");
  if (!j[key].is_number()) throw schema_error(line, key, "expected a number");
  return j[key].get<double>();
}

inline std::vector<std::string> get_strings(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) return {};
  if (!j[key].is_array()) throw schema_error(line, key, "expected a list of strings");
  std::vector<std::string> out;
  for (const auto& v : j[key]) {
    if (!v.is_string()) throw schema_error(line, key, "expected a list of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace detail

inline ManifestRecord parse_record(const nlohmann::json& j, std::size_t line, const std::filesystem::path& base) {
  using detail::schema_error;
  if (!j.is_object()) throw schema_error(line, "<record>", "expected a JSON object");
  ManifestRecord r;
  r.line = line;
  r.id = detail::get_string(j, "id", line, true);
  if (r.id.empty()) throw schema_error(line, "id", "empty");
  const auto task = parse_task(detail::get_string(j, "task", line, true));
  if (!task) throw schema_error(line, "task", "unknown task");
  r.task = *task;
  r.split = detail::get_string(j, "split", line, true);
  if (r.split != "train" && r.split != "val" && r.split != "test") throw schema_error(line, "split", "must be train, val or test");

  if (!j.contains("media") || !j["media"].is_array() || j["media"].empty()) {
    throw schema_error(line, "media", "expected a nonempty list");
  }
  for (const auto& m : j["media"]) {
    MediaSpan span;
    span.first = detail::parse_frame_ref(m, line, "media");
    if (m.contains("frames")) {
      if (!m["frames"].is_number_unsigned() || m["frames"].get<std::size_t>() == 0) {
        throw schema_error(line, "media", "'frames' must be a positive integer");
      }
      span.frames = m["frames"].get<std::size_t>();
    }
    r.media.push_back(span);
  }

  auto resolve = [&](const std::string& f) { return (base / f).lexically_normal().string(); };
  if (j.contains("contexts")) {
    if (!j["contexts"].is_array()) throw schema_error(line, "contexts", "expected a list");
    for (const auto& c : j["contexts"]) {
      const std::string type = detail::get_string(c, "type", line, true);
      if (type == "characters") {
        if (r.characters) throw schema_error(line, "contexts", "duplicate characters context");
        CharacterContext cc;
        const std::string mode = detail::get_string(c, "mode", line, false);
        if (mode.empty() || mode == "a") {
          cc.mode = CharacterMode::kA;
        } else if (mode == "b") {
          cc.mode = CharacterMode::kB;
        } else {
          throw schema_error(line, "mode", "must be a or b");
        }
        if (!c.contains("bank") || !c["bank"].is_array()) throw schema_error(line, "bank", "expected a list");
        for (const auto& e : c["bank"]) {
          const std::string name = detail::get_string(e, "name", line, true);
          if (!e.contains("photo")) throw schema_error(line, "photo", "missing");
          try {
            cc.bank.add(name, VisualPayload::image(detail::parse_frame_ref(e["photo"], line, "photo")));
          } catch (const Error& err) {
            if (err.code() == ErrorCode::kSchemaError) throw;
            throw schema_error(line, "bank", err.detail());
          }
        }
        cc.present = detail::get_strings(c, "present", line);
        for (const auto& n : cc.present) {
          if (!cc.bank.contains(n)) throw schema_error(line, "present", "'" + n + "' is not in the bank");
        }
        r.characters = std::move(cc);
      } else if (type == "plot") {
        if (r.plot) throw schema_error(line, "contexts", "duplicate plot context");
        PlotContext pc;
        pc.file = resolve(detail::get_string(c, "file", line, true));
        if (c.contains("query")) {
          pc.query = detail::get_string(c, "query", line, true);
        } else {
          pc.t = detail::get_number(c, "t", line);
          pc.duration = detail::get_number(c, "T", line);
          if (!(pc.duration > 0.0) || pc.t < 0.0 || pc.t > pc.duration) throw schema_error(line, "t", "need 0 <= t <= T and T > 0");
          if (c.contains("w")) {
            if (!c["w"].is_number_unsigned() || c["w"].get<std::size_t>() == 0) throw schema_error(line, "w", "must be a positive integer");
            pc.window = c["w"].get<std::size_t>();
          }
        }
        r.plot = std::move(pc);
      } else if (type == "subtitle") {
        if (r.subtitle) throw schema_error(line, "contexts", "duplicate subtitle context");
        SubtitleContext sc;
        sc.file = resolve(detail::get_string(c, "file", line, true));
        sc.start = detail::get_number(c, "start", line);
        sc.end = detail::get_number(c, "end", line);
        if (sc.start > sc.end) throw schema_error(line, "start", "after end");
        r.subtitle = std::move(sc);
      } else if (type == "history") {
        if (r.history) throw schema_error(line, "contexts", "duplicate history context");
        r.history = detail::get_strings(c, "ids", line);
      } else {
        throw schema_error(line, "type", "unknown context type '" + type + "'");
      }
    }
  }

  r.question = detail::get_string(j, "question", line, false);
  r.answer = detail::get_string(j, "answer", line, false);
  r.options = detail::get_strings(j, "options", line);
  r.labels = detail::get_strings(j, "labels", line);
  r.group = detail::get_string(j, "group", line, false);
  if (r.group.empty()) r.group = r.id;
  if (j.contains("timestamp")) r.timestamp = detail::get_number(j, "timestamp", line);
  if (j.contains("gold")) {
    if (!j["gold"].is_number_unsigned()) throw schema_error(line, "gold", "expected a nonnegative integer");
    r.gold = j["gold"].get<std::size_t>();
  }
  if (r.task == Task::kMcq) {
    if (r.options.size() != 5) throw schema_error(line, "options", "mcq needs exactly 5 options, got " + std::to_string(r.options.size()));
    if (!r.gold || *r.gold >= 5) throw schema_error(line, "gold", "mcq needs a gold index in 0..4");
  }
  if (r.task == Task::kIdentify && (!r.characters || r.characters->mode != CharacterMode::kA)) {
    throw schema_error(line, "contexts", "identify records need a mode-a characters context");
  }
  return r;
}

/// Parses a JSONL manifest and loads every plot / subtitle file it names.
inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  Manifest m;
  std::uint64_t h = fnv1a({});
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    h = fnv1a(line, h);
    h = fnv1a("\n", h);
    if (normalize_whitespace(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kParseError, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ManifestRecord r = parse_record(j, lineno, base);
    if (m.index.contains(r.id)) throw detail::schema_error(lineno, "id", "duplicate id '" + r.id + "'");
    m.index[r.id] = m.records.size();
    m.records.push_back(std::move(r));
  }
  m.hash = detail::hex64(h);

  for (const auto& r : m.records) {
    if (r.plot && !m.plots.contains(r.plot->file)) {
      if (!std::filesystem::exists(r.plot->file)) throw Error(ErrorCode::kDanglingRef, r.id + " -> plot file " + r.plot->file);
      m.plots[r.plot->file] = load_plot(r.plot->file);
    }
    if (r.subtitle && !m.subtitles.contains(r.subtitle->file)) {
      if (!std::filesystem::exists(r.subtitle->file)) throw Error(ErrorCode::kDanglingRef, r.id + " -> subtitle file " + r.subtitle->file);
      m.subtitles[r.subtitle->file] = load_subtitles(r.subtitle->file);
    }
    if (r.history) {
      if (!r.timestamp) throw detail::schema_error(r.line, "timestamp", "records with history need a timestamp");
      double prev = -std::numeric_limits<double>::infinity();
      for (const auto& hid : *r.history) {
        auto it = m.index.find(hid);
        if (it == m.index.end()) throw Error(ErrorCode::kDanglingRef, r.id + " -> history record " + hid);
        const auto& hr = m.records[it->second];
        if (!hr.timestamp) throw detail::schema_error(hr.line, "timestamp", "record used as history needs a timestamp");
        if (!(*hr.timestamp > prev)) throw detail::schema_error(r.line, "history", "history timestamps must strictly increase");
        if (!(*hr.timestamp < *r.timestamp)) throw detail::schema_error(r.line, "history", "history clip '" + hid + "' is not before this clip");
        prev = *hr.timestamp;
      }
    }
  }
  return m;
}

}  // namespace movieseq
