#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "movieseq/error.hpp"
#include "movieseq/instructions.hpp"
#include "movieseq/lm.hpp"

namespace movieseq {

enum class Task { kClassify, kIdentify, kCaption, kRetrieve, kMcq, kAd };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::kClassify: return "classify";
    case Task::kIdentify: return "identify";
    case Task::kCaption: return "caption";
    case Task::kRetrieve: return "retrieve";
    case Task::kMcq: return "mcq";
    case Task::kAd: return "ad";
  }
  return "?";
}

inline std::optional<Task> parse_task(std::string_view s) {
  for (Task t : {Task::kClassify, Task::kIdentify, Task::kCaption, Task::kRetrieve, Task::kMcq, Task::kAd}) {
    if (task_name(t) == s) return t;
  }
  return std::nullopt;
}

/// Context sources a run may use.
enum class Toggle { kImg, kPlot, kSub, kHist };

using ToggleSet = std::set<Toggle>;

inline ToggleSet all_toggles() { return {Toggle::kImg, Toggle::kPlot, Toggle::kSub, Toggle::kHist}; }

/// Comma-separated subset of img, plot, sub, hist; empty means video only.
inline ToggleSet parse_toggles(std::string_view text) {
  ToggleSet out;
  std::string s(text);
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = normalize_whitespace(item);
    if (item.empty()) continue;
    if (item == "img") {
      out.insert(Toggle::kImg);
    } else if (item == "plot") {
      out.insert(Toggle::kPlot);
    } else if (item == "sub") {
      out.insert(Toggle::kSub);
    } else if (item == "hist") {
      out.insert(Toggle::kHist);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown context toggle '" + item + "'");
    }
  }
  return out;
}

inline std::string format_toggles(const ToggleSet& t) {
  std::string out;
  auto add = [&](Toggle k, const char* name) {
    if (!t.count(k)) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(Toggle::kImg, "img");
  add(Toggle::kPlot, "plot");
  add(Toggle::kSub, "sub");
  add(Toggle::kHist, "hist");
  return out;
}

/// Everything a train / eval run needs. Settings (echoed into checkpoints
/// and reports) are kept apart from filesystem paths.
struct RunConfig {
  LMConfig lm;
  std::map<Task, std::size_t> frames{{Task::kAd, 8},       {Task::kCaption, 32}, {Task::kRetrieve, 32},
                                     {Task::kMcq, 32},     {Task::kClassify, 64}, {Task::kIdentify, 32}};
  std::size_t context_budget = 512;  // words per plot / subtitle text
  long long plot_tokens = -1;        // words of plot kept; -1 = context_budget, 0 = plot off
  long long history_n = -1;          // most recent history clips kept; -1 = all, 0 = history off
  std::size_t plot_window = kDefaultPlotWindow;
  std::string rag_score = "max";     // max | mean
  std::string embedder = "hash";     // hash | bow | path to a JSONL vector file
  std::uint64_t seed = 0;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::size_t vocab_max = 0;
  std::size_t max_per_task = 0;      // 0 = every train record; otherwise first N per task
  bool rephrase = false;
  std::string toggle = "img,plot,sub,hist";
  std::string mode = "oracle";       // oracle | recurrent
  std::string train_split = "train";
  std::string eval_split = "test";
  bool resume = true;

  // paths
  std::string manifest;
  std::string vocab;
  std::string embeddings;
  std::string templates;       // directory of <family>.txt pools
  std::string checkpoint_dir = "checkpoints";
  std::string out_dir = "out";
  std::string predictions;     // preloaded predictions for recurrent evaluation

  std::size_t answer_budget() const { return lm.max_new_tokens; }
  ToggleSet toggles() const { return parse_toggles(toggle); }
  HistoryMode history_mode() const {
    if (mode == "oracle") return HistoryMode::kOracle;
    if (mode == "recurrent") return HistoryMode::kRecurrent;
    throw Error(ErrorCode::kInvalidArgument, "mode must be oracle or recurrent, got '" + mode + "'");
  }
  std::size_t plot_budget() const { return plot_tokens < 0 ? context_budget : static_cast<std::size_t>(plot_tokens); }

  /// Settings only, in a fixed order; paths are excluded so relocating a
  /// run does not change its checkpoints or reports.
  std::map<std::string, std::string> settings() const {
    std::map<std::string, std::string> kv = lm.to_kv();
    for (const auto& [t, n] : frames) kv["frames_" + std::string(task_name(t))] = std::to_string(n);
    kv["context_budget"] = std::to_string(context_budget);
    kv["plot_tokens"] = std::to_string(plot_tokens);
    kv["history_n"] = std::to_string(history_n);
    kv["plot_window"] = std::to_string(plot_window);
    kv["rag_score"] = rag_score;
    kv["embedder"] = embedder;
    kv["seed"] = std::to_string(seed);
    kv["epochs"] = std::to_string(epochs);
    kv["batch_size"] = std::to_string(batch_size);
    kv["vocab_max"] = std::to_string(vocab_max);
    kv["max_per_task"] = std::to_string(max_per_task);
    kv["rephrase"] = rephrase ? "true" : "false";
    kv["toggle"] = toggle;
    kv["mode"] = mode;
    kv["train_split"] = train_split;
    kv["eval_split"] = eval_split;
    return kv;
  }

  /// Applies one key=value setting; unknown keys are rejected.
  void set(const std::string& key, const std::string& value) {
    auto bad = [&] { return Error(ErrorCode::kParseError, "bad value '" + value + "' for " + key); };
    auto as_size = [&]() -> std::size_t {
      try {
        std::size_t used = 0;
        if (!value.empty() && value[0] == '-') throw bad();
        const auto v = std::stoull(value, &used);
        if (used != value.size()) throw bad();
        return v;
      } catch (const std::logic_error&) {
        throw bad();
      }
    };
    auto as_ll = [&]() -> long long {
      try {
        std::size_t used = 0;
        const auto v = std::stoll(value, &used);
        if (used != value.size()) throw bad();
        return v;
      } catch (const std::logic_error&) {
        throw bad();
      }
    };
    auto as_double = [&]() -> double {
      try {
        std::size_t used = 0;
        const auto v = std::stod(value, &used);
        if (used != value.size()) throw bad();
        return v;
      } catch (const std::logic_error&) {
        throw bad();
      }
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw bad();
    };

    if (key.rfind("frames_", 0) == 0) {
      const auto t = parse_task(key.substr(7));
      if (!t) throw Error(ErrorCode::kParseError, "unknown config key '" + key + "'");
      frames[*t] = as_size();
      return;
    }
    if (key == "d_model") lm.d_model = as_size();
    else if (key == "n_layers") lm.n_layers = as_size();
    else if (key == "n_heads") lm.n_heads = as_size();
    else if (key == "vocab_size") lm.vocab_size = as_size();
    else if (key == "max_len") lm.max_len = as_size();
    else if (key == "lora_rank") lm.lora_rank = as_size();
    else if (key == "lora_alpha") lm.lora_alpha = as_double();
    else if (key == "learning_rate") lm.learning_rate = as_double();
    else if (key == "max_new_tokens" || key == "answer_budget") lm.max_new_tokens = as_size();
    else if (key == "ffn_mult") lm.ffn_mult = as_size();
    else if (key == "visual_dim") lm.visual_dim = as_size();
    else if (key == "max_frames") lm.max_frames = as_size();
    else if (key == "projector_heads") lm.projector_heads = as_size();
    else if (key == "context_budget") context_budget = as_size();
    else if (key == "plot_tokens") plot_tokens = as_ll();
    else if (key == "history_n") history_n = as_ll();
    else if (key == "plot_window") plot_window = as_size();
    else if (key == "rag_score") {
      if (value != "max" && value != "mean") throw bad();
      rag_score = value;
    } else if (key == "embedder") embedder = value;
    else if (key == "seed") seed = as_size();
    else if (key == "epochs") epochs = as_size();
    else if (key == "batch_size") {
      batch_size = as_size();
      if (batch_size == 0) throw bad();
    } else if (key == "vocab_max") vocab_max = as_size();
    else if (key == "max_per_task") max_per_task = as_size();
    else if (key == "rephrase") rephrase = as_bool();
    else if (key == "toggle") {
      parse_toggles(value);
      toggle = value;
    } else if (key == "mode") {
      if (value != "oracle" && value != "recurrent") throw bad();
      mode = value;
    } else if (key == "train_split") train_split = value;
    else if (key == "eval_split") eval_split = value;
    else if (key == "resume") resume = as_bool();
    else if (key == "manifest") manifest = value;
    else if (key == "vocab") vocab = value;
    else if (key == "embeddings") embeddings = value;
    else if (key == "templates") templates = value;
    else if (key == "checkpoint_dir") checkpoint_dir = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "predictions") predictions = value;
    else throw Error(ErrorCode::kParseError, "unknown config key '" + key + "'");
  }
};

/// Flat "key = value" lines; '#' starts a comment line.
inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin = "config") {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string trimmed = normalize_whitespace(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kParseError, origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = normalize_whitespace(line.substr(0, eq));
    std::string value = line.substr(eq + 1);
    const auto b = value.find_first_not_of(" \t\r");
    const auto e = value.find_last_not_of(" \t\r");
    value = b == std::string::npos ? "" : value.substr(b, e - b + 1);
    try {
      cfg.set(key, value);
    } catch (const Error& err) {
      throw Error(err.code(), origin + ":" + std::to_string(lineno) + ": " + err.detail());
    }
  }
}

inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  apply_config_text(cfg, read_text_file(path), path);
  return cfg;
}

}  // namespace movieseq
