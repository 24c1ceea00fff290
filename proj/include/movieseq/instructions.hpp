#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "movieseq/error.hpp"
#include "movieseq/metrics.hpp"
#include "movieseq/sequence.hpp"
#include "movieseq/tensor.hpp"
#include "movieseq/visual.hpp"

namespace movieseq {

// ---------------------------------------------------------------------------
// Context sources

/// Character photos in bank order. Each photo is a single-frame payload.
class CharacterBank {
 public:
  struct Entry {
    std::string name;
    VisualPayload photo;
  };

  void add(std::string name, VisualPayload photo) {
    if (name.empty()) throw Error(ErrorCode::kInvalidArgument, "character name is empty");
    if (contains(name)) throw Error(ErrorCode::kInvalidArgument, "duplicate character name '" + name + "'");
    if (photo.frame_count() != 1) throw Error(ErrorCode::kInvalidArgument, "photo of '" + name + "' must be one frame");
    entries_.push_back({std::move(name), std::move(photo)});
  }

  bool contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
  }
  const Entry& at(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return e;
    }
    throw Error(ErrorCode::kUnknownName, "'" + std::string(name) + "' is not in the character bank");
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
};

/// Sentences grouped into paragraphs by half-open sentence ranges.
struct Plot {
  std::vector<std::string> sentences;
  std::vector<std::pair<std::size_t, std::size_t>> paragraph_bounds;

  std::size_t paragraph_count() const { return paragraph_bounds.size(); }

  std::string paragraph(std::size_t p) const {
    const auto [b, e] = paragraph_bounds.at(p);
    return join_sentences(b, e);
  }

  std::string join_sentences(std::size_t begin, std::size_t end) const {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
      if (i > begin) out += ' ';
      out += sentences[i];
    }
    return out;
  }

  void validate() const {
    if (paragraph_bounds.empty()) throw Error(ErrorCode::kInvalidArgument, "plot has no paragraphs");
    std::size_t expect = 0;
    for (const auto& [b, e] : paragraph_bounds) {
      if (b != expect || e <= b) throw Error(ErrorCode::kInvalidArgument, "plot paragraphs must partition the sentences");
      expect = e;
    }
    if (expect != sentences.size()) throw Error(ErrorCode::kInvalidArgument, "plot paragraphs must cover every sentence");
  }
};

/// One sentence per line; blank lines separate paragraphs.
inline Plot parse_plot(std::string_view text) {
  Plot plot;
  std::size_t start = 0;
  auto close = [&] {
    if (plot.sentences.size() > start) plot.paragraph_bounds.emplace_back(start, plot.sentences.size());
    start = plot.sentences.size();
  };
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string norm = normalize_whitespace(line);
    if (norm.empty()) {
      close();
    } else {
      plot.sentences.push_back(norm);
    }
  }
  close();
  if (plot.sentences.empty()) throw Error(ErrorCode::kParseError, "plot has no sentences");
  return plot;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Plot load_plot(const std::string& path) { return parse_plot(read_text_file(path)); }

struct SubtitleLine {
  double start = 0.0;
  double end = 0.0;
  std::string text;
  std::string speaker;  // may be empty

  std::string render() const { return speaker.empty() ? text : speaker + ": " + text; }
};

struct SubtitleTrack {
  std::vector<SubtitleLine> lines;  // sorted by start

  /// Lines whose closed interval meets [start, end], in start order.
  std::vector<SubtitleLine> overlapping(double start, double end) const {
    std::vector<SubtitleLine> out;
    for (const auto& l : lines) {
      if (l.start <= end && l.end >= start) out.push_back(l);
    }
    return out;
  }
};

/// "start<TAB>end<TAB>speaker<TAB>text" per line, seconds as decimals.
inline SubtitleTrack parse_subtitles(std::string_view text) {
  SubtitleTrack track;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
      const auto tab = line.find('\t', pos);
      if (tab == std::string::npos) throw Error(ErrorCode::kParseError, "subtitle line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
      f.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    f.push_back(line.substr(pos));
    SubtitleLine l;
    try {
      std::size_t used = 0;
      l.start = std::stod(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("start");
      l.end = std::stod(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("end");
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParseError, "subtitle line " + std::to_string(lineno) + ": bad time");
    }
    if (l.start > l.end) throw Error(ErrorCode::kParseError, "subtitle line " + std::to_string(lineno) + ": start after end");
    if (!track.lines.empty() && l.start < track.lines.back().start) {
      throw Error(ErrorCode::kParseError, "subtitle line " + std::to_string(lineno) + ": lines not sorted by start");
    }
    l.speaker = normalize_whitespace(f[2]);
    l.text = normalize_whitespace(f[3]);
    track.lines.push_back(std::move(l));
  }
  return track;
}

inline SubtitleTrack load_subtitles(const std::string& path) { return parse_subtitles(read_text_file(path)); }

struct HistoryEntry {
  std::string id;
  VisualPayload clip;
  std::string narration;
  double timestamp = 0.0;
};

enum class HistoryMode { kOracle, kRecurrent };

// ---------------------------------------------------------------------------
// Sentence embedders (plot retrieval, caption retrieval)

class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

/// Whole-string hash seeding a Gaussian vector: distinct strings get
/// distinct directions with probability one.
class HashEmbedder final : public SentenceEmbedder {
 public:
  explicit HashEmbedder(std::size_t dim = 64, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}

  std::vector<double> embed(std::string_view text) const override {
    Rng rng(mix64(seed_ ^ fnv1a(normalize_whitespace(text))));
    std::vector<double> v(dim_);
    for (double& x : v) x = rng.gaussian();
    return v;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Sum of per-word Gaussian vectors over metric tokens, so strings sharing
/// words are close.
class BagOfWordsEmbedder final : public SentenceEmbedder {
 public:
  explicit BagOfWordsEmbedder(std::size_t dim = 64, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}

  std::vector<double> embed(std::string_view text) const override {
    std::vector<double> v(dim_, 0.0);
    for (const auto& w : metric_tokens(text)) {
      Rng rng(mix64(seed_ ^ fnv1a(w)));
      for (double& x : v) x += rng.gaussian();
    }
    return v;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Externally computed vectors, JSONL rows {"text": ..., "vector": [...]}.
class FileEmbedder final : public SentenceEmbedder {
 public:
  static FileEmbedder load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open sentence embeddings " + path);
    FileEmbedder e;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        e.add(j.at("text").get<std::string>(), j.at("vector").get<std::vector<double>>());
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::kParseError, path + ":" + std::to_string(lineno) + ": " + ex.what());
      }
    }
    return e;
  }

  void add(const std::string& text, std::vector<double> v) {
    if (!table_.empty() && table_.begin()->second.size() != v.size()) {
      throw Error(ErrorCode::kInvalidArgument, "sentence vector width differs from earlier rows");
    }
    table_[normalize_whitespace(text)] = std::move(v);
  }

  std::vector<double> embed(std::string_view text) const override {
    auto it = table_.find(normalize_whitespace(text));
    if (it == table_.end()) throw Error(ErrorCode::kMissingEmbedding, "no sentence vector for '" + std::string(text) + "'");
    return it->second;
  }

 private:
  std::map<std::string, std::vector<double>> table_;
};

// ---------------------------------------------------------------------------
// Plot sampling

enum class ParagraphScore { kMaxSentence, kMeanEmbedding };

inline std::size_t rag_paragraph_index(const Plot& plot, std::string_view query, const SentenceEmbedder& embedder,
                                       ParagraphScore score = ParagraphScore::kMaxSentence) {
  plot.validate();
  const auto q = embedder.embed(query);
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < plot.paragraph_count(); ++p) {
    const auto [b, e] = plot.paragraph_bounds[p];
    double s = -std::numeric_limits<double>::infinity();
    if (score == ParagraphScore::kMaxSentence) {
      for (std::size_t i = b; i < e; ++i) s = std::max(s, cosine(q, embedder.embed(plot.sentences[i])));
    } else {
      std::vector<double> mean(q.size(), 0.0);
      for (std::size_t i = b; i < e; ++i) {
        const auto v = embedder.embed(plot.sentences[i]);
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += v[k];
      }
      s = cosine(q, mean);
    }
    if (s > best_score) {
      best_score = s;
      best = p;
    }
  }
  return best;
}

/// Top-1 paragraph by cosine between the query and the paragraph's
/// sentences; the earliest paragraph wins ties.
inline std::string sample_plot_rag(const Plot& plot, std::string_view query, const SentenceEmbedder& embedder,
                                   ParagraphScore score = ParagraphScore::kMaxSentence) {
  return plot.paragraph(rag_paragraph_index(plot, query, embedder, score));
}

inline constexpr std::size_t kDefaultPlotWindow = 5;

/// Half-open sentence window of width w centred on floor((t / T) · S).
inline std::pair<std::size_t, std::size_t> temporal_window(std::size_t sentence_count, double t, double duration, std::size_t w) {
  if (sentence_count == 0) throw Error(ErrorCode::kInvalidArgument, "plot has no sentences");
  if (!(duration > 0.0) || t < 0.0 || t > duration || w == 0) {
    throw Error(ErrorCode::kInvalidArgument, "temporal sampling needs 0 <= t <= T, T > 0 and w >= 1");
  }
  const auto s = static_cast<long long>(sentence_count);
  long long r = static_cast<long long>(std::floor(t * static_cast<double>(sentence_count) / duration));
  r = std::clamp(r, 0LL, s - 1);
  const long long start = r - static_cast<long long>(w / 2);
  const long long end = start + static_cast<long long>(w);
  return {static_cast<std::size_t>(std::max(start, 0LL)), static_cast<std::size_t>(std::min(end, s))};
}

inline std::string sample_plot_temporal(const Plot& plot, double t, double duration, std::size_t w = kDefaultPlotWindow) {
  const auto [b, e] = temporal_window(plot.sentences.size(), t, duration, w);
  return plot.join_sentences(b, e);
}

// ---------------------------------------------------------------------------
// Instruction builders

inline constexpr std::string_view kIdentifyQuestion = "Who can be found in this video? If not, output None.";
inline constexpr std::string_view kNoneAnswer = "None";
inline constexpr std::string_view kNoDialogue = "no dialogue";

/// Context pieces to interleave ahead of a clip. Each optional part is one
/// context source; absent parts contribute nothing.
struct ContextParts {
  enum class CharacterStyle { kAll, kGiven };
  const CharacterBank* bank = nullptr;
  std::vector<std::string> photos;  // names whose photo is attached, bank order
  CharacterStyle character_style = CharacterStyle::kAll;
  std::optional<std::string> plot;
  std::optional<std::string> subtitles;
  std::vector<std::pair<VisualPayload, std::string>> history;  // oldest first
  bool with_history = false;
};

/// Lays out context parts in a fixed order (characters, history, plot,
/// subtitles, clip) using the instruction phrasings.
inline std::vector<Segment> compose_context(const ContextParts& parts, const VisualPayload& clip) {
  std::vector<Segment> out;
  const bool chars = parts.bank != nullptr && !parts.photos.empty();
  if (chars) {
    const bool all = parts.character_style == ContextParts::CharacterStyle::kAll;
    out.push_back(Segment::make_text(all ? "There are several character photos:" : "There have character photos:",
                                     ContextSource::kCharacter));
    for (std::size_t i = 0; i < parts.photos.size(); ++i) {
      out.push_back(Segment::image(parts.bank->at(parts.photos[i]).photo, ContextSource::kCharacter));
      std::string text = "is " + parts.photos[i];
      if (i + 1 < parts.photos.size()) text += " ,";
      out.push_back(Segment::make_text(std::move(text), ContextSource::kCharacter));
    }
  }
  if (parts.with_history) {
    out.push_back(Segment::make_text(history_header_text(parts.history.size() + 1), ContextSource::kHistoryHeader));
    for (std::size_t i = 0; i < parts.history.size(); ++i) {
      const int idx = static_cast<int>(i);
      out.push_back(Segment::video(parts.history[i].first, ContextSource::kHistory, idx));
      out.push_back(Segment::make_text(parts.history[i].second, ContextSource::kHistory, idx));
    }
  }
  const bool basis = parts.plot.has_value() || parts.subtitles.has_value();
  if (basis) {
    if (parts.plot) {
      out.push_back(Segment::make_text("Based on the plot"));
      out.push_back(Segment::make_text(*parts.plot, ContextSource::kPlot));
    }
    if (parts.subtitles) {
      out.push_back(Segment::make_text(parts.plot ? "and the" : "Based on the"));
      out.push_back(Segment::make_text(*parts.subtitles, ContextSource::kSubtitle));
    }
    out.push_back(Segment::make_text("and the video"));
  } else if (chars) {
    out.push_back(Segment::make_text("and a video"));
  }
  out.push_back(Segment::video(clip));
  return out;
}

inline std::string character_answer(const CharacterBank& bank, const std::vector<std::string>& present) {
  std::string out;
  for (const auto& e : bank.entries()) {
    if (std::find(present.begin(), present.end(), e.name) == present.end()) continue;
    if (!out.empty()) out += ", ";
    out += e.name;
  }
  return out.empty() ? std::string(kNoneAnswer) : out;
}

enum class CharacterMode { kA, kB };

/// Mode a: every bank photo, then the clip; the answer names who is present
/// in bank order ("None" if nobody). Mode b: only the given photos, the
/// caller's query, no answer.
inline InterleavedSample build_character_instruction(const CharacterBank& bank, const VisualPayload& clip, CharacterMode mode,
                                                     const std::vector<std::string>& present,
                                                     const std::optional<std::string>& query = std::nullopt) {
  for (const auto& n : present) {
    if (!bank.contains(n)) throw Error(ErrorCode::kUnknownName, "'" + n + "' is not in the character bank");
  }
  InterleavedSample s;
  ContextParts parts;
  parts.bank = &bank;
  if (mode == CharacterMode::kA) {
    for (const auto& e : bank.entries()) parts.photos.push_back(e.name);
    s.question = std::string(kIdentifyQuestion);
    s.answer = character_answer(bank, present);
    s.meta.family = Family::kIa;
    s.meta.bank_names = parts.photos;
    for (const auto& e : bank.entries()) {
      if (std::find(present.begin(), present.end(), e.name) != present.end()) s.meta.present.push_back(e.name);
    }
  } else {
    if (!query || normalize_whitespace(*query).empty()) throw Error(ErrorCode::kInvalidArgument, "mode b needs a query");
    for (const auto& e : bank.entries()) {
      if (std::find(present.begin(), present.end(), e.name) != present.end()) parts.photos.push_back(e.name);
    }
    parts.character_style = ContextParts::CharacterStyle::kGiven;
    s.question = *query;
    s.meta.family = Family::kIb;
  }
  s.context = compose_context(parts, clip);
  return s;
}

inline InterleavedSample build_plot_instruction(const std::string& paragraph, const VisualPayload& clip, const std::string& query) {
  ContextParts parts;
  parts.plot = paragraph;
  InterleavedSample s;
  s.context = compose_context(parts, clip);
  s.question = query;
  s.meta.family = Family::kII;
  return s;
}

inline std::string subtitle_text(const SubtitleTrack& track, double start, double end) {
  if (start > end) throw Error(ErrorCode::kInvalidArgument, "subtitle span start after end");
  std::string out;
  for (const auto& l : track.overlapping(start, end)) {
    if (!out.empty()) out += ' ';
    out += l.render();
  }
  return out.empty() ? std::string(kNoDialogue) : out;
}

inline InterleavedSample build_subtitle_instruction(const SubtitleTrack& track, const VisualPayload& clip,
                                                    std::pair<double, double> span, const std::string& query) {
  ContextParts parts;
  parts.subtitles = subtitle_text(track, span.first, span.second);
  InterleavedSample s;
  s.context = compose_context(parts, clip);
  s.question = query;
  s.meta.family = Family::kIII;
  return s;
}

/// Narrations for each history entry: annotations (oracle) or the model's
/// earlier predictions keyed by entry id (recurrent).
inline std::vector<std::pair<VisualPayload, std::string>> history_narrations(
    const std::vector<HistoryEntry>& history, HistoryMode mode, const std::map<std::string, std::string>& predictions) {
  std::vector<std::pair<VisualPayload, std::string>> out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i > 0 && !(history[i].timestamp > history[i - 1].timestamp)) {
      throw Error(ErrorCode::kInvalidArgument, "history timestamps must strictly increase");
    }
    if (mode == HistoryMode::kOracle) {
      out.emplace_back(history[i].clip, history[i].narration);
    } else {
      auto it = predictions.find(history[i].id);
      if (it == predictions.end()) throw Error(ErrorCode::kMissingPrediction, "no prediction for history clip '" + history[i].id + "'");
      out.emplace_back(history[i].clip, it->second);
    }
  }
  return out;
}

inline InterleavedSample build_history_instruction(const std::vector<HistoryEntry>& history, const VisualPayload& current,
                                                   HistoryMode mode, const std::map<std::string, std::string>& predictions,
                                                   const std::string& query = "Please briefly describe this video.") {
  ContextParts parts;
  parts.with_history = true;
  parts.history = history_narrations(history, mode, predictions);
  InterleavedSample s;
  s.context = compose_context(parts, current);
  s.question = query;
  s.meta.family = Family::kIV;
  return s;
}

// ---------------------------------------------------------------------------
// Template rephrasing

struct TemplateSpec {
  Family family = Family::kIa;
  std::vector<std::string> variants;  // variant 0 leaves the sample as built
  std::uint64_t seed = 0;
};

inline std::vector<std::string> default_variants(Family family) {
  switch (family) {
    case Family::kIa:
      return {std::string(kIdentifyQuestion), "Which of these characters appear in this video? If not, output None.",
              "Does {name} appear in this video?"};
    case Family::kIV:
      return {"Please briefly describe this video.", "Given the {n} clips, describe the last one.",
              "What happens in the current clip?"};
    default:
      return {"Please briefly describe this video.", "Describe what happens in this clip.", "What is shown in this video?"};
  }
}

/// One phrasing per line; blank lines are skipped.
inline TemplateSpec load_template_pool(const std::string& path, Family family, std::uint64_t seed) {
  TemplateSpec spec{family, {}, seed};
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!normalize_whitespace(line).empty()) spec.variants.push_back(line);
  }
  if (spec.variants.empty()) throw Error(ErrorCode::kParseError, path + ": empty template pool");
  return spec;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

inline std::size_t pick_variant(const TemplateSpec& t, const InterleavedSample& sample) {
  Rng rng(mix64(t.seed ^ fnv1a(sample.id)));
  return static_cast<std::size_t>(rng.below(t.variants.size()));
}

/// Seeded choice of a phrasing. A "{name}" variant of the (i_a) family turns
/// the sample into a yes/no question about one bank name.
inline InterleavedSample rephrase(const TemplateSpec& t, const InterleavedSample& sample) {
  if (t.variants.empty()) throw Error(ErrorCode::kInvalidArgument, "template pool is empty");
  if (t.family != sample.meta.family) throw Error(ErrorCode::kInvalidArgument, "template family does not match the sample");
  const std::size_t v = pick_variant(t, sample);
  if (v == 0) return sample;
  InterleavedSample out = sample;
  std::string q = t.variants[v];
  if (q.find("{name}") != std::string::npos) {
    if (sample.meta.bank_names.empty()) return sample;
    Rng rng(mix64(t.seed ^ fnv1a(sample.id) ^ 0x9E3779B97F4A7C15ULL));
    const auto& name = sample.meta.bank_names[rng.below(sample.meta.bank_names.size())];
    q = replace_all(q, "{name}", name);
    const bool present = std::find(sample.meta.present.begin(), sample.meta.present.end(), name) != sample.meta.present.end();
    out.answer = present ? "Yes" : "No";
  }
  if (q.find("{n}") != std::string::npos) {
    std::size_t clips = 0;
    for (const auto& s : sample.context) {
      if (s.kind == SegmentKind::kVideo) ++clips;
    }
    q = replace_all(q, "{n}", std::to_string(clips));
  }
  out.question = q;
  return out;
}

}  // namespace movieseq
