#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "movieseq/error.hpp"
#include "movieseq/visual.hpp"
#include "movieseq/vocab.hpp"

namespace movieseq {

enum class SegmentKind : std::uint8_t { kText, kImage, kVideo };
enum class Role : std::uint8_t { kContext, kQuestion, kAnswer };

/// Which external context a segment came from. Truncation and the context
/// toggles key off this tag.
enum class ContextSource : std::uint8_t { kNone, kCharacter, kPlot, kSubtitle, kHistory, kHistoryHeader };

/// Instruction family a sample was built with (drives rephrasing).
enum class Family : std::uint8_t { kNone, kIa, kIb, kII, kIII, kIV };

struct Segment {
  SegmentKind kind = SegmentKind::kText;
  Role role = Role::kContext;
  std::string text;        // kText
  VisualPayload visual;    // kImage / kVideo
  ContextSource source = ContextSource::kNone;
  int history_index = -1;  // groups the video and narration of one history entry; 0 is oldest

  static Segment make_text(std::string text, ContextSource source = ContextSource::kNone, int history_index = -1) {
    Segment s;
    s.text = std::move(text);
    s.source = source;
    s.history_index = history_index;
    return s;
  }
  static Segment image(VisualPayload payload, ContextSource source = ContextSource::kNone) {
    Segment s;
    s.kind = SegmentKind::kImage;
    s.visual = std::move(payload);
    s.source = source;
    return s;
  }
  static Segment video(VisualPayload payload, ContextSource source = ContextSource::kNone, int history_index = -1) {
    Segment s;
    s.kind = SegmentKind::kVideo;
    s.visual = std::move(payload);
    s.source = source;
    s.history_index = history_index;
    return s;
  }

  bool is_visual() const { return kind != SegmentKind::kText; }

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Annotations carried alongside a sample so later transforms (rephrasing,
/// prompt dumps) do not have to re-derive them.
struct SampleMeta {
  Family family = Family::kNone;
  std::vector<std::string> bank_names;  // (i_a): every photo offered, in bank order
  std::vector<std::string> present;     // (i_a): ground-truth names

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

/// One instruction: ordered context, question and answer text.
struct InterleavedSample {
  std::string id;
  std::vector<Segment> context;
  std::string question;
  std::string answer;  // empty for inference prefixes
  SampleMeta meta;

  friend bool operator==(const InterleavedSample&, const InterleavedSample&) = default;
};

inline void validate_segment(const Segment& s) {
  if (s.kind == SegmentKind::kImage && s.visual.frame_count() != 1) {
    throw Error(ErrorCode::kInvalidArgument, "image segment must reference exactly one frame");
  }
  if (s.kind == SegmentKind::kVideo && s.visual.frame_count() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "video segment must reference at least one frame");
  }
  if (s.role == Role::kAnswer && s.kind != SegmentKind::kText) {
    throw Error(ErrorCode::kInvalidArgument, "answer segments are text-only");
  }
}

enum class SlotKind : std::uint8_t { kToken, kVisual };

struct Slot {
  SlotKind kind = SlotKind::kToken;
  std::int32_t value = 0;  // token id, or index into visual_slots

  static Slot token(TokenId id) { return {SlotKind::kToken, id}; }
  static Slot visual(std::int32_t index) { return {SlotKind::kVisual, index}; }

  friend bool operator==(const Slot&, const Slot&) = default;
};

struct VisualSlotRef {
  std::int32_t payload = 0;  // index into PackedSequence::payloads
  std::int32_t frame = 0;

  friend bool operator==(const VisualSlotRef&, const VisualSlotRef&) = default;
};

/// Flattened model input. loss_mask marks target positions: the logits at
/// position p - 1 are scored against the token at p.
struct PackedSequence {
  std::vector<Slot> slots;
  std::vector<bool> loss_mask;
  std::vector<VisualPayload> payloads;       // one per visual segment, context order
  std::vector<VisualSlotRef> visual_slots;   // one per frame, context order
  std::size_t answer_start = 0;              // first answer position (== length() for prefixes)

  std::size_t length() const noexcept { return slots.size(); }
  std::size_t masked_count() const { return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), true)); }

  TokenId token_at(std::size_t pos) const { return slots[pos].kind == SlotKind::kToken ? slots[pos].value : -1; }

  friend bool operator==(const PackedSequence&, const PackedSequence&) = default;
};

enum class Keep : std::uint8_t { kHead, kTail };

inline std::vector<TokenId> truncate_context(const std::vector<TokenId>& tokens, std::size_t max, Keep keep) {
  if (tokens.size() <= max) return tokens;
  if (keep == Keep::kHead) return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(max)};
  return {tokens.end() - static_cast<std::ptrdiff_t>(max), tokens.end()};
}

inline std::string history_header_text(std::size_t clips) {
  return "There are " + std::to_string(clips) + " video clips, ordered from the past to present:";
}

enum class PackMode : std::uint8_t {
  kTraining,  // answer ∥ EOS appended and masked
  kPrefix,    // stops after the assistant tag (generation / scoring prefix)
};

namespace detail {

struct TokenizedSegment {
  const Segment* segment = nullptr;
  std::vector<TokenId> tokens;  // text segments only
  bool dropped = false;
};

inline std::size_t slot_count(const std::vector<TokenizedSegment>& segs) {
  std::size_t n = 0;
  for (const auto& s : segs) {
    if (s.dropped) continue;
    n += s.segment->is_visual() ? s.segment->visual.frame_count() : s.tokens.size();
  }
  return n;
}

// Shrinks text segments of `source` by `excess` tokens in total. Head-kept
// sources lose tokens from their last segment first; tail-kept sources from
// their first.
inline std::size_t shrink_source(std::vector<TokenizedSegment>& segs, ContextSource source, Keep keep, std::size_t excess) {
  std::vector<TokenizedSegment*> targets;
  for (auto& s : segs) {
    if (!s.dropped && !s.segment->is_visual() && s.segment->source == source) targets.push_back(&s);
  }
  if (keep == Keep::kHead) std::reverse(targets.begin(), targets.end());
  std::size_t removed = 0;
  for (auto* t : targets) {
    if (removed >= excess) break;
    const std::size_t cut = std::min(t->tokens.size(), excess - removed);
    t->tokens = truncate_context(t->tokens, t->tokens.size() - cut, keep);
    removed += cut;
  }
  return removed;
}

}  // namespace detail

/// Lays a sample out as
///   USER: ctx... question <nl> MovieSeq: answer </s>
/// with the loss mask on answer ∥ EOS. When the layout exceeds `max_len`,
/// plot text is cut (keeping its head), then subtitle text (keeping its tail),
/// then whole history entries are dropped oldest first; visual content is
/// never cut, so if that is still not enough the call fails with OverLength.
inline PackedSequence pack(const InterleavedSample& sample, const Vocabulary& vocab, std::size_t max_len,
                           PackMode mode = PackMode::kTraining) {
  const auto user = vocab.find(tokens::kUser);
  const auto assistant = vocab.find(tokens::kAssistant);
  const auto newline = vocab.find(tokens::kNewline);
  if (!user || !assistant || !newline) {
    throw Error(ErrorCode::kInvalidArgument, "vocabulary lacks the prompt scaffold tokens");
  }
  const auto question = tokenize(sample.question, vocab);
  const auto answer = tokenize(sample.answer, vocab);
  if (mode == PackMode::kTraining && answer.empty()) {
    throw Error(ErrorCode::kEmptyAnswer, "sample '" + sample.id + "' has no answer tokens");
  }

  std::vector<detail::TokenizedSegment> segs;
  segs.reserve(sample.context.size());
  for (const auto& seg : sample.context) {
    validate_segment(seg);
    detail::TokenizedSegment ts;
    ts.segment = &seg;
    if (!seg.is_visual()) ts.tokens = tokenize(seg.text, vocab);
    segs.push_back(std::move(ts));
  }

  const std::size_t fixed = 1 + question.size() + 2 + (mode == PackMode::kTraining ? answer.size() + 1 : 0);
  auto total = [&] { return fixed + detail::slot_count(segs); };

  if (total() > max_len) detail::shrink_source(segs, ContextSource::kPlot, Keep::kHead, total() - max_len);
  if (total() > max_len) detail::shrink_source(segs, ContextSource::kSubtitle, Keep::kTail, total() - max_len);
  if (total() > max_len) {
    int max_index = -1;
    for (const auto& s : segs) max_index = std::max(max_index, s.segment->history_index);
    for (int h = 0; h <= max_index && total() > max_len; ++h) {
      for (auto& s : segs) {
        if (s.segment->history_index == h) s.dropped = true;
      }
      std::size_t remaining = 0;
      for (int k = h + 1; k <= max_index; ++k) {
        if (std::any_of(segs.begin(), segs.end(), [&](const auto& s) { return s.segment->history_index == k; })) ++remaining;
      }
      for (auto& s : segs) {
        if (s.segment->source == ContextSource::kHistoryHeader) s.tokens = tokenize(history_header_text(remaining + 1), vocab);
      }
    }
  }
  if (total() > max_len) {
    throw Error(ErrorCode::kOverLength, "sample '" + sample.id + "' needs " + std::to_string(total()) + " slots, limit " +
                                            std::to_string(max_len));
  }

  PackedSequence out;
  out.slots.reserve(total());
  out.slots.push_back(Slot::token(*user));
  for (const auto& s : segs) {
    if (s.dropped) continue;
    if (s.segment->is_visual()) {
      const auto payload_index = static_cast<std::int32_t>(out.payloads.size());
      out.payloads.push_back(s.segment->visual);
      for (std::size_t f = 0; f < s.segment->visual.frame_count(); ++f) {
        out.slots.push_back(Slot::visual(static_cast<std::int32_t>(out.visual_slots.size())));
        out.visual_slots.push_back({payload_index, static_cast<std::int32_t>(f)});
      }
    } else {
      for (TokenId t : s.tokens) out.slots.push_back(Slot::token(t));
    }
  }
  for (TokenId t : question) out.slots.push_back(Slot::token(t));
  out.slots.push_back(Slot::token(*newline));
  out.slots.push_back(Slot::token(*assistant));
  out.answer_start = out.slots.size();
  out.loss_mask.assign(out.slots.size(), false);
  if (mode == PackMode::kTraining) {
    for (TokenId t : answer) out.slots.push_back(Slot::token(t));
    out.slots.push_back(Slot::token(Vocabulary::kEos));
    out.loss_mask.resize(out.slots.size(), true);
  }
  return out;
}

/// Human-readable prompt: decoded text with visual runs shown as
/// `<image:ref>` / `<video:n:first-ref>`. Used for prompt dumps and diffs.
inline std::string render_prompt(const PackedSequence& packed, const Vocabulary& vocab) {
  std::string out;
  std::vector<TokenId> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    std::string text = decode(pending, vocab);
    if (!out.empty() && !text.empty() && out.back() != '\n' && text.front() != '\n') out += ' ';
    out += text;
    pending.clear();
  };
  std::size_t i = 0;
  while (i < packed.slots.size()) {
    const Slot& slot = packed.slots[i];
    if (slot.kind == SlotKind::kToken) {
      if (slot.value == Vocabulary::kEos) {
        flush();
        out += " </s>";
        ++i;
        continue;
      }
      pending.push_back(slot.value);
      ++i;
      continue;
    }
    flush();
    const auto payload_index = packed.visual_slots[static_cast<std::size_t>(slot.value)].payload;
    const auto& payload = packed.payloads[static_cast<std::size_t>(payload_index)];
    std::string tag = payload.frame_count() == 1 ? "<image:" + payload.frames[0].str() + ">"
                                                 : "<video:" + std::to_string(payload.frame_count()) + ":" +
                                                       payload.frames[0].str() + ">";
    if (!out.empty() && out.back() != '\n') out += ' ';
    out += tag;
    i += payload.frame_count();
  }
  flush();
  return out;
}

}  // namespace movieseq
