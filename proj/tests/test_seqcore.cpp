#include <gtest/gtest.h>

#include <algorithm>

#include "test_support.hpp"

using namespace movieseq;
using movieseq::testing::TempDir;

namespace {

Vocabulary basic_vocab() { return Vocabulary::build({"who is here ? a b c d e f g h the plot sub yes no"}); }

InterleavedSample text_sample(std::string question, std::string answer) {
  InterleavedSample s;
  s.id = "t";
  s.question = std::move(question);
  s.answer = std::move(answer);
  return s;
}

std::string random_text(Rng& rng) {
  static const std::vector<std::string> pieces{"who", "is", "here", "Zoë", "naïve", "a", "b", "x-y", "?", "日本", "\t", "  ", "\n", "42"};
  std::string out;
  const auto n = rng.below(12);
  for (std::uint64_t i = 0; i < n; ++i) {
    out += pieces[rng.below(pieces.size())];
    if (rng.below(3) != 0) out += ' ';
  }
  return out;
}

}  // namespace

TEST(Vocabulary, SpecialsComeFirst) {
  const auto v = basic_vocab();
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(1), "<s>");
  EXPECT_EQ(v.token(2), "</s>");
  EXPECT_EQ(v.token(3), "<unk>");
  EXPECT_TRUE(v.find("USER:").has_value());
  EXPECT_TRUE(v.find("MovieSeq:").has_value());
  EXPECT_TRUE(v.has_fallback());
}

TEST(Vocabulary, FrequencyOrderWithLexicographicTies) {
  const auto v = Vocabulary::build({"b a b c c c"});
  const auto base = Vocabulary::reserved_words().size() + 4;
  EXPECT_EQ(v.token(static_cast<TokenId>(base)), "c");
  EXPECT_EQ(v.token(static_cast<TokenId>(base + 1)), "b");
  EXPECT_EQ(v.token(static_cast<TokenId>(base + 2)), "a");
}

TEST(Vocabulary, CapKeepsMostFrequent) {
  const auto base = Vocabulary::reserved_words().size() + 4;
  const auto v = Vocabulary::build({"b a b c c c"}, base + 1);
  EXPECT_EQ(v.size(), base + 1);
  EXPECT_TRUE(v.word_id("c").has_value());
  EXPECT_FALSE(v.word_id("a").has_value());
  EXPECT_THROW(Vocabulary::build({"a"}, 5), Error);
}

TEST(Vocabulary, FileRoundTrip) {
  TempDir dir;
  const auto v = basic_vocab();
  v.save(dir.file("vocab.txt"));
  const auto w = Vocabulary::load(dir.file("vocab.txt"));
  EXPECT_EQ(v.tokens(), w.tokens());
  EXPECT_EQ(movieseq::testing::slurp(dir.file("vocab.txt")).substr(0, 20), "<pad>\n<s>\n</s>\n<unk>");
}

TEST(Vocabulary, LoadRejectsBadSpecials) {
  TempDir dir;
  dir.write("bad.txt", "<s>\n<pad>\n</s>\n<unk>\nhello\n");
  try {
    Vocabulary::load(dir.file("bad.txt"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
  }
  dir.write("dup.txt", "<pad>\n<s>\n</s>\n<unk>\nhello\nhello\n");
  EXPECT_THROW(Vocabulary::load(dir.file("dup.txt")), Error);
  EXPECT_THROW(Vocabulary::load(dir.file("missing.txt")), Error);
}

TEST(Tokenizer, KnownWords) {
  const auto v = basic_vocab();
  const auto ids = tokenize("who is  here", v);
  ASSERT_EQ(ids.size(), 3u);
  EXPECT_EQ(v.token(ids[0]), "who");
  EXPECT_EQ(v.token(ids[2]), "here");
  EXPECT_TRUE(tokenize("", v).empty());
  EXPECT_TRUE(tokenize(" \t\n ", v).empty());
}

TEST(Tokenizer, UnknownWordUsesByteFallback) {
  const auto v = basic_vocab();
  const auto ids = tokenize("Beckett", v);
  ASSERT_EQ(ids.size(), 1u + 2 * 7);
  EXPECT_EQ(ids[0], v.word_start());
  EXPECT_EQ(decode(ids, v), "Beckett");
}

TEST(Tokenizer, ReservedSpellingsInTextAreNotSpecial) {
  const auto v = basic_vocab();
  const auto ids = tokenize("</s> <pad>", v);
  EXPECT_EQ(std::count(ids.begin(), ids.end(), Vocabulary::kEos), 0);
  EXPECT_EQ(decode(ids, v), "</s> <pad>");
}

TEST(Tokenizer, WithoutFallbackUsesUnk) {
  const Vocabulary v(std::vector<std::string>{"USER:", "MovieSeq:", "<nl>", "hello"});
  EXPECT_FALSE(v.has_fallback());
  const auto ids = tokenize("hello world", v);
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[1], Vocabulary::kUnk);
}

TEST(Tokenizer, RoundTripProperty) {
  const auto v = basic_vocab();
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const auto text = random_text(rng);
    EXPECT_EQ(decode(tokenize(text, v), v), normalize_whitespace(text)) << text;
  }
}

TEST(Decode, StopsAtEos) {
  const auto v = basic_vocab();
  const TokenId yes = *v.word_id("yes");
  const TokenId no = *v.word_id("no");
  EXPECT_EQ(decode(std::vector<TokenId>{Vocabulary::kEos}, v), "");
  EXPECT_EQ(decode(std::vector<TokenId>{yes, Vocabulary::kEos, no}, v), "yes");
  EXPECT_EQ(decode(std::vector<TokenId>{Vocabulary::kBos, yes, Vocabulary::kPad, no}, v), "yes no");
}

TEST(Decode, RejectsOutOfRangeIds) {
  const auto v = basic_vocab();
  try {
    decode(std::vector<TokenId>{static_cast<TokenId>(v.size())}, v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidId);
  }
  EXPECT_THROW(decode(std::vector<TokenId>{-1}, v), Error);
}

TEST(Pack, MaskCoversAnswerAndEos) {
  const auto v = basic_vocab();
  const auto p = pack(text_sample("who is here ?", "a b c d e"), v, 64);
  EXPECT_EQ(p.masked_count(), 6u);
  EXPECT_EQ(p.token_at(p.length() - 1), Vocabulary::kEos);
  // contiguous tail
  for (std::size_t i = 0; i < p.length(); ++i) EXPECT_EQ(p.loss_mask[i], i >= p.answer_start);
  EXPECT_EQ(p.answer_start, p.length() - 6);
}

TEST(Pack, ScaffoldLayout) {
  const auto v = basic_vocab();
  InterleavedSample s = text_sample("who ?", "yes");
  s.context.push_back(Segment::make_text("the plot"));
  const auto p = pack(s, v, 64);
  std::vector<std::string> spelled;
  for (const auto& slot : p.slots) spelled.push_back(v.token(slot.value));
  const std::vector<std::string> expected{"USER:", "the", "plot", "who", "?", "<nl>", "MovieSeq:", "yes", "</s>"};
  EXPECT_EQ(spelled, expected);
}

TEST(Pack, PrefixModeStopsAtAssistantTag) {
  const auto v = basic_vocab();
  const auto p = pack(text_sample("who ?", "yes"), v, 64, PackMode::kPrefix);
  EXPECT_EQ(p.answer_start, p.length());
  EXPECT_EQ(p.masked_count(), 0u);
  EXPECT_EQ(p.token_at(p.length() - 1), *v.find("MovieSeq:"));
  EXPECT_NO_THROW(pack(text_sample("who ?", ""), v, 64, PackMode::kPrefix));
}

TEST(Pack, VisualSlotsInContextOrder) {
  const auto v = basic_vocab();
  InterleavedSample s = text_sample("who ?", "a");
  s.context.push_back(Segment::image(VisualPayload::image(FrameRef::seed(100))));
  s.context.push_back(Segment::make_text("is a"));
  s.context.push_back(Segment::video(VisualPayload::span(FrameRef::seed(200), 8)));
  const auto p = pack(s, v, 64);
  ASSERT_EQ(p.visual_slots.size(), 9u);
  ASSERT_EQ(p.payloads.size(), 2u);
  EXPECT_EQ(p.visual_slots[0].payload, 0);
  for (int f = 0; f < 8; ++f) {
    EXPECT_EQ(p.visual_slots[static_cast<std::size_t>(f) + 1].payload, 1);
    EXPECT_EQ(p.visual_slots[static_cast<std::size_t>(f) + 1].frame, f);
  }
  EXPECT_EQ(p.slots[1].kind, SlotKind::kVisual);
  EXPECT_EQ(p.slots[2].kind, SlotKind::kToken);
  std::size_t visual = 0;
  for (const auto& slot : p.slots) visual += slot.kind == SlotKind::kVisual;
  EXPECT_EQ(visual, 9u);
}

TEST(Pack, SegmentPermutationKeepsMaskAndFrames) {
  const auto v = basic_vocab();
  InterleavedSample s = text_sample("who ?", "a b");
  s.context = {Segment::image(VisualPayload::image(FrameRef::seed(1))), Segment::make_text("the plot"),
               Segment::video(VisualPayload::span(FrameRef::seed(10), 3)), Segment::make_text("sub")};
  std::vector<std::size_t> order{0, 1, 2, 3};
  const auto base = pack(s, v, 64);
  do {
    InterleavedSample t = s;
    t.context.clear();
    for (auto i : order) t.context.push_back(s.context[i]);
    const auto p = pack(t, v, 64);
    EXPECT_EQ(p.masked_count(), base.masked_count());
    EXPECT_EQ(p.visual_slots.size(), base.visual_slots.size());
    EXPECT_EQ(p.length(), base.length());
  } while (std::next_permutation(order.begin(), order.end()));
}

TEST(Pack, Deterministic) {
  const auto v = basic_vocab();
  InterleavedSample s = text_sample("who is here ?", "Zoë b");
  s.context = {Segment::video(VisualPayload::span(FrameRef::seed(3), 4)), Segment::make_text("the plot")};
  EXPECT_EQ(pack(s, v, 64), pack(s, v, 64));
}

TEST(Pack, Errors) {
  const auto v = basic_vocab();
  try {
    pack(text_sample("who ?", "  "), v, 64);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyAnswer);
  }
  InterleavedSample s = text_sample("who ?", "a");
  s.context.push_back(Segment::video(VisualPayload::span(FrameRef::seed(0), 20)));
  try {
    pack(s, v, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOverLength);
  }
  InterleavedSample bad = text_sample("who ?", "a");
  bad.context.push_back(Segment::image(VisualPayload::span(FrameRef::seed(0), 2)));
  EXPECT_THROW(pack(bad, v, 64), Error);
  InterleavedSample empty_video = text_sample("who ?", "a");
  empty_video.context.push_back(Segment::video(VisualPayload{}));
  EXPECT_THROW(pack(empty_video, v, 64), Error);
}

TEST(Truncate, HeadAndTail) {
  const std::vector<TokenId> t{1, 2, 3, 4, 5};
  EXPECT_EQ(truncate_context(t, 3, Keep::kHead), (std::vector<TokenId>{1, 2, 3}));
  EXPECT_EQ(truncate_context(t, 3, Keep::kTail), (std::vector<TokenId>{3, 4, 5}));
  EXPECT_EQ(truncate_context(t, 9, Keep::kTail), t);
  EXPECT_TRUE(truncate_context(t, 0, Keep::kHead).empty());
}

TEST(Pack, PlotIsCutFromTheEndFirst) {
  const auto v = basic_vocab();
  InterleavedSample s = text_sample("who ?", "a");
  s.context = {Segment::make_text("a b c d e f", ContextSource::kPlot), Segment::make_text("g h", ContextSource::kSubtitle)};
  // fixed = USER + 2 question + nl + tag + answer + eos = 7; context = 8
  const auto p = pack(s, v, 12);
  EXPECT_EQ(p.length(), 12u);
  EXPECT_EQ(render_prompt(p, v), "USER: a b c g h who ?\nMovieSeq: a </s>");
}

TEST(Pack, SubtitlesKeepTheirTail) {
  const auto v = basic_vocab();
  InterleavedSample s = text_sample("who ?", "a");
  s.context = {Segment::make_text("a b", ContextSource::kPlot), Segment::make_text("c d e f", ContextSource::kSubtitle)};
  const auto p = pack(s, v, 9);
  EXPECT_EQ(render_prompt(p, v), "USER: e f who ?\nMovieSeq: a </s>");
}

TEST(Pack, HistoryDroppedOldestFirstWithHeaderRefreshed) {
  auto v = Vocabulary::build({"There are 1 2 3 video clips, ordered from the past to present: n0 n1 n2 who ? a"});
  InterleavedSample s = text_sample("who ?", "a");
  s.context.push_back(Segment::make_text(history_header_text(3), ContextSource::kHistoryHeader));
  for (int h = 0; h < 2; ++h) {
    s.context.push_back(Segment::video(VisualPayload::span(FrameRef::seed(10 * h), 2), ContextSource::kHistory, h));
    s.context.push_back(Segment::make_text("n" + std::to_string(h), ContextSource::kHistory, h));
  }
  s.context.push_back(Segment::video(VisualPayload::span(FrameRef::seed(99), 2)));
  const auto full = pack(s, v, 64);
  const auto cut = pack(s, v, full.length() - 1);
  const auto text = render_prompt(cut, v);
  EXPECT_NE(text.find("There are 2 video clips"), std::string::npos) << text;
  EXPECT_EQ(text.find("n0"), std::string::npos);
  EXPECT_NE(text.find("n1"), std::string::npos);
  EXPECT_EQ(cut.visual_slots.size(), 4u);
}

TEST(RenderPrompt, ShowsVisualRuns) {
  const auto v = basic_vocab();
  InterleavedSample s = text_sample("who ?", "a");
  s.context = {Segment::image(VisualPayload::image(FrameRef::row(4))), Segment::make_text("is a"),
               Segment::video(VisualPayload::span(FrameRef::seed(7), 3))};
  EXPECT_EQ(render_prompt(pack(s, v, 64), v), "USER: <image:r4> is a <video:3:s7> who ?\nMovieSeq: a </s>");
}
