#pragma once

#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "movieseq/error.hpp"
#include "movieseq/instructions.hpp"
#include "movieseq/lm.hpp"
#include "movieseq/metrics.hpp"
#include "movieseq/sequence.hpp"
#include "movieseq/vocab.hpp"

namespace movieseq {

/// Distinct labels in a fixed order; the order breaks ties.
class LabelSet {
 public:
  explicit LabelSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw Error(ErrorCode::kInvalidArgument, "label set is empty");
    std::set<std::string> seen;
    for (const auto& l : labels_) {
      const auto n = normalize_whitespace(l);
      if (n.empty()) throw Error(ErrorCode::kInvalidArgument, "empty label");
      if (!seen.insert(n).second) throw Error(ErrorCode::kInvalidArgument, "duplicate label '" + n + "'");
    }
  }

  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  const std::string& operator[](std::size_t i) const { return labels_[i]; }

  std::optional<std::size_t> find(std::string_view text) const {
    const auto n = normalize_whitespace(text);
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (normalize_whitespace(labels_[i]) == n) return i;
    }
    return std::nullopt;
  }

 private:
  std::vector<std::string> labels_;
};

/// Packs the sample as an inference prefix, leaving room for `max_new`
/// generated tokens, and decodes the greedy continuation.
template <SequenceScorer M>
std::string generate_text(const M& model, const InterleavedSample& sample, const Vocabulary& vocab, std::size_t max_new) {
  if (max_new >= model.max_len()) throw Error(ErrorCode::kOverLength, "generation budget leaves no room for a prompt");
  const PackedSequence prefix = pack(sample, vocab, model.max_len() - max_new, PackMode::kPrefix);
  return decode(generate(model, prefix, max_new), vocab);
}

/// Mean log-probability per target (answer tokens plus EOS) of `answer`
/// teacher-forced after the sample's context and question.
template <SequenceScorer M>
double answer_score(const M& model, const InterleavedSample& sample, const std::string& answer, const Vocabulary& vocab) {
  InterleavedSample full = sample;
  full.answer = answer;
  const PackedSequence packed = pack(full, vocab, model.max_len(), PackMode::kTraining);
  const NllSum s = answer_nll(model, packed);
  return -s.sum / static_cast<double>(s.count);
}

template <SequenceScorer M>
std::vector<double> option_scores(const M& model, const InterleavedSample& sample, const std::vector<std::string>& options,
                                  const Vocabulary& vocab) {
  std::vector<double> out;
  out.reserve(options.size());
  for (const auto& o : options) out.push_back(answer_score(model, sample, o, vocab));
  return out;
}

/// Index of the largest score; the lowest index wins ties.
inline std::size_t first_argmax(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

struct Classification {
  std::size_t index = 0;
  std::string label;
  std::string generated;
  bool exact_match = false;
  std::vector<double> scores;  // filled only when the likelihood fallback ran
};

/// Greedy label generation; if the text is not a label, falls back to the
/// label with the best length-normalized likelihood.
template <SequenceScorer M>
Classification classify(const M& model, const InterleavedSample& sample, const LabelSet& labels, const Vocabulary& vocab,
                        std::size_t max_new = 64) {
  Classification c;
  c.generated = generate_text(model, sample, vocab, max_new);
  if (auto i = labels.find(c.generated)) {
    c.index = *i;
    c.exact_match = true;
  } else {
    c.scores = option_scores(model, sample, labels.labels(), vocab);
    c.index = first_argmax(c.scores);
  }
  c.label = labels[c.index];
  return c;
}

/// Splits a generated name list on ", " and keeps bank names; "None" and
/// anything outside the bank are dropped.
inline std::set<std::string> parse_character_names(std::string_view text, const CharacterBank& bank) {
  std::set<std::string> out;
  std::string s = normalize_whitespace(text);
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto next = s.find(", ", pos);
    if (next == std::string::npos) next = s.size();
    const std::string name = normalize_whitespace(std::string_view(s).substr(pos, next - pos));
    if (name != kNoneAnswer && bank.contains(name)) out.insert(name);
    pos = next + 2;
  }
  return out;
}

template <SequenceScorer M>
std::set<std::string> identify_characters(const M& model, const CharacterBank& bank, const VisualPayload& clip,
                                          const Vocabulary& vocab, std::size_t max_new = 64) {
  if (bank.empty()) throw Error(ErrorCode::kInvalidArgument, "character bank is empty");
  InterleavedSample s = build_character_instruction(bank, clip, CharacterMode::kA, {});
  s.answer.clear();
  return parse_character_names(generate_text(model, s, vocab, max_new), bank);
}

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline PrfScore f1_from(double precision, double recall) {
  PrfScore s{precision, recall, 0.0};
  if (precision + recall > 0.0) s.f1 = 2.0 * precision * recall / (precision + recall);
  return s;
}

/// Micro-averaged precision, recall and F1 over set predictions.
inline PrfScore score_multilabel(const std::vector<std::set<std::string>>& pred, const std::vector<std::set<std::string>>& truth) {
  if (pred.size() != truth.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(pred.size()) + " predictions for " + std::to_string(truth.size()) + " truths");
  }
  if (pred.empty()) throw Error(ErrorCode::kInvalidArgument, "score_multilabel needs at least one sample");
  double hit = 0.0;
  double n_pred = 0.0;
  double n_true = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (const auto& n : pred[i]) hit += truth[i].count(n) ? 1.0 : 0.0;
    n_pred += static_cast<double>(pred[i].size());
    n_true += static_cast<double>(truth[i].size());
  }
  return f1_from(n_pred > 0.0 ? hit / n_pred : 0.0, n_true > 0.0 ? hit / n_true : 0.0);
}

/// Row i, column j: cosine between caption i and query j.
inline Matrix similarity_matrix(const std::vector<std::string>& captions, const std::vector<std::string>& queries,
                                const SentenceEmbedder& embedder) {
  Matrix sim(captions.size(), queries.size());
  std::vector<std::vector<double>> q;
  q.reserve(queries.size());
  for (const auto& s : queries) q.push_back(embedder.embed(s));
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const auto c = embedder.embed(captions[i]);
    for (std::size_t j = 0; j < queries.size(); ++j) sim(i, j) = cosine(c, q[j]);
  }
  return sim;
}

struct CaptionRetrieval {
  std::vector<std::string> captions;
  Matrix similarity;
  RetrievalResult result;
};

template <SequenceScorer M>
CaptionRetrieval caption_then_retrieve(const M& model, const std::vector<InterleavedSample>& videos,
                                       const std::vector<std::string>& queries, const SentenceEmbedder& embedder,
                                       const Vocabulary& vocab, std::size_t max_new = 64) {
  if (videos.size() != queries.size()) throw Error(ErrorCode::kLengthMismatch, "one query per video required");
  if (videos.empty()) throw Error(ErrorCode::kInvalidArgument, "no videos to retrieve");
  CaptionRetrieval out;
  for (const auto& v : videos) out.captions.push_back(generate_text(model, v, vocab, max_new));
  out.similarity = similarity_matrix(out.captions, queries, embedder);
  out.result = retrieval_result(out.similarity);
  return out;
}

inline constexpr std::size_t kMcqOptions = 5;

struct McqAnswer {
  std::size_t index = 0;
  std::vector<double> scores;
};

/// Option with the best length-normalized likelihood as the answer.
template <SequenceScorer M>
McqAnswer answer_mcq(const M& model, const InterleavedSample& sample, const std::vector<std::string>& options, const Vocabulary& vocab) {
  if (options.size() != kMcqOptions) {
    throw Error(ErrorCode::kInvalidArgument, "multiple choice needs exactly 5 options, got " + std::to_string(options.size()));
  }
  McqAnswer a;
  a.scores = option_scores(model, sample, options, vocab);
  a.index = first_argmax(a.scores);
  return a;
}

}  // namespace movieseq
