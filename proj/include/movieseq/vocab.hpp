#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "movieseq/error.hpp"

namespace movieseq {

using TokenId = std::int32_t;

namespace tokens {
inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kUnk = "<unk>";
// Newline inside the prompt scaffold; a vocab file cannot hold a literal "\n".
inline constexpr std::string_view kNewline = "<nl>";
// Starts a byte-fallback word; the bytes follow as two nibble tokens each.
inline constexpr std::string_view kWordStart = "<w>";
inline constexpr std::string_view kUser = "USER:";
inline constexpr std::string_view kAssistant = "MovieSeq:";

inline std::string nibble(unsigned v) {
  static constexpr char kHex[] = "0123456789abcdef";
  return std::string("<0x") + kHex[v & 0xF] + ">";
}
}  // namespace tokens

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

inline std::string normalize_whitespace(std::string_view text) {
  std::string out;
  for (const auto& w : split_whitespace(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

/// Word-level vocabulary. Ids 0..3 are PAD, BOS, EOS, UNK in that order; the
/// remaining lines of a vocab file are ordinary words plus the reserved
/// scaffold and byte-fallback spellings.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// `words` are appended after the specials; duplicates and reserved
  /// spellings already present are skipped.
  explicit Vocabulary(const std::vector<std::string>& words) {
    for (auto s : {tokens::kPad, tokens::kBos, tokens::kEos, tokens::kUnk}) append(std::string(s));
    for (const auto& w : words) {
      if (!index_.contains(w)) append(w);
    }
    refresh_reserved();
  }

  /// Specials, scaffold, fallback alphabet, then corpus words by descending
  /// frequency (ties lexicographic). `max_size` caps V; 0 means no cap.
  static Vocabulary build(const std::vector<std::string>& corpus, std::size_t max_size = 0) {
    std::vector<std::string> words = reserved_words();
    std::map<std::string, std::size_t> counts;
    for (const auto& text : corpus) {
      for (auto& w : split_whitespace(text)) ++counts[w];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (auto& [w, c] : ranked) {
      if (is_reserved_spelling(w) || w == tokens::kUser || w == tokens::kAssistant) continue;
      words.push_back(w);
    }
    if (max_size != 0 && words.size() + 4 > max_size) {
      if (max_size < reserved_words().size() + 4) {
        throw Error(ErrorCode::kInvalidArgument, "vocabulary cap too small for reserved tokens");
      }
      words.resize(max_size - 4);
    }
    return Vocabulary(words);
  }

  /// Scaffold, newline and byte-fallback tokens every built vocabulary carries.
  static std::vector<std::string> reserved_words() {
    std::vector<std::string> w{std::string(tokens::kUser), std::string(tokens::kAssistant),
                               std::string(tokens::kNewline), std::string(tokens::kWordStart)};
    for (unsigned v = 0; v < 16; ++v) w.push_back(tokens::nibble(v));
    return w;
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open vocabulary " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    const std::array<std::string_view, 4> specials{tokens::kPad, tokens::kBos, tokens::kEos, tokens::kUnk};
    if (lines.size() < specials.size()) throw Error(ErrorCode::kParseError, "vocabulary " + path + " lacks specials");
    for (std::size_t i = 0; i < specials.size(); ++i) {
      if (lines[i] != specials[i]) {
        throw Error(ErrorCode::kParseError, "vocabulary line " + std::to_string(i + 1) + " must be " + std::string(specials[i]));
      }
    }
    Vocabulary v;
    for (std::size_t i = specials.size(); i < lines.size(); ++i) {
      if (lines[i].empty() || v.index_.contains(lines[i])) {
        throw Error(ErrorCode::kParseError, "vocabulary line " + std::to_string(i + 1) + " is empty or duplicate");
      }
      v.append(lines[i]);
    }
    v.refresh_reserved();
    return v;
  }

  void save(const std::string& path) const {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write vocabulary " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::size_t size() const noexcept { return tokens_.size(); }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw Error(ErrorCode::kInvalidId, "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  /// Id of an exact spelling (including reserved ones), if present.
  std::optional<TokenId> find(std::string_view spelling) const {
    auto it = index_.find(std::string(spelling));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Id for a plain word, or nullopt when the word must take the fallback.
  std::optional<TokenId> word_id(const std::string& word) const {
    if (is_reserved_spelling(word)) return std::nullopt;
    auto it = index_.find(word);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool has_fallback() const noexcept { return word_start_ >= 0 && nibbles_[0] >= 0; }
  TokenId word_start() const noexcept { return word_start_; }
  TokenId nibble(unsigned v) const noexcept { return nibbles_[v & 0xF]; }
  TokenId newline() const noexcept { return newline_; }
  /// Nibble value of `id`, or -1.
  int nibble_value(TokenId id) const noexcept {
    for (unsigned v = 0; v < 16; ++v) {
      if (nibbles_[v] == id) return static_cast<int>(v);
    }
    return -1;
  }

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  static bool is_reserved_spelling(std::string_view w) {
    if (w == tokens::kPad || w == tokens::kBos || w == tokens::kEos || w == tokens::kUnk || w == tokens::kNewline ||
        w == tokens::kWordStart) {
      return true;
    }
    return w.size() == 5 && w.substr(0, 3) == "<0x" && w[4] == '>' &&
           std::string_view("0123456789abcdef").find(w[3]) != std::string_view::npos;
  }

 private:
  void append(const std::string& w) {
    index_.emplace(w, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(w);
  }

  void refresh_reserved() {
    auto lookup = [&](std::string_view s) -> TokenId {
      auto it = index_.find(std::string(s));
      return it == index_.end() ? -1 : it->second;
    };
    newline_ = lookup(tokens::kNewline);
    word_start_ = lookup(tokens::kWordStart);
    for (unsigned v = 0; v < 16; ++v) nibbles_[v] = lookup(tokens::nibble(v));
    if (std::any_of(nibbles_.begin(), nibbles_.end(), [](TokenId t) { return t < 0; })) nibbles_.fill(-1);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId newline_ = -1;
  TokenId word_start_ = -1;
  std::array<TokenId, 16> nibbles_{};
};

/// Whitespace word tokens; out-of-vocabulary words become `<w>` followed by
/// two nibble tokens per byte (UNK if the vocabulary has no fallback alphabet).
inline std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  for (const auto& word : split_whitespace(text)) {
    if (auto id = vocab.word_id(word)) {
      out.push_back(*id);
    } else if (vocab.has_fallback()) {
      out.push_back(vocab.word_start());
      for (unsigned char c : word) {
        out.push_back(vocab.nibble(c >> 4));
        out.push_back(vocab.nibble(c & 0xF));
      }
    } else {
      out.push_back(Vocabulary::kUnk);
    }
  }
  return out;
}

/// Inverse of tokenize up to whitespace normalization. Rendering stops at the
/// first EOS; PAD and BOS render as nothing.
inline std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  for (TokenId id : ids) (void)vocab.token(id);  // range check every id

  std::string out;
  bool at_line_start = true;
  auto emit_word = [&](std::string_view w) {
    if (!at_line_start) out += ' ';
    out += w;
    at_line_start = false;
  };

  std::size_t i = 0;
  while (i < ids.size()) {
    const TokenId id = ids[i];
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kPad || id == Vocabulary::kBos) {
      ++i;
      continue;
    }
    if (id == vocab.newline()) {
      out += '\n';
      at_line_start = true;
      ++i;
      continue;
    }
    if (vocab.has_fallback() && id == vocab.word_start()) {
      ++i;
      std::string bytes;
      while (i + 1 < ids.size() && vocab.nibble_value(ids[i]) >= 0 && vocab.nibble_value(ids[i + 1]) >= 0) {
        bytes += static_cast<char>((vocab.nibble_value(ids[i]) << 4) | vocab.nibble_value(ids[i + 1]));
        i += 2;
      }
      // a dangling odd nibble is dropped
      if (i < ids.size() && vocab.nibble_value(ids[i]) >= 0) ++i;
      if (!bytes.empty()) emit_word(bytes);
      continue;
    }
    emit_word(vocab.token(id));
    ++i;
  }
  return out;
}

inline std::string decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  return decode(std::span<const TokenId>(ids), vocab);
}

}  // namespace movieseq
