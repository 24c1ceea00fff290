#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "movieseq/error.hpp"
#include "movieseq/tensor.hpp"
#include "movieseq/vocab.hpp"

namespace movieseq {

/// Lowercase, ASCII punctuation to spaces, split on whitespace.
inline std::vector<std::string> metric_tokens(std::string_view text) {
  std::string s(text);
  for (char& c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) {
      c = ' ';
    } else {
      c = static_cast<char>(std::tolower(u));
    }
  }
  return split_whitespace(s);
}

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, std::size_t>;

inline NGramCounts ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  NGramCounts c;
  if (toks.size() < n) return c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++c[NGram(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

/// Candidates and references keyed by id. Every candidate id needs at least
/// one reference.
struct Corpus {
  std::map<std::string, std::string> candidates;
  std::map<std::string, std::vector<std::string>> references;

  const std::vector<std::string>& refs_of(const std::string& id) const {
    auto it = references.find(id);
    if (it == references.end() || it->second.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "candidate '" + id + "' has no reference");
    }
    return it->second;
  }
};

/// Group id to its generated sentences, in order.
using ParagraphGroups = std::map<std::string, std::vector<std::string>>;

/// Fraction of 4-gram occurrences that repeat an earlier 4-gram of the same
/// group, averaged over groups. A group with no 4-gram scores 0.
inline double rep4(const ParagraphGroups& groups) {
  if (groups.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [id, sentences] : groups) {
    std::vector<std::string> toks;
    for (const auto& s : sentences) {
      auto t = metric_tokens(s);
      toks.insert(toks.end(), t.begin(), t.end());
    }
    if (toks.size() < 4) continue;
    std::map<NGram, std::size_t> seen;
    std::size_t repeats = 0;
    const std::size_t count = toks.size() - 3;
    for (std::size_t i = 0; i < count; ++i) {
      NGram g(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + 4));
      if (seen[g]++ > 0) ++repeats;
    }
    total += static_cast<double>(repeats) / static_cast<double>(count);
  }
  return total / static_cast<double>(groups.size());
}

/// Corpus BLEU-4: uniform weights, clipped counts, brevity penalty against
/// the closest reference length (shorter wins ties). `smooth` adds one to
/// numerator and denominator for n ≥ 2.
inline double bleu4(const Corpus& corpus, bool smooth = false) {
  if (corpus.candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "bleu4 needs a nonempty corpus");
  std::array<double, 4> matched{};
  std::array<double, 4> possible{};
  double cand_len = 0.0;
  double ref_len = 0.0;
  for (const auto& [id, cand] : corpus.candidates) {
    const auto ct = metric_tokens(cand);
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : corpus.refs_of(id)) refs.push_back(metric_tokens(r));
    cand_len += static_cast<double>(ct.size());
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
      const auto d = [&](std::size_t len) { return len > ct.size() ? len - ct.size() : ct.size() - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cc = ngram_counts(ct, n);
      std::vector<NGramCounts> rc;
      for (const auto& r : refs) rc.push_back(ngram_counts(r, n));
      for (const auto& [g, c] : cc) {
        std::size_t max_ref = 0;
        for (const auto& m : rc) {
          auto it = m.find(g);
          if (it != m.end()) max_ref = std::max(max_ref, it->second);
        }
        matched[n - 1] += static_cast<double>(std::min(c, max_ref));
        possible[n - 1] += static_cast<double>(c);
      }
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double num = matched[n];
    double den = possible[n];
    if (smooth && n > 0) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0 || den == 0.0) return 0.0;
    log_sum += std::log(num / den) / 4.0;
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum);
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.2;

/// LCS F-measure with β = 1.2.
inline double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = metric_tokens(candidate);
  const auto r = metric_tokens(reference);
  if (c.empty() || r.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(c, r));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(c.size());
  const double rec = lcs / static_cast<double>(r.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * rec / (rec + b2 * p);
}

/// Mean over ids of the best ROUGE-L against that id's references.
inline double rouge_l(const Corpus& corpus) {
  if (corpus.candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "rouge_l needs a nonempty corpus");
  double total = 0.0;
  for (const auto& [id, cand] : corpus.candidates) {
    double best = 0.0;
    for (const auto& r : corpus.refs_of(id)) best = std::max(best, rouge_l(cand, r));
    total += best;
  }
  return total / static_cast<double>(corpus.candidates.size());
}

/// Plain CIDEr (no length penalty, no count clipping): per n, TF-IDF vectors
/// with document frequency over each id's reference set, cosine averaged over
/// references; averaged over n = 1..4, scaled by 10, mean over ids.
inline double cider(const Corpus& corpus) {
  const std::size_t n_ids = corpus.candidates.size();
  if (n_ids < 2) throw Error(ErrorCode::kDegenerateCorpus, "CIDEr needs at least two ids; document frequency is degenerate");
  const double log_n = std::log(static_cast<double>(n_ids));

  struct Item {
    std::array<NGramCounts, 4> cand;
    std::vector<std::array<NGramCounts, 4>> refs;
  };
  std::vector<Item> items;
  std::array<std::map<NGram, std::size_t>, 4> df;
  for (const auto& [id, cand] : corpus.candidates) {
    Item it;
    const auto ct = metric_tokens(cand);
    for (std::size_t n = 0; n < 4; ++n) it.cand[n] = ngram_counts(ct, n + 1);
    for (const auto& r : corpus.refs_of(id)) {
      const auto rt = metric_tokens(r);
      std::array<NGramCounts, 4> rc;
      for (std::size_t n = 0; n < 4; ++n) rc[n] = ngram_counts(rt, n + 1);
      it.refs.push_back(std::move(rc));
    }
    for (std::size_t n = 0; n < 4; ++n) {
      std::map<NGram, bool> in_refs;
      for (const auto& rc : it.refs) {
        for (const auto& kv : rc[n]) in_refs[kv.first] = true;
      }
      for (const auto& kv : in_refs) ++df[n][kv.first];
    }
    items.push_back(std::move(it));
  }

  auto tfidf = [&](const NGramCounts& counts, std::size_t n) {
    std::map<NGram, double> v;
    double total = 0.0;
    for (const auto& kv : counts) total += static_cast<double>(kv.second);
    for (const auto& [g, c] : counts) {
      auto it = df[n].find(g);
      const double d = it == df[n].end() ? 1.0 : static_cast<double>(it->second);
      v[g] = static_cast<double>(c) / total * (log_n - std::log(std::max(1.0, d)));
    }
    return v;
  };
  auto cosine_sparse = [](const std::map<NGram, double>& a, const std::map<NGram, double>& b) {
    double dot_ab = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (const auto& [g, x] : a) {
      na += x * x;
      auto it = b.find(g);
      if (it != b.end()) dot_ab += x * it->second;
    }
    for (const auto& kv : b) nb += kv.second * kv.second;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot_ab / (std::sqrt(na) * std::sqrt(nb));
  };

  double score = 0.0;
  for (const auto& it : items) {
    double per_id = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
      const auto vc = tfidf(it.cand[n], n);
      double s = 0.0;
      for (const auto& rc : it.refs) s += cosine_sparse(vc, tfidf(rc[n], n));
      per_id += s / static_cast<double>(it.refs.size());
    }
    score += 10.0 * per_id / 4.0;
  }
  return score / static_cast<double>(n_ids);
}

/// Fraction of rows whose diagonal entry is within the top k of the row.
/// Entries equal to the diagonal rank ahead of it only from a lower column.
inline double recall_at_k(const Matrix& sim, std::size_t k) {
  const std::size_t n = sim.rows();
  if (n == 0 || sim.cols() != n) throw Error(ErrorCode::kInvalidArgument, "recall_at_k needs a square nonempty matrix");
  if (k < 1 || k > n) throw Error(ErrorCode::kBadK, "k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = sim(i, i);
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (sim(i, j) > d || (sim(i, j) == d && j < i)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

inline double geometric_mean(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "geometric_mean of an empty list");
  double log_sum = 0.0;
  for (double v : values) {
    if (!(v > 0.0)) throw Error(ErrorCode::kNonPositive, "geometric_mean needs positive values");
    log_sum += std::log(v);
  }
  return std::exp(log_sum / static_cast<double>(values.size()));
}

struct RetrievalResult {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double geometric_mean = 0.0;  // 0 when any recall is 0
};

/// R@1/5/10 from a similarity matrix; k is clipped to N for small sets.
inline RetrievalResult retrieval_result(const Matrix& sim) {
  const std::size_t n = sim.rows();
  RetrievalResult r;
  r.r1 = recall_at_k(sim, std::min<std::size_t>(1, n));
  r.r5 = recall_at_k(sim, std::min<std::size_t>(5, n));
  r.r10 = recall_at_k(sim, std::min<std::size_t>(10, n));
  if (r.r1 > 0.0) r.geometric_mean = movieseq::geometric_mean({r.r1, r.r5, r.r10});
  return r;
}

/// Ordered metric name/value pairs.
using MetricReport = std::vector<std::pair<std::string, double>>;

/// "metric<TAB>value" lines, six decimals.
inline std::string format_metric_report(const MetricReport& report) {
  std::string out;
  char buf[64];
  for (const auto& [name, value] : report) {
    std::snprintf(buf, sizeof buf, "%.6f", value);
    out += name;
    out += '\t';
    out += buf;
    out += '\n';
  }
  return out;
}

}  // namespace movieseq
