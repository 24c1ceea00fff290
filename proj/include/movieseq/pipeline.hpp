#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "movieseq/adapters.hpp"
#include "movieseq/checkpoint.hpp"
#include "movieseq/config.hpp"
#include "movieseq/encoders.hpp"
#include "movieseq/instructions.hpp"
#include "movieseq/lm.hpp"
#include "movieseq/manifest.hpp"
#include "movieseq/metrics.hpp"
#include "movieseq/sequence.hpp"
#include "movieseq/vocab.hpp"

namespace movieseq {

namespace fs = std::filesystem;

/// Seeds go through the toy encoder, rows through the embedding table.
class MixedFrameEncoder final : public FrameEncoder {
 public:
  MixedFrameEncoder(std::size_t dim, std::uint64_t seed, std::optional<EmbeddingTable> table = std::nullopt)
      : toy_(dim, seed), table_(std::move(table)) {
    if (table_ && table_->dim() != dim) {
      throw Error(ErrorCode::kConfigMismatch, "embedding file width " + std::to_string(table_->dim()) +
                                                  " differs from visual_dim " + std::to_string(dim));
    }
  }

  std::size_t dim() const override { return toy_.dim(); }

  Matrix encode(const VisualPayload& payload) const override {
    Matrix m(payload.frame_count(), dim());
    for (std::size_t f = 0; f < payload.frame_count(); ++f) {
      const FrameRef& ref = payload.frames[f];
      std::vector<double> v;
      if (ref.kind == FrameRef::Kind::kSeed) {
        v = toy_.embed(ref);
      } else {
        if (!table_) throw Error(ErrorCode::kMissingEmbedding, "frame " + ref.str() + " needs an embedding file");
        v = table_->encode(VisualPayload::image(ref)).data();
      }
      std::copy(v.begin(), v.end(), m.row(f).begin());
    }
    return m;
  }

 private:
  ToyFrameEncoder toy_;
  std::optional<EmbeddingTable> table_;
};

inline MixedFrameEncoder make_encoder(const RunConfig& cfg) {
  std::optional<EmbeddingTable> table;
  if (!cfg.embeddings.empty()) table = EmbeddingTable::load(cfg.embeddings);
  return MixedFrameEncoder(cfg.lm.visual_dim, cfg.seed, std::move(table));
}

inline std::unique_ptr<SentenceEmbedder> make_sentence_embedder(const std::string& spec) {
  if (spec == "hash") return std::make_unique<HashEmbedder>();
  if (spec == "bow") return std::make_unique<BagOfWordsEmbedder>();
  return std::make_unique<FileEmbedder>(FileEmbedder::load(spec));
}

/// The record's clip with `frames_per_video` frames sampled evenly.
inline VisualPayload record_clip(const ManifestRecord& r, const RunConfig& cfg) {
  const std::size_t n = cfg.frames.at(r.task);
  VisualPayload p;
  for (std::size_t i : sample_frames(r.total_frames(), n)) p.frames.push_back(r.frame(i));
  return p;
}

inline std::string first_words(const std::string& text, std::size_t n) {
  auto w = split_whitespace(text);
  if (w.size() > n) w.resize(n);
  std::string out;
  for (const auto& s : w) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

inline std::string last_words(const std::string& text, std::size_t n) {
  auto w = split_whitespace(text);
  if (w.size() > n) w.erase(w.begin(), w.end() - static_cast<std::ptrdiff_t>(n));
  std::string out;
  for (const auto& s : w) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

/// Narrations already produced for earlier clips, keyed by record id.
using PredictionMap = std::map<std::string, std::string>;

/// Builds the instruction for one record from the toggled contexts it
/// carries. The answer is the training target; callers clear it for
/// inference.
inline InterleavedSample build_record_sample(const Manifest& m, const ManifestRecord& r, const RunConfig& cfg,
                                             const ToggleSet& toggles, HistoryMode mode, const PredictionMap& predictions,
                                             const SentenceEmbedder& embedder) {
  const VisualPayload clip = record_clip(r, cfg);
  InterleavedSample s;
  s.id = r.id;
  s.question = r.question;
  s.answer = r.target();

  ContextParts parts;
  Family family = Family::kNone;
  if (r.characters && toggles.count(Toggle::kImg)) {
    const auto& cc = *r.characters;
    parts.bank = &cc.bank;
    if (cc.mode == CharacterMode::kA) {
      for (const auto& e : cc.bank.entries()) parts.photos.push_back(e.name);
      s.question = std::string(kIdentifyQuestion);
      if (r.task == Task::kIdentify || r.answer.empty()) s.answer = character_answer(cc.bank, cc.present);
      s.meta.bank_names = parts.photos;
      for (const auto& e : cc.bank.entries()) {
        if (std::find(cc.present.begin(), cc.present.end(), e.name) != cc.present.end()) s.meta.present.push_back(e.name);
      }
      family = Family::kIa;
    } else {
      for (const auto& e : cc.bank.entries()) {
        if (std::find(cc.present.begin(), cc.present.end(), e.name) != cc.present.end()) parts.photos.push_back(e.name);
      }
      parts.character_style = ContextParts::CharacterStyle::kGiven;
      family = Family::kIb;
    }
  } else if (r.characters && r.characters->mode == CharacterMode::kA) {
    s.question = std::string(kIdentifyQuestion);
    if (r.task == Task::kIdentify || r.answer.empty()) s.answer = character_answer(r.characters->bank, r.characters->present);
  }

  if (r.history && toggles.count(Toggle::kHist) && cfg.history_n != 0) {
    std::vector<HistoryEntry> entries;
    for (const auto& hid : *r.history) {
      const auto& hr = m.at(hid);
      entries.push_back({hid, record_clip(hr, cfg), hr.answer, *hr.timestamp});
    }
    if (cfg.history_n > 0 && entries.size() > static_cast<std::size_t>(cfg.history_n)) {
      entries.erase(entries.begin(), entries.end() - cfg.history_n);
    }
    parts.with_history = true;
    parts.history = history_narrations(entries, mode, predictions);
    if (family == Family::kNone) family = Family::kIV;
  }

  if (r.plot && toggles.count(Toggle::kPlot) && cfg.plot_budget() > 0) {
    const Plot& plot = m.plots.at(r.plot->file);
    std::string paragraph;
    if (r.plot->query) {
      const auto score = cfg.rag_score == "mean" ? ParagraphScore::kMeanEmbedding : ParagraphScore::kMaxSentence;
      paragraph = sample_plot_rag(plot, *r.plot->query, embedder, score);
    } else {
      paragraph = sample_plot_temporal(plot, r.plot->t, r.plot->duration, r.plot->window.value_or(cfg.plot_window));
    }
    parts.plot = first_words(paragraph, cfg.plot_budget());
    if (family == Family::kNone) family = Family::kII;
  }

  if (r.subtitle && toggles.count(Toggle::kSub)) {
    const auto& track = m.subtitles.at(r.subtitle->file);
    parts.subtitles = last_words(subtitle_text(track, r.subtitle->start, r.subtitle->end), cfg.context_budget);
    if (family == Family::kNone) family = Family::kIII;
  }

  s.context = compose_context(parts, clip);
  s.meta.family = family;
  return s;
}

inline std::optional<TemplateSpec> template_for(const RunConfig& cfg, Family family) {
  if (!cfg.rephrase || family == Family::kNone) return std::nullopt;
  static const std::map<Family, const char*> names{
      {Family::kIa, "ia"}, {Family::kIb, "ib"}, {Family::kII, "ii"}, {Family::kIII, "iii"}, {Family::kIV, "iv"}};
  if (!cfg.templates.empty()) {
    const fs::path p = fs::path(cfg.templates) / (std::string(names.at(family)) + ".txt");
    if (fs::exists(p)) return load_template_pool(p.string(), family, cfg.seed);
  }
  return TemplateSpec{family, default_variants(family), cfg.seed};
}

/// Every text a sample could contribute to the vocabulary.
inline std::vector<std::string> sample_texts(const InterleavedSample& s) {
  std::vector<std::string> out;
  for (const auto& seg : s.context) {
    if (!seg.is_visual()) out.push_back(seg.text);
  }
  out.push_back(s.question);
  out.push_back(s.answer);
  return out;
}

/// Vocabulary over every record built with all contexts on, plus options,
/// labels and template phrasings.
inline Vocabulary build_vocabulary(const Manifest& m, const RunConfig& cfg) {
  const auto embedder = make_sentence_embedder(cfg.embedder);
  std::vector<std::string> corpus;
  for (const auto& r : m.records) {
    const auto s = build_record_sample(m, r, cfg, all_toggles(), HistoryMode::kOracle, {}, *embedder);
    for (auto& t : sample_texts(s)) corpus.push_back(std::move(t));
    for (const auto& o : r.options) corpus.push_back(o);
    for (const auto& l : r.labels) corpus.push_back(l);
  }
  for (Family f : {Family::kIa, Family::kIb, Family::kII, Family::kIII, Family::kIV}) {
    RunConfig c = cfg;
    c.rephrase = true;
    const auto spec = template_for(c, f);
    for (const auto& v : spec->variants) corpus.push_back(v);
  }
  corpus.push_back("Yes No None");
  return Vocabulary::build(corpus, cfg.vocab_max);
}

inline Vocabulary load_or_build_vocabulary(const Manifest& m, const RunConfig& cfg) {
  if (!cfg.vocab.empty() && fs::exists(cfg.vocab)) return Vocabulary::load(cfg.vocab);
  Vocabulary v = build_vocabulary(m, cfg);
  if (!cfg.vocab.empty()) v.save(cfg.vocab);
  return v;
}

inline std::vector<const ManifestRecord*> select_records(const Manifest& m, const std::string& split, std::optional<Task> task,
                                                         std::size_t max_per_task = 0) {
  std::vector<const ManifestRecord*> out;
  std::map<Task, std::size_t> seen;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    if (task && r.task != *task) continue;
    if (max_per_task != 0 && seen[r.task]++ >= max_per_task) continue;
    out.push_back(&r);
  }
  return out;
}

inline Error with_record(const Error& e, const std::string& id) { return Error(e.code(), "record " + id + ": " + e.detail()); }

struct BuiltSample {
  const ManifestRecord* record = nullptr;
  InterleavedSample sample;
  PackedSequence packed;
};

/// Training instructions for the train split (oracle history).
inline std::vector<BuiltSample> build_training_set(const Manifest& m, const RunConfig& cfg, const Vocabulary& vocab) {
  const auto embedder = make_sentence_embedder(cfg.embedder);
  const auto toggles = cfg.toggles();
  std::vector<BuiltSample> out;
  for (const ManifestRecord* r : select_records(m, cfg.train_split, std::nullopt, cfg.max_per_task)) {
    try {
      BuiltSample b;
      b.record = r;
      b.sample = build_record_sample(m, *r, cfg, toggles, HistoryMode::kOracle, {}, *embedder);
      if (auto t = template_for(cfg, b.sample.meta.family)) b.sample = rephrase(*t, b.sample);
      b.packed = pack(b.sample, vocab, cfg.lm.max_len, PackMode::kTraining);
      out.push_back(std::move(b));
    } catch (const Error& e) {
      throw with_record(e, r->id);
    }
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "no records in split '" + cfg.train_split + "'");
  return out;
}

inline std::string format_double(double v, const char* fmt = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::map<std::string, std::string> checkpoint_extras(const RunConfig& cfg, const std::string& manifest_hash, std::size_t epoch) {
  std::map<std::string, std::string> extras;
  for (const auto& [k, v] : cfg.settings()) {
    if (!cfg.lm.to_kv().contains(k)) extras["run." + k] = v;
  }
  extras["manifest_hash"] = manifest_hash;
  extras["epoch"] = std::to_string(epoch);
  return extras;
}

inline std::string epoch_checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch-%03zu.ckpt", epoch);
  return buf;
}

struct StepLog {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  TrainState state;
  std::vector<StepLog> log;  // steps run by this call
  std::string checkpoint;    // last epoch checkpoint written
  std::size_t resumed_from = 0;
};

/// Latest epoch checkpoint in `dir`, if any.
inline std::optional<std::pair<std::size_t, std::string>> latest_checkpoint(const std::string& dir) {
  if (!fs::exists(dir)) return std::nullopt;
  std::optional<std::pair<std::size_t, std::string>> best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    static const std::regex pattern(R"(epoch-(\d+)\.ckpt)");
    std::smatch match;
    if (std::regex_match(name, match, pattern)) {
      const std::size_t epoch = std::stoull(match[1].str());
      if (!best || epoch > best->first) best = {epoch, e.path().string()};
    }
  }
  return best;
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix64(seed ^ mix64(0xE90C ^ static_cast<std::uint64_t>(epoch))));
  rng.shuffle(order);
  return order;
}

/// Trains on the train split with the toggled contexts, writing a
/// checkpoint per epoch into cfg.checkpoint_dir. With cfg.resume, picks up
/// from the newest epoch checkpoint there.
inline TrainResult run_train(const RunConfig& cfg_in, const Manifest& m, const Vocabulary& vocab, std::ostream* log = nullptr) {
  RunConfig cfg = cfg_in;
  cfg.lm.vocab_size = vocab.size();
  cfg.lm.validate();
  const auto data = build_training_set(m, cfg, vocab);
  const auto encoder = make_encoder(cfg);
  std::vector<PackedSequence> packed;
  for (const auto& b : data) packed.push_back(b.packed);

  fs::create_directories(cfg.checkpoint_dir);
  TrainResult result;
  std::size_t start_epoch = 0;
  if (cfg.resume) {
    if (auto latest = latest_checkpoint(cfg.checkpoint_dir)) {
      Checkpoint ck = load_checkpoint(latest->second, cfg.lm);
      if (ck.extras["manifest_hash"] != m.hash && log) *log << "warning: checkpoint manifest hash differs\n";
      result.state = std::move(ck.state);
      start_epoch = latest->first;
      result.resumed_from = start_epoch;
      result.checkpoint = latest->second;
    }
  }
  if (start_epoch == 0) result.state = TrainState(cfg.lm, cfg.seed);

  const std::string log_path = (fs::path(cfg.checkpoint_dir) / "train_log.tsv").string();
  std::ofstream step_log(log_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(packed.size(), cfg.seed, epoch);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<PackedSequence> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(packed[order[k]]);
      const double l = train_step(result.state, batch, encoder);
      result.log.push_back({epoch + 1, result.state.step, l});
      step_log << epoch + 1 << '\t' << result.state.step << '\t' << format_double(l) << '\n';
    }
    step_log.flush();
    result.checkpoint = (fs::path(cfg.checkpoint_dir) / epoch_checkpoint_name(epoch + 1)).string();
    save_checkpoint(result.checkpoint, result.state, checkpoint_extras(cfg, m.hash, epoch + 1));
    if (log) *log << "epoch " << epoch + 1 << " done, checkpoint " << result.checkpoint << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct PredictionRow {
  std::string id;
  std::string task;
  std::string prediction;
  std::vector<double> scores;
};

struct EvalReport {
  Task task = Task::kCaption;
  MetricReport metrics;
  std::vector<PredictionRow> predictions;
  std::vector<std::pair<std::string, std::string>> prompts;  // id, rendered prompt
};

/// Evaluation order: records with timestamps go oldest first within their
/// group so recurrent history only ever sees earlier clips.
inline std::vector<const ManifestRecord*> evaluation_order(std::vector<const ManifestRecord*> recs) {
  std::stable_sort(recs.begin(), recs.end(), [](const ManifestRecord* a, const ManifestRecord* b) {
    if (a->group != b->group) return a->group < b->group;
    return a->timestamp.value_or(0.0) < b->timestamp.value_or(0.0);
  });
  return recs;
}

inline PredictionMap load_predictions(const std::string& path) {
  PredictionMap out;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open predictions " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out[j.at("id").get<std::string>()] = j.at("prediction").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Runs the task adapter over the eval split. In recurrent mode, history
/// narrations come from `preloaded` when present, otherwise from the
/// model's own earlier predictions.
inline EvalReport run_eval(const RunConfig& cfg, const TrainState& state, const Manifest& m, const Vocabulary& vocab, Task task,
                           const PredictionMap& preloaded = {}) {
  if (vocab.size() != state.config.vocab_size) {
    throw Error(ErrorCode::kConfigMismatch, "vocabulary size " + std::to_string(vocab.size()) + " differs from checkpoint vocab_size " +
                                                std::to_string(state.config.vocab_size));
  }
  auto all = select_records(m, cfg.eval_split, std::nullopt);
  if (all.empty()) throw Error(ErrorCode::kInvalidArgument, "no records in split '" + cfg.eval_split + "'");
  std::vector<const ManifestRecord*> recs;
  for (const auto* r : all) {
    if (r->task == task) recs.push_back(r);
  }
  if (recs.empty()) {
    throw Error(ErrorCode::kTaskMismatch, "split '" + cfg.eval_split + "' has no '" + std::string(task_name(task)) + "' records");
  }
  recs = evaluation_order(recs);

  RunConfig run = cfg;
  run.lm = state.config;
  const auto encoder = make_encoder(run);
  const BoundModel model(state, encoder);
  const auto embedder = make_sentence_embedder(run.embedder);
  const auto toggles = run.toggles();
  const HistoryMode mode = run.history_mode();
  const std::size_t max_new = run.answer_budget();

  EvalReport rep;
  rep.task = task;
  PredictionMap own = preloaded;
  std::size_t correct = 0;
  std::vector<std::set<std::string>> pred_sets;
  std::vector<std::set<std::string>> truth_sets;
  Corpus corpus;
  ParagraphGroups groups;
  std::vector<InterleavedSample> videos;
  std::vector<std::string> queries;

  std::vector<std::string> classify_labels;
  for (const auto& r : m.records) {
    if (r.task != Task::kClassify) continue;
    for (const auto& l : r.labels.empty() ? std::vector<std::string>{r.answer} : r.labels) {
      if (!l.empty() && std::find(classify_labels.begin(), classify_labels.end(), l) == classify_labels.end()) classify_labels.push_back(l);
    }
  }

  for (const ManifestRecord* r : recs) {
    try {
      InterleavedSample s = build_record_sample(m, *r, run, toggles, mode, own, *embedder);
      const std::string truth = s.answer;
      s.answer.clear();
      const PackedSequence prefix = pack(s, vocab, model.max_len() - max_new, PackMode::kPrefix);
      rep.prompts.emplace_back(r->id, render_prompt(prefix, vocab));
      PredictionRow row{r->id, std::string(task_name(task)), {}, {}};
      switch (task) {
        case Task::kClassify: {
          const LabelSet labels(r->labels.empty() ? classify_labels : r->labels);
          const auto c = classify(model, s, labels, vocab, max_new);
          row.prediction = c.label;
          row.scores = c.scores;
          if (normalize_whitespace(c.label) == normalize_whitespace(r->answer)) ++correct;
          break;
        }
        case Task::kMcq: {
          const auto a = answer_mcq(model, s, r->options, vocab);
          row.prediction = std::to_string(a.index);
          row.scores = a.scores;
          if (a.index == *r->gold) ++correct;
          break;
        }
        case Task::kIdentify: {
          const auto names = parse_character_names(decode(generate(model, prefix, max_new), vocab), r->characters->bank);
          std::string joined;
          for (const auto& e : r->characters->bank.entries()) {
            if (!names.count(e.name)) continue;
            if (!joined.empty()) joined += ", ";
            joined += e.name;
          }
          row.prediction = joined.empty() ? std::string(kNoneAnswer) : joined;
          pred_sets.push_back(names);
          truth_sets.emplace_back(r->characters->present.begin(), r->characters->present.end());
          break;
        }
        case Task::kRetrieve: {
          row.prediction = decode(generate(model, prefix, max_new), vocab);
          videos.push_back(s);
          queries.push_back(truth);
          break;
        }
        case Task::kCaption:
        case Task::kAd: {
          row.prediction = decode(generate(model, prefix, max_new), vocab);
          corpus.candidates[r->id] = row.prediction;
          corpus.references[r->id] = {truth};
          groups[r->group].push_back(row.prediction);
          break;
        }
      }
      if (!preloaded.contains(r->id)) own[r->id] = row.prediction;
      rep.predictions.push_back(std::move(row));
    } catch (const Error& e) {
      throw with_record(e, r->id);
    }
  }

  const double n = static_cast<double>(recs.size());
  switch (task) {
    case Task::kClassify:
    case Task::kMcq:
      rep.metrics.emplace_back("accuracy", static_cast<double>(correct) / n);
      break;
    case Task::kIdentify: {
      const auto prf = score_multilabel(pred_sets, truth_sets);
      rep.metrics = {{"precision", prf.precision}, {"recall", prf.recall}, {"f1", prf.f1}};
      break;
    }
    case Task::kRetrieve: {
      std::vector<std::string> captions;
      for (const auto& p : rep.predictions) captions.push_back(p.prediction);
      const auto rr = retrieval_result(similarity_matrix(captions, queries, *embedder));
      rep.metrics = {{"r1", rr.r1}, {"r5", rr.r5}, {"r10", rr.r10}, {"geometric_mean", rr.geometric_mean}};
      break;
    }
    case Task::kCaption:
    case Task::kAd:
      rep.metrics.emplace_back("bleu4", bleu4(corpus));
      rep.metrics.emplace_back("rouge_l", rouge_l(corpus));
      if (corpus.candidates.size() >= 2) rep.metrics.emplace_back("cider", cider(corpus));
      rep.metrics.emplace_back("rep4", rep4(groups));
      break;
  }
  return rep;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
}

inline std::string predictions_jsonl(const EvalReport& rep) {
  std::string out;
  for (const auto& p : rep.predictions) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["task"] = p.task;
    j["prediction"] = p.prediction;
    if (!p.scores.empty()) j["scores"] = p.scores;
    out += j.dump() + '\n';
  }
  return out;
}

inline std::string prompts_jsonl(const std::vector<std::pair<std::string, std::string>>& prompts) {
  std::string out;
  for (const auto& [id, prompt] : prompts) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["prompt"] = prompt;
    out += j.dump() + '\n';
  }
  return out;
}

/// Writes predictions.jsonl, prompts.jsonl, metrics.tsv and report.json
/// into `dir`.
inline void write_eval_outputs(const std::string& dir, const RunConfig& cfg, const TrainState& state, const EvalReport& rep) {
  const fs::path d(dir);
  write_text(d / "predictions.jsonl", predictions_jsonl(rep));
  write_text(d / "prompts.jsonl", prompts_jsonl(rep.prompts));
  write_text(d / "metrics.tsv", format_metric_report(rep.metrics));
  nlohmann::ordered_json j;
  RunConfig echo = cfg;
  echo.lm = state.config;
  nlohmann::ordered_json config;
  for (const auto& [k, v] : echo.settings()) config[k] = v;
  j["config"] = config;
  j["task"] = std::string(task_name(rep.task));
  nlohmann::ordered_json metrics;
  for (const auto& [k, v] : rep.metrics) metrics[k] = std::stod(format_double(v, "%.6f"));
  j["metrics"] = metrics;
  j["predictions"] = "predictions.jsonl";
  write_text(d / "report.json", j.dump(2) + '\n');
}

// ---------------------------------------------------------------------------
// Ablation sweep

enum class SweepAxis { kHistoryN, kPlotTokens };

struct SweepRow {
  long long axis_value = 0;
  std::string metric;
  double value = 0.0;
};

/// Re-evaluates (or, with `retrain`, retrains into per-value checkpoint
/// directories and then evaluates) for each axis value.
inline std::vector<SweepRow> run_ablation_sweep(const RunConfig& cfg, const TrainState& state, const Manifest& m, const Vocabulary& vocab,
                                                Task task, SweepAxis axis, const std::vector<long long>& values, bool retrain = false) {
  std::vector<SweepRow> rows;
  for (long long v : values) {
    if (v < 0) throw Error(ErrorCode::kInvalidArgument, "sweep values must be >= 0");
    RunConfig c = cfg;
    (axis == SweepAxis::kHistoryN ? c.history_n : c.plot_tokens) = v;
    EvalReport rep;
    if (retrain) {
      c.checkpoint_dir = (fs::path(cfg.checkpoint_dir) / ("sweep-" + std::to_string(v))).string();
      const auto trained = run_train(c, m, vocab);
      rep = run_eval(c, trained.state, m, vocab, task);
    } else {
      rep = run_eval(c, state, m, vocab, task);
    }
    for (const auto& [name, value] : rep.metrics) rows.push_back({v, name, value});
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "axis_value,metric,value\n";
  for (const auto& r : rows) out += std::to_string(r.axis_value) + "," + r.metric + "," + format_double(r.value, "%.6f") + "\n";
  return out;
}

}  // namespace movieseq
