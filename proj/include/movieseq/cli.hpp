#pragma once

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "movieseq/pipeline.hpp"

namespace movieseq {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitRuntime = 3;

inline std::vector<long long> parse_value_list(const std::string& text) {
  std::vector<long long> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = normalize_whitespace(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kInvalidArgument, "bad sweep value '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "no sweep values");
  return out;
}

/// Entry point of the `movieseq` tool. Returns 0 on success, 1 on usage
/// errors, 2 on data errors and 3 on runtime errors.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Interleaved multimodal instruction tuning toolkit", "movieseq"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> toggle;
  std::optional<std::string> mode;
  std::string manifest;
  std::string vocab;
  std::string embeddings;
  std::string checkpoint_dir;
  std::string out_dir;
  std::string checkpoint;
  std::string task_text;
  std::string predictions;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->add_option("--set", sets, "config override key=value (repeatable)");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--toggle", toggle, "contexts to use: comma list of img,plot,sub,hist (empty for video only)");
    sub->add_option("--mode", mode, "history narrations: oracle or recurrent");
    sub->add_option("--manifest", manifest, "JSONL manifest");
    sub->add_option("--vocab", vocab, "vocabulary file (built and written if missing)");
    sub->add_option("--embeddings", embeddings, "frame embedding file");
  };

  const CLI::IsMember kTaskNames({"classify", "identify", "caption", "retrieve", "mcq", "ad"});

  auto* build = app.add_subcommand("build-instructions", "build, pack and dump instructions for a split");
  add_common(build);
  std::string split = "train";
  std::string dump_path;
  build->add_option("--split", split, "split to build");
  build->add_option("--out", dump_path, "prompt dump (JSONL)")->required();

  auto* train = app.add_subcommand("train", "train on the train split");
  add_common(train);
  train->add_option("--checkpoint-dir", checkpoint_dir, "directory for epoch checkpoints");

  auto* gen = app.add_subcommand("generate", "greedy generation for eval-split records");
  add_common(gen);
  std::string record_id;
  gen->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  gen->add_option("--id", record_id, "only this record");

  auto* eval = app.add_subcommand("eval", "evaluate a task on the eval split");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--task", task_text, "classify | identify | caption | retrieve | mcq | ad")->required()->check(kTaskNames);
  eval->add_option("--out", out_dir, "output directory");
  eval->add_option("--predictions", predictions, "preloaded predictions (JSONL) for recurrent history");

  auto* rp = app.add_subcommand("retrieve-plot", "print the plot paragraph most relevant to a query");
  std::string query;
  std::string plot_path;
  std::string embedder = "hash";
  std::string rag_score = "max";
  rp->add_option("--query", query, "query text")->required();
  rp->add_option("--plot", plot_path, "plot file")->required();
  rp->add_option("--embedder", embedder, "hash | bow | JSONL vector file");
  rp->add_option("--score", rag_score, "max | mean")->check(CLI::IsMember({"max", "mean"}));

  auto* sweep = app.add_subcommand("sweep", "metric versus history clip count or plot length");
  add_common(sweep);
  std::string axis_text;
  std::string values_text;
  std::string csv_path;
  bool retrain = false;
  sweep->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  sweep->add_option("--task", task_text, "task to evaluate")->required()->check(kTaskNames);
  sweep->add_option("--axis", axis_text, "history_n | plot_tokens")->required()->check(CLI::IsMember({"history_n", "plot_tokens"}));
  sweep->add_option("--values", values_text, "comma list of axis values")->required();
  sweep->add_option("--out", csv_path, "CSV output path")->required();
  sweep->add_flag("--retrain", retrain, "retrain per axis value instead of re-evaluating");
  sweep->add_option("--checkpoint-dir", checkpoint_dir, "directory for retrained checkpoints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    try {
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::kParseError, "--set expects key=value, got '" + s + "'");
        cfg.set(normalize_whitespace(s.substr(0, eq)), normalize_whitespace(s.substr(eq + 1)));
      }
      if (toggle) cfg.set("toggle", *toggle);
      if (mode) cfg.set("mode", *mode);
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    }
    if (seed) cfg.seed = *seed;
    if (!manifest.empty()) cfg.manifest = manifest;
    if (!vocab.empty()) cfg.vocab = vocab;
    if (!embeddings.empty()) cfg.embeddings = embeddings;
    if (!checkpoint_dir.empty()) cfg.checkpoint_dir = checkpoint_dir;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!predictions.empty()) cfg.predictions = predictions;

    if (rp->parsed()) {
      const auto e = make_sentence_embedder(embedder);
      const Plot plot = load_plot(plot_path);
      out << sample_plot_rag(plot, query, *e, rag_score == "mean" ? ParagraphScore::kMeanEmbedding : ParagraphScore::kMaxSentence) << '\n';
      return kExitOk;
    }

    if (cfg.manifest.empty()) throw Error(ErrorCode::kIoError, "no manifest given (--manifest or manifest = ... in the config)");
    const Manifest m = load_manifest(cfg.manifest);
    auto load_state = [&] {
      Checkpoint ck = load_checkpoint(checkpoint);
      auto it = ck.extras.find("manifest_hash");
      if (it != ck.extras.end() && it->second != m.hash) err << "warning: checkpoint was trained on a different manifest\n";
      return std::move(ck.state);
    };
    auto task_of = [&] {
      const auto t = parse_task(task_text);
      if (!t) throw Error(ErrorCode::kInvalidArgument, "unknown task '" + task_text + "'");
      return *t;
    };

    if (build->parsed()) {
      const Vocabulary v = load_or_build_vocabulary(m, cfg);
      RunConfig c = cfg;
      c.train_split = split;
      const auto data = build_training_set(m, c, v);
      std::vector<std::pair<std::string, std::string>> prompts;
      for (const auto& b : data) prompts.emplace_back(b.sample.id, render_prompt(b.packed, v));
      write_text(dump_path, prompts_jsonl(prompts));
      out << data.size() << " instructions written to " << dump_path << '\n';
      return kExitOk;
    }
    if (train->parsed()) {
      const Vocabulary v = load_or_build_vocabulary(m, cfg);
      const auto result = run_train(cfg, m, v, &err);
      if (!result.log.empty()) out << "final loss " << format_double(result.log.back().loss) << '\n';
      out << "checkpoint " << result.checkpoint << '\n';
      return kExitOk;
    }
    if (gen->parsed()) {
      const TrainState state = load_state();
      const Vocabulary v = load_or_build_vocabulary(m, cfg);
      RunConfig c = cfg;
      c.lm = state.config;
      const auto encoder = make_encoder(c);
      const BoundModel model(state, encoder);
      const auto emb = make_sentence_embedder(c.embedder);
      const auto toggles = c.toggles();
      PredictionMap preds = c.predictions.empty() ? PredictionMap{} : load_predictions(c.predictions);
      std::vector<const ManifestRecord*> recs;
      if (!record_id.empty()) {
        recs.push_back(&m.at(record_id));
      } else {
        recs = evaluation_order(select_records(m, c.eval_split, std::nullopt));
      }
      for (const auto* r : recs) {
        InterleavedSample s = build_record_sample(m, *r, c, toggles, c.history_mode(), preds, *emb);
        s.answer.clear();
        const std::string text = generate_text(model, s, v, c.answer_budget());
        if (!preds.contains(r->id)) preds[r->id] = text;
        out << r->id << '\t' << text << '\n';
      }
      return kExitOk;
    }
    if (eval->parsed()) {
      const TrainState state = load_state();
      const Vocabulary v = load_or_build_vocabulary(m, cfg);
      const PredictionMap pre = cfg.predictions.empty() ? PredictionMap{} : load_predictions(cfg.predictions);
      const EvalReport rep = run_eval(cfg, state, m, v, task_of(), pre);
      write_eval_outputs(cfg.out_dir, cfg, state, rep);
      out << format_metric_report(rep.metrics);
      return kExitOk;
    }
    if (sweep->parsed()) {
      const TrainState state = load_state();
      const Vocabulary v = load_or_build_vocabulary(m, cfg);
      const auto axis = axis_text == "history_n" ? SweepAxis::kHistoryN : SweepAxis::kPlotTokens;
      const auto rows = run_ablation_sweep(cfg, state, m, v, task_of(), axis, parse_value_list(values_text), retrain);
      write_text(csv_path, sweep_csv(rows));
      out << sweep_csv(rows);
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_data_error(e.code()) ? kExitData : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace movieseq
