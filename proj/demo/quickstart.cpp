// Builds two character-identification instructions, trains briefly and
// prints what the model answers.

#include <iostream>

#include "movieseq/movieseq.hpp"

using namespace movieseq;

int main() {
  CharacterBank bank;
  bank.add("Max", VisualPayload::image(FrameRef::seed(1)));
  bank.add("Eve", VisualPayload::image(FrameRef::seed(2)));

  std::vector<InterleavedSample> samples{
      build_character_instruction(bank, VisualPayload::span(FrameRef::seed(10), 4), CharacterMode::kA, {"Max"}),
      build_character_instruction(bank, VisualPayload::span(FrameRef::seed(20), 4), CharacterMode::kA, {"Eve"}),
  };
  samples[0].id = "clip-1";
  samples[1].id = "clip-2";

  std::vector<std::string> corpus;
  for (const auto& s : samples) {
    for (auto& t : sample_texts(s)) corpus.push_back(t);
  }
  const Vocabulary vocab = Vocabulary::build(corpus);

  LMConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.max_len = 64;
  cfg.learning_rate = 3e-3;
  TrainState state(cfg, 42);
  const ToyFrameEncoder encoder(cfg.visual_dim, 42);

  std::vector<PackedSequence> batch;
  for (const auto& s : samples) batch.push_back(pack(s, vocab, cfg.max_len));
  std::cout << render_prompt(batch[0], vocab) << "\n\n";

  for (int step = 1; step <= 60; ++step) {
    const double l = train_step(state, batch, encoder);
    if (step % 20 == 0) std::cout << "step " << step << " loss " << l << '\n';
  }

  const BoundModel model(state, encoder);
  for (InterleavedSample s : samples) {
    const std::string truth = s.answer;
    s.answer.clear();
    std::cout << s.id << ": " << generate_text(model, s, vocab, 4) << " (expected " << truth << ")\n";
  }
  const auto counts = count_trainable(state);
  std::cout << "trainable " << counts.trainable << " of " << counts.trainable + counts.frozen << " parameters\n";
}
