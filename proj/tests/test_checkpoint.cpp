#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace movieseq;
using movieseq::testing::TempDir;
using movieseq::testing::tiny_config;

namespace {

TrainState trained_state() {
  LMConfig c = tiny_config(64);
  c.learning_rate = 1e-3;
  TrainState s(c, 5);
  ToyFrameEncoder enc(16, 1);
  const std::vector<PackedSequence> batch{movieseq::testing::gradient_probe_sequence()};
  for (int i = 0; i < 3; ++i) train_step(s, batch, enc);
  return s;
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir;
  const TrainState s = trained_state();
  save_checkpoint(dir.file("a.ckpt"), s, {{"epoch", "3"}, {"run.seed", "5"}});
  const Checkpoint ck = load_checkpoint(dir.file("a.ckpt"));
  EXPECT_EQ(ck.state.config, s.config);
  EXPECT_EQ(ck.state.step, 3u);
  EXPECT_EQ(ck.state.seed, 5u);
  EXPECT_EQ(ck.extras.at("epoch"), "3");
  EXPECT_EQ(ck.extras.at("run.seed"), "5");
  const auto a = s.params();
  const auto b = ck.state.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
  }
  EXPECT_EQ(ck.state.adam_m, s.adam_m);
  EXPECT_EQ(ck.state.adam_v, s.adam_v);
  ToyFrameEncoder enc(16, 1);
  const auto seq = movieseq::testing::gradient_probe_sequence();
  EXPECT_EQ(forward(s, seq, enc), forward(ck.state, seq, enc));
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir;
  save_checkpoint(dir.file("a.ckpt"), trained_state(), {{"epoch", "1"}});
  const Checkpoint ck = load_checkpoint(dir.file("a.ckpt"));
  save_checkpoint(dir.file("b.ckpt"), ck.state, ck.extras);
  EXPECT_EQ(movieseq::testing::slurp(dir.file("a.ckpt")), movieseq::testing::slurp(dir.file("b.ckpt")));
  EXPECT_FALSE(std::filesystem::exists(dir.file("a.ckpt.tmp")));
}

TEST(Checkpoint, ResumedTrainingMatchesUninterrupted) {
  TempDir dir;
  LMConfig c = tiny_config(64);
  c.learning_rate = 1e-3;
  ToyFrameEncoder enc(16, 1);
  const std::vector<PackedSequence> batch{movieseq::testing::gradient_probe_sequence()};
  TrainState straight(c, 9);
  for (int i = 0; i < 4; ++i) train_step(straight, batch, enc);

  TrainState first(c, 9);
  for (int i = 0; i < 2; ++i) train_step(first, batch, enc);
  save_checkpoint(dir.file("mid.ckpt"), first);
  TrainState resumed = load_checkpoint(dir.file("mid.ckpt")).state;
  for (int i = 0; i < 2; ++i) train_step(resumed, batch, enc);
  EXPECT_EQ(resumed.model.embedding.value, straight.model.embedding.value);
  EXPECT_EQ(resumed.step, straight.step);
}

TEST(Checkpoint, HeaderStartsWithMagic) {
  TempDir dir;
  save_checkpoint(dir.file("a.ckpt"), TrainState(tiny_config(64), 1));
  const std::string bytes = movieseq::testing::slurp(dir.file("a.ckpt"));
  EXPECT_EQ(bytes.substr(0, 4), "MSQC");
  EXPECT_NE(bytes.find("d_model=32\n"), std::string::npos);
  EXPECT_NE(bytes.find("lora_rank=4\n"), std::string::npos);
}

TEST(Checkpoint, ConfigMismatch) {
  TempDir dir;
  save_checkpoint(dir.file("a.ckpt"), TrainState(tiny_config(64), 1));
  LMConfig other = tiny_config(64);
  other.lora_rank = 8;
  try {
    load_checkpoint(dir.file("a.ckpt"), other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigMismatch);
  }
  EXPECT_NO_THROW(load_checkpoint(dir.file("a.ckpt"), tiny_config(64)));
}

TEST(Checkpoint, CorruptFiles) {
  TempDir dir;
  save_checkpoint(dir.file("a.ckpt"), TrainState(tiny_config(64), 1));
  const std::string bytes = movieseq::testing::slurp(dir.file("a.ckpt"));
  dir.write("short.ckpt", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint(dir.file("short.ckpt")), Error);
  dir.write("junk.ckpt", "not a checkpoint at all");
  try {
    load_checkpoint(dir.file("junk.ckpt"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
  }
  try {
    load_checkpoint(dir.file("absent.ckpt"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoError);
  }
}

TEST(Checkpoint, ExtrasMustBeSingleLines) {
  TempDir dir;
  EXPECT_THROW(save_checkpoint(dir.file("a.ckpt"), TrainState(tiny_config(64), 1), {{"k", "two\nlines"}}), Error);
  EXPECT_THROW(save_checkpoint(dir.file("a.ckpt"), TrainState(tiny_config(64), 1), {{"a=b", "c"}}), Error);
}
