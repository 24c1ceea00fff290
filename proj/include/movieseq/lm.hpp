#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "movieseq/encoders.hpp"
#include "movieseq/error.hpp"
#include "movieseq/nn.hpp"
#include "movieseq/sequence.hpp"
#include "movieseq/tensor.hpp"

namespace movieseq {

/// Toy decoder configuration. Adapter, learning-rate and generation defaults
/// follow the reference training recipe (rank 16, alpha 16, lr 3e-5,
/// 64 new tokens).
struct LMConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 64;
  std::size_t max_len = 512;
  std::size_t lora_rank = 16;  // 0 disables the adapters
  double lora_alpha = 16.0;
  double learning_rate = 3e-5;
  std::size_t max_new_tokens = 64;
  std::size_t ffn_mult = 4;
  std::size_t visual_dim = 16;
  std::size_t max_frames = 64;
  std::size_t projector_heads = 4;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidArgument, "LMConfig: " + m); };
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
    if ((d_model / n_heads) % 2 != 0) fail("head width must be even for rotary embeddings");
    if (n_layers == 0) fail("n_layers must be >= 1");
    if (vocab_size < 4) fail("vocab_size must cover the special tokens");
    if (max_len == 0) fail("max_len must be >= 1");
    if (visual_dim == 0 || projector_heads == 0 || visual_dim % projector_heads != 0) {
      fail("visual_dim must be a positive multiple of projector_heads");
    }
    if (max_frames == 0) fail("max_frames must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  }

  /// Flat key=value lines in a fixed order; the checkpoint header stores this.
  std::map<std::string, std::string> to_kv() const {
    auto num = [](double v) {
      std::ostringstream s;
      s.precision(17);
      s << v;
      return s.str();
    };
    return {{"d_model", std::to_string(d_model)},
            {"n_layers", std::to_string(n_layers)},
            {"n_heads", std::to_string(n_heads)},
            {"vocab_size", std::to_string(vocab_size)},
            {"max_len", std::to_string(max_len)},
            {"lora_rank", std::to_string(lora_rank)},
            {"lora_alpha", num(lora_alpha)},
            {"learning_rate", num(learning_rate)},
            {"max_new_tokens", std::to_string(max_new_tokens)},
            {"ffn_mult", std::to_string(ffn_mult)},
            {"visual_dim", std::to_string(visual_dim)},
            {"max_frames", std::to_string(max_frames)},
            {"projector_heads", std::to_string(projector_heads)}};
  }

  /// Reads the keys to_kv() writes; unknown keys are ignored, missing keys
  /// keep their defaults.
  static LMConfig from_kv(const std::map<std::string, std::string>& kv) {
    LMConfig c;
    auto get_size = [&](const char* key, std::size_t& field) {
      if (auto it = kv.find(key); it != kv.end()) field = std::stoull(it->second);
    };
    auto get_double = [&](const char* key, double& field) {
      if (auto it = kv.find(key); it != kv.end()) field = std::stod(it->second);
    };
    get_size("d_model", c.d_model);
    get_size("n_layers", c.n_layers);
    get_size("n_heads", c.n_heads);
    get_size("vocab_size", c.vocab_size);
    get_size("max_len", c.max_len);
    get_size("lora_rank", c.lora_rank);
    get_double("lora_alpha", c.lora_alpha);
    get_double("learning_rate", c.learning_rate);
    get_size("max_new_tokens", c.max_new_tokens);
    get_size("ffn_mult", c.ffn_mult);
    get_size("visual_dim", c.visual_dim);
    get_size("max_frames", c.max_frames);
    get_size("projector_heads", c.projector_heads);
    return c;
  }

  friend bool operator==(const LMConfig&, const LMConfig&) = default;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Parameters of the multimodal decoder. The base (attention/FFN weights,
/// norms, output head) is frozen; input embeddings, LoRA factors and the
/// visual projector train.
struct LanguageModel {
  nn::Param embedding;
  std::vector<nn::Block> blocks;
  nn::RmsNorm final_norm;
  nn::Linear head;
  Projector projector;

  LanguageModel() = default;
  explicit LanguageModel(const LMConfig& c)
      : embedding("embedding", c.vocab_size, c.d_model, true),
        final_norm("final_norm", c.d_model, false),
        head("head", c.d_model, c.vocab_size, false, false),
        projector(ProjectorConfig{c.visual_dim, c.d_model, c.max_frames, c.projector_heads, 4}) {
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      blocks.emplace_back("layer" + std::to_string(l), c.d_model, c.n_heads, c.ffn_mult * c.d_model, /*causal=*/true,
                          /*rotary=*/true, /*weights_trainable=*/false, c.lora_rank, c.lora_alpha, /*ffn_bias=*/false);
    }
  }

  template <class F>
  void visit(F&& f) {
    f(embedding);
    for (auto& b : blocks) b.visit(f);
    final_norm.visit(f);
    head.visit(f);
    projector.visit(f);
  }
};

struct TrainState {
  LMConfig config;
  LanguageModel model;
  std::map<std::string, Matrix> adam_m;  // trainable tensors only
  std::map<std::string, Matrix> adam_v;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;

  TrainState() = default;

  /// Seeded initialization: base weights ~ N(0, 1/in), adapters A small
  /// Gaussian, B zero.
  TrainState(const LMConfig& cfg, std::uint64_t init_seed) : config(cfg), model(cfg), seed(init_seed) {
    cfg.validate();
    Rng rng(init_seed);
    fill_gaussian(model.embedding.value, rng, 1.0);
    const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double lora_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (auto& b : model.blocks) {
      b.attn.q.init(rng, in_std, lora_std);
      b.attn.k.init(rng, in_std, lora_std);
      b.attn.v.init(rng, in_std, lora_std);
      b.attn.o.init(rng, in_std, lora_std);
      b.ffn.up.init(rng, in_std, lora_std);
      b.ffn.down.init(rng, 1.0 / std::sqrt(static_cast<double>(cfg.ffn_mult * cfg.d_model)),
                      1.0 / std::sqrt(static_cast<double>(cfg.ffn_mult * cfg.d_model)));
    }
    model.head.init(rng, in_std, 0.0);
    model.projector.init(rng);
    for (nn::Param* p : params()) {
      if (!p->trainable) continue;
      adam_m[p->name] = Matrix(p->value.rows(), p->value.cols());
      adam_v[p->name] = Matrix(p->value.rows(), p->value.cols());
    }
  }

  /// Every tensor in a fixed order (the checkpoint order).
  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> out;
    model.visit([&](nn::Param& p) { out.push_back(&p); });
    return out;
  }
  std::vector<const nn::Param*> params() const {
    std::vector<const nn::Param*> out;
    const_cast<LanguageModel&>(model).visit([&](nn::Param& p) { out.push_back(&p); });
    return out;
  }

  void zero_grad() {
    for (nn::Param* p : params()) p->zero_grad();
  }
};

/// Frame embeddings for each visual payload of a packed sequence.
struct VisualInputs {
  std::vector<Matrix> frames;
};

inline VisualInputs encode_visuals(const PackedSequence& packed, const FrameEncoder& encoder) {
  VisualInputs v;
  v.frames.reserve(packed.payloads.size());
  for (const auto& payload : packed.payloads) v.frames.push_back(encoder.encode(payload));
  return v;
}

struct ForwardTrace {
  std::vector<Projector::Cache> projector;
  std::vector<nn::Block::Cache> blocks;
  nn::RmsNorm::Cache final_norm;
  nn::Linear::Cache head;
};

/// Logits (length × V). Token slots read the embedding table; visual slots
/// take the projector output for their frame. Causal: row i depends only on
/// slots ≤ i (frames of one video are projected jointly).
inline Matrix forward(const TrainState& state, const PackedSequence& packed, const VisualInputs& visuals,
                      ForwardTrace* trace = nullptr) {
  const auto& cfg = state.config;
  if (packed.length() == 0) throw Error(ErrorCode::kInvalidArgument, "empty sequence");
  if (packed.length() > cfg.max_len) {
    throw Error(ErrorCode::kOverLength, "sequence of " + std::to_string(packed.length()) + " exceeds max_len " +
                                            std::to_string(cfg.max_len));
  }
  if (visuals.frames.size() != packed.payloads.size()) throw Error(ErrorCode::kInvalidArgument, "visual inputs do not match payloads");

  if (trace != nullptr) {
    trace->projector.assign(packed.payloads.size(), {});
    trace->blocks.assign(state.model.blocks.size(), {});
  }
  std::vector<Matrix> projected;
  projected.reserve(visuals.frames.size());
  for (std::size_t p = 0; p < visuals.frames.size(); ++p) {
    projected.push_back(state.model.projector.forward(visuals.frames[p], trace ? &trace->projector[p] : nullptr));
  }

  Matrix h(packed.length(), cfg.d_model);
  for (std::size_t i = 0; i < packed.length(); ++i) {
    const Slot& s = packed.slots[i];
    std::span<const double> src;
    if (s.kind == SlotKind::kToken) {
      if (s.value < 0 || static_cast<std::size_t>(s.value) >= cfg.vocab_size) {
        throw Error(ErrorCode::kInvalidId, "token id " + std::to_string(s.value) + " at position " + std::to_string(i));
      }
      src = state.model.embedding.value.row(static_cast<std::size_t>(s.value));
    } else {
      const auto& ref = packed.visual_slots[static_cast<std::size_t>(s.value)];
      src = projected[static_cast<std::size_t>(ref.payload)].row(static_cast<std::size_t>(ref.frame));
    }
    std::copy(src.begin(), src.end(), h.row(i).begin());
  }
  for (std::size_t l = 0; l < state.model.blocks.size(); ++l) {
    h = state.model.blocks[l].forward(h, trace ? &trace->blocks[l] : nullptr);
  }
  return state.model.head.forward(state.model.final_norm.forward(h, trace ? &trace->final_norm : nullptr),
                                  trace ? &trace->head : nullptr);
}

inline Matrix forward(const TrainState& state, const PackedSequence& packed, const FrameEncoder& encoder) {
  return forward(state, packed, encode_visuals(packed, encoder));
}

/// Accumulates parameter gradients given d(loss)/d(logits).
inline void backward(TrainState& state, const PackedSequence& packed, const ForwardTrace& trace, const Matrix& dlogits) {
  auto& m = state.model;
  Matrix dh = m.final_norm.backward(trace.final_norm, m.head.backward(trace.head, dlogits));
  for (std::size_t l = m.blocks.size(); l-- > 0;) dh = m.blocks[l].backward(trace.blocks[l], dh);

  std::vector<Matrix> dprojected;
  for (std::size_t p = 0; p < packed.payloads.size(); ++p) {
    dprojected.emplace_back(packed.payloads[p].frame_count(), state.config.d_model);
  }
  for (std::size_t i = 0; i < packed.length(); ++i) {
    const Slot& s = packed.slots[i];
    if (s.kind == SlotKind::kToken) {
      auto g = m.embedding.grad.row(static_cast<std::size_t>(s.value));
      auto d = dh.row(i);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += d[j];
    } else {
      const auto& ref = packed.visual_slots[static_cast<std::size_t>(s.value)];
      auto g = dprojected[static_cast<std::size_t>(ref.payload)].row(static_cast<std::size_t>(ref.frame));
      auto d = dh.row(i);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += d[j];
    }
  }
  for (std::size_t p = 0; p < dprojected.size(); ++p) m.projector.backward(trace.projector[p], dprojected[p]);
}

/// Next-token targets: target[p] is the token at p (scored by logits row
/// p − 1); -1 where the slot is visual.
inline std::vector<TokenId> targets_of(const PackedSequence& packed) {
  std::vector<TokenId> t(packed.length(), -1);
  for (std::size_t p = 0; p < packed.length(); ++p) t[p] = packed.token_at(p);
  return t;
}

struct NllSum {
  double sum = 0.0;
  std::size_t count = 0;
};

/// Σ −log softmax(logits[p − 1])[target[p]] over masked p ≥ 1. Targets at
/// unmasked positions are never read.
inline NllSum masked_nll(const Matrix& logits, const std::vector<TokenId>& targets, const std::vector<bool>& mask,
                         Matrix* dlogits = nullptr, double grad_scale = 1.0) {
  NllSum out;
  for (std::size_t p = 1; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    const auto row = logits.row(p - 1);
    const TokenId target = targets[p];
    if (target < 0 || static_cast<std::size_t>(target) >= row.size()) {
      throw Error(ErrorCode::kInvalidId, "masked target at position " + std::to_string(p) + " is not a token");
    }
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    out.sum += lse - row[static_cast<std::size_t>(target)];
    ++out.count;
    if (dlogits != nullptr) {
      auto g = dlogits->row(p - 1);
      for (std::size_t k = 0; k < row.size(); ++k) g[k] += grad_scale * std::exp(row[k] - lse);
      g[static_cast<std::size_t>(target)] -= grad_scale;
    }
  }
  return out;
}

/// Mean NLL over the answer ∥ EOS positions (teacher forced).
inline double loss(const TrainState& state, const PackedSequence& packed, const VisualInputs& visuals) {
  if (packed.masked_count() == 0) throw Error(ErrorCode::kEmptyMask, "no masked positions");
  const Matrix logits = forward(state, packed, visuals);
  const NllSum s = masked_nll(logits, targets_of(packed), packed.loss_mask);
  return s.sum / static_cast<double>(s.count);
}

inline double loss(const TrainState& state, const PackedSequence& packed, const FrameEncoder& encoder) {
  return loss(state, packed, encode_visuals(packed, encoder));
}

/// Forward + backward for a batch; gradients of the batch mean loss (mean
/// over every masked position in the batch) are left in the params. Returns
/// that mean loss.
inline double accumulate_gradients(TrainState& state, std::span<const PackedSequence> batch, const FrameEncoder& encoder) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  std::size_t total = 0;
  for (const auto& s : batch) {
    if (s.masked_count() == 0) throw Error(ErrorCode::kEmptyMask, "no masked positions in batch sequence");
    total += s.masked_count();
  }
  state.zero_grad();
  double sum = 0.0;
  const double scale = 1.0 / static_cast<double>(total);
  for (const auto& s : batch) {
    ForwardTrace trace;
    const VisualInputs vis = encode_visuals(s, encoder);
    const Matrix logits = forward(state, s, vis, &trace);
    Matrix dlogits(logits.rows(), logits.cols());
    sum += masked_nll(logits, targets_of(s), s.loss_mask, &dlogits, scale).sum;
    backward(state, s, trace, dlogits);
  }
  return sum / static_cast<double>(total);
}

/// One AdamW update of every trainable tensor from the gradients in place.
inline void apply_adam(TrainState& state, const AdamConfig& adam = {}) {
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  const double lr = state.config.learning_rate;
  for (nn::Param* p : state.params()) {
    if (!p->trainable) continue;
    auto& m = state.adam_m.at(p->name).data();
    auto& v = state.adam_v.at(p->name).data();
    auto& w = p->value.data();
    const auto& g = p->grad.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = round_to_float(adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i]);
      v[i] = round_to_float(adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i]);
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + adam.eps) + adam.weight_decay * w[i];
      w[i] = round_to_float(w[i] - lr * update);
    }
  }
  ++state.step;
}

/// Gradient step on a batch; returns the pre-update mean loss.
inline double train_step(TrainState& state, std::span<const PackedSequence> batch, const FrameEncoder& encoder,
                         const AdamConfig& adam = {}) {
  const double l = accumulate_gradients(state, batch, encoder);
  apply_adam(state, adam);
  return l;
}

struct ParamCounts {
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::size_t lora = 0;  // adapter share of `trainable`
  double fraction = 0.0;
};

inline ParamCounts count_trainable(const TrainState& state) {
  ParamCounts c;
  for (const nn::Param* p : state.params()) {
    (p->trainable ? c.trainable : c.frozen) += p->count();
    if (p->name.find(".lora_") != std::string::npos) c.lora += p->count();
  }
  c.fraction = static_cast<double>(c.trainable) / static_cast<double>(c.trainable + c.frozen);
  return c;
}

/// Anything that can score a packed sequence. Adapters and greedy decoding
/// are written against this so tests can plug in scripted models.
template <class M>
concept SequenceScorer = requires(const M& m, const PackedSequence& p) {
  { m.logits(p) } -> std::convertible_to<Matrix>;
  { m.max_len() } -> std::convertible_to<std::size_t>;
};

/// Read-only view of a train state plus the frame encoder its visual slots
/// resolve through.
class BoundModel {
 public:
  BoundModel(const TrainState& state, const FrameEncoder& encoder) : state_(&state), encoder_(&encoder) {}

  Matrix logits(const PackedSequence& p) const { return forward(*state_, p, *encoder_); }
  std::size_t max_len() const { return state_->config.max_len; }
  const TrainState& state() const { return *state_; }

 private:
  const TrainState* state_;
  const FrameEncoder* encoder_;
};

inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

/// Greedy decoding after the assistant tag; stops at EOS (not returned) or
/// after `max_new` tokens.
template <SequenceScorer M>
std::vector<TokenId> generate(const M& model, PackedSequence prefix, std::size_t max_new) {
  if (prefix.length() + max_new > model.max_len()) {
    throw Error(ErrorCode::kOverLength, "prefix of " + std::to_string(prefix.length()) + " plus " + std::to_string(max_new) +
                                            " new tokens exceeds max_len " + std::to_string(model.max_len()));
  }
  std::vector<TokenId> out;
  for (std::size_t n = 0; n < max_new; ++n) {
    const Matrix logits = model.logits(prefix);
    const auto next = static_cast<TokenId>(argmax_row(logits.row(prefix.length() - 1)));
    if (next == Vocabulary::kEos) break;
    out.push_back(next);
    prefix.slots.push_back(Slot::token(next));
    prefix.loss_mask.push_back(false);
  }
  return out;
}

/// Sum of log-probabilities the model assigns to the masked targets
/// (answer ∥ EOS under teacher forcing), and how many there were.
template <SequenceScorer M>
NllSum answer_nll(const M& model, const PackedSequence& full) {
  if (full.masked_count() == 0) throw Error(ErrorCode::kEmptyMask, "no masked positions");
  return masked_nll(model.logits(full), targets_of(full), full.loss_mask);
}

}  // namespace movieseq
