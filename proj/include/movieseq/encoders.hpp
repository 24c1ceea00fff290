#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "movieseq/error.hpp"
#include "movieseq/nn.hpp"
#include "movieseq/tensor.hpp"
#include "movieseq/visual.hpp"

namespace movieseq {

/// Centre-of-bin frame indices: floor((i + 0.5) · total / n), clipped to the
/// last frame. Nondecreasing by construction.
inline std::vector<std::size_t> sample_frames(std::size_t total_frames, std::size_t n) {
  if (total_frames == 0 || n == 0) throw Error(ErrorCode::kInvalidArgument, "sample_frames needs total_frames >= 1 and n >= 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    // (2i + 1)·total / (2n) is the same quantity in exact integer arithmetic
    idx[i] = std::min((2 * i + 1) * total_frames / (2 * n), total_frames - 1);
  }
  return idx;
}

/// Maps frame references to CLS-style frame embeddings (one row per frame).
class FrameEncoder {
 public:
  virtual ~FrameEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual Matrix encode(const VisualPayload& payload) const = 0;
};

/// Deterministic stand-in for a vision encoder: each frame reference seeds a
/// Gaussian vector that is normalized to unit length.
class ToyFrameEncoder final : public FrameEncoder {
 public:
  ToyFrameEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

  std::size_t dim() const override { return dim_; }

  std::vector<double> embed(const FrameRef& ref) const {
    Rng rng(mix64(seed_ ^ mix64((static_cast<std::uint64_t>(ref.kind) << 62) ^ ref.value)));
    std::vector<double> v(dim_);
    for (double& x : v) x = rng.gaussian();
    const double n = l2_norm(v);
    for (double& x : v) x /= n;
    return v;
  }

  Matrix encode(const VisualPayload& payload) const override {
    Matrix m(payload.frame_count(), dim_);
    for (std::size_t f = 0; f < payload.frame_count(); ++f) {
      const auto v = embed(payload.frames[f]);
      std::copy(v.begin(), v.end(), m.row(f).begin());
    }
    return m;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

inline constexpr std::uint32_t kEmbeddingMagic = 0x4645534D;  // "MSEF" little-endian
inline constexpr std::uint32_t kEmbeddingVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw Error(ErrorCode::kParseError, "unexpected end of binary file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, 4);
  write_u32(out, bits);
}

inline double read_f32(std::istream& in) {
  const std::uint32_t bits = read_u32(in);
  float f = 0.0f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

}  // namespace detail

/// Precomputed frame features, row-indexed. On disk: magic, version, count,
/// dim as little-endian u32, then count × dim little-endian f32.
class EmbeddingTable final : public FrameEncoder {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(Matrix rows) : rows_(std::move(rows)) {}

  static EmbeddingTable load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open embedding file " + path);
    if (detail::read_u32(in) != kEmbeddingMagic) throw Error(ErrorCode::kParseError, path + ": bad embedding magic");
    if (detail::read_u32(in) != kEmbeddingVersion) throw Error(ErrorCode::kParseError, path + ": unsupported embedding version");
    const std::uint32_t count = detail::read_u32(in);
    const std::uint32_t dim = detail::read_u32(in);
    Matrix m(count, dim);
    for (double& v : m.data()) v = detail::read_f32(in);
    return EmbeddingTable(std::move(m));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write embedding file " + path);
    detail::write_u32(out, kEmbeddingMagic);
    detail::write_u32(out, kEmbeddingVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(rows_.rows()));
    detail::write_u32(out, static_cast<std::uint32_t>(rows_.cols()));
    for (double v : rows_.data()) detail::write_f32(out, v);
  }

  std::size_t dim() const override { return rows_.cols(); }
  std::size_t count() const { return rows_.rows(); }
  const Matrix& rows() const { return rows_; }

  Matrix encode(const VisualPayload& payload) const override {
    Matrix m(payload.frame_count(), dim());
    for (std::size_t f = 0; f < payload.frame_count(); ++f) {
      const FrameRef& ref = payload.frames[f];
      if (ref.kind != FrameRef::Kind::kRow || ref.value >= rows_.rows()) {
        throw Error(ErrorCode::kMissingEmbedding, "frame " + ref.str() + " not in embedding table of " +
                                                      std::to_string(rows_.rows()) + " rows");
      }
      auto src = rows_.row(ref.value);
      std::copy(src.begin(), src.end(), m.row(f).begin());
    }
    return m;
  }

 private:
  Matrix rows_;
};

struct ProjectorConfig {
  std::size_t visual_dim = 16;
  std::size_t model_dim = 32;
  std::size_t max_frames = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
};

/// Temporal projector: adds a learned per-frame position row, runs one
/// bidirectional transformer block over the frames, then maps each frame to
/// model width. Everything here is trainable.
class Projector {
 public:
  struct Cache {
    nn::Block::Cache block;
    nn::Linear::Cache out;
  };

  Projector() = default;
  explicit Projector(const ProjectorConfig& cfg)
      : cfg_(cfg),
        positions_("projector.temporal", cfg.max_frames, cfg.visual_dim, true),
        block_("projector.block", cfg.visual_dim, cfg.heads, cfg.ffn_mult * cfg.visual_dim, /*causal=*/false,
               /*rotary=*/false, /*weights_trainable=*/true, 0, 0.0, /*ffn_bias=*/true),
        out_("projector.out", cfg.visual_dim, cfg.model_dim, true, true) {
    if (cfg.visual_dim % cfg.heads != 0) throw Error(ErrorCode::kInvalidArgument, "visual_dim must divide into projector heads");
  }

  void init(Rng& rng) {
    fill_gaussian(positions_.value, rng, 0.02);
    const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg_.visual_dim));
    block_.attn.q.init(rng, in_std, 0.0);
    block_.attn.k.init(rng, in_std, 0.0);
    block_.attn.v.init(rng, in_std, 0.0);
    block_.attn.o.init(rng, in_std, 0.0);
    block_.ffn.up.init(rng, in_std, 0.0);
    block_.ffn.down.init(rng, 1.0 / std::sqrt(static_cast<double>(cfg_.ffn_mult * cfg_.visual_dim)), 0.0);
    out_.init(rng, in_std, 0.0);
  }

  const ProjectorConfig& config() const { return cfg_; }

  Matrix forward(const Matrix& frames, Cache* cache) const {
    if (frames.rows() > cfg_.max_frames) {
      throw Error(ErrorCode::kTooManyFrames, std::to_string(frames.rows()) + " frames exceed the temporal table of " +
                                                 std::to_string(cfg_.max_frames));
    }
    if (frames.cols() != cfg_.visual_dim) throw Error(ErrorCode::kInvalidArgument, "frame width does not match projector");
    Matrix x = frames;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) += positions_.value(i, j);
    }
    Matrix h = block_.forward(x, cache ? &cache->block : nullptr);
    return out_.forward(h, cache ? &cache->out : nullptr);
  }

  /// Accumulates parameter gradients; returns d(loss)/d(frames).
  Matrix backward(const Cache& cache, const Matrix& dy) {
    Matrix dx = block_.backward(cache.block, out_.backward(cache.out, dy));
    for (std::size_t i = 0; i < dx.rows(); ++i) {
      for (std::size_t j = 0; j < dx.cols(); ++j) positions_.grad(i, j) += dx(i, j);
    }
    return dx;
  }

  template <class F>
  void visit(F&& f) {
    f(positions_);
    block_.visit(f);
    out_.visit(f);
  }

  nn::Param& positions() { return positions_; }

 private:
  ProjectorConfig cfg_;
  nn::Param positions_;
  nn::Block block_;
  nn::Linear out_;
};

}  // namespace movieseq
