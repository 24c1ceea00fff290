#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "movieseq/tensor.hpp"

// Layers with hand-written backward passes. forward() is const and returns
// whatever backward() needs in a cache struct, so one parameter snapshot can
// serve concurrent inference while training owns the only mutable copy.

namespace movieseq::nn {

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = false;

  Param() = default;
  Param(std::string n, std::size_t rows, std::size_t cols, bool train)
      : name(std::move(n)), value(rows, cols), grad(rows, cols), trainable(train) {}

  std::size_t count() const noexcept { return value.size(); }
  void zero_grad() { grad.zero(); }
};

/// y = x Wᵀ (+ b) (+ scale · (x Aᵀ) Bᵀ). A rank of 0 means no adapter.
struct Linear {
  Param weight;  // out × in
  Param bias;    // 1 × out, or empty
  Param lora_a;  // rank × in
  Param lora_b;  // out × rank
  double scale = 0.0;

  struct Cache {
    Matrix x;
    Matrix h;  // x Aᵀ
  };

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool weight_trainable, bool with_bias,
         std::size_t lora_rank = 0, double lora_alpha = 0.0)
      : weight(name + ".weight", out, in, weight_trainable) {
    if (with_bias) bias = Param(name + ".bias", 1, out, weight_trainable);
    if (lora_rank > 0) {
      lora_a = Param(name + ".lora_a", lora_rank, in, true);
      lora_b = Param(name + ".lora_b", out, lora_rank, true);
      scale = lora_alpha / static_cast<double>(lora_rank);
    }
  }

  std::size_t in_features() const { return weight.value.cols(); }
  std::size_t out_features() const { return weight.value.rows(); }
  bool has_lora() const { return !lora_a.value.empty(); }

  // stddev of A's init; B stays zero so the adapted map starts equal to W.
  void init(Rng& rng, double weight_std, double lora_std) {
    fill_gaussian(weight.value, rng, weight_std);
    if (has_lora()) {
      fill_gaussian(lora_a.value, rng, lora_std);
      lora_b.value.zero();
    }
  }

  Matrix forward(const Matrix& x, Cache* cache) const {
    Matrix y = matmul_nt(x, weight.value);
    if (!bias.value.empty()) {
      for (std::size_t i = 0; i < y.rows(); ++i) {
        for (std::size_t o = 0; o < y.cols(); ++o) y(i, o) += bias.value(0, o);
      }
    }
    Matrix h;
    if (has_lora()) {
      h = matmul_nt(x, lora_a.value);
      add_inplace(y, matmul_nt(h, lora_b.value), scale);
    }
    if (cache != nullptr) {
      cache->x = x;
      cache->h = std::move(h);
    }
    return y;
  }

  Matrix backward(const Cache& cache, const Matrix& dy) {
    Matrix dx = matmul_nn(dy, weight.value);
    if (weight.trainable) accumulate_tn(weight.grad, dy, cache.x);
    if (bias.trainable && !bias.value.empty()) {
      for (std::size_t i = 0; i < dy.rows(); ++i) {
        for (std::size_t o = 0; o < dy.cols(); ++o) bias.grad(0, o) += dy(i, o);
      }
    }
    if (has_lora()) {
      Matrix dh = matmul_nn(dy, lora_b.value);  // T × rank
      accumulate_tn(lora_b.grad, dy, cache.h, scale);
      accumulate_tn(lora_a.grad, dh, cache.x, scale);
      add_inplace(dx, matmul_nn(dh, lora_a.value), scale);
    }
    return dx;
  }

  template <class F>
  void visit(F&& f) {
    f(weight);
    if (!bias.value.empty()) f(bias);
    if (has_lora()) {
      f(lora_a);
      f(lora_b);
    }
  }
};

/// Row-wise RMS normalization with a per-feature gain.
struct RmsNorm {
  Param gain;  // 1 × d
  double eps = 1e-5;

  struct Cache {
    Matrix x;
    std::vector<double> inv_rms;
  };

  RmsNorm() = default;
  RmsNorm(const std::string& name, std::size_t d, bool trainable) : gain(name + ".gain", 1, d, trainable) { gain.value.fill(1.0); }

  Matrix forward(const Matrix& x, Cache* cache) const {
    Matrix y(x.rows(), x.cols());
    std::vector<double> inv(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto xi = x.row(i);
      const double ms = dot(xi, xi) / static_cast<double>(xi.size());
      inv[i] = 1.0 / std::sqrt(ms + eps);
      for (std::size_t j = 0; j < xi.size(); ++j) y(i, j) = xi[j] * inv[i] * gain.value(0, j);
    }
    if (cache != nullptr) {
      cache->x = x;
      cache->inv_rms = std::move(inv);
    }
    return y;
  }

  Matrix backward(const Cache& cache, const Matrix& dy) {
    const Matrix& x = cache.x;
    const double d = static_cast<double>(x.cols());
    Matrix dx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double r = cache.inv_rms[i];
      double proj = 0.0;  // Σ g_j dy_j x_j
      for (std::size_t j = 0; j < x.cols(); ++j) proj += gain.value(0, j) * dy(i, j) * x(i, j);
      for (std::size_t j = 0; j < x.cols(); ++j) {
        dx(i, j) = gain.value(0, j) * dy(i, j) * r - x(i, j) * r * r * r * proj / d;
        if (gain.trainable) gain.grad(0, j) += dy(i, j) * x(i, j) * r;
      }
    }
    return dx;
  }

  template <class F>
  void visit(F&& f) {
    f(gain);
  }
};

inline double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

struct FeedForward {
  Linear up;
  Linear down;

  struct Cache {
    Linear::Cache up;
    Matrix pre;
    Linear::Cache down;
  };

  FeedForward() = default;
  FeedForward(const std::string& name, std::size_t d, std::size_t hidden, bool weights_trainable, std::size_t lora_rank,
              double lora_alpha, bool with_bias)
      : up(name + ".up", d, hidden, weights_trainable, with_bias, lora_rank, lora_alpha),
        down(name + ".down", hidden, d, weights_trainable, with_bias, lora_rank, lora_alpha) {}

  Matrix forward(const Matrix& x, Cache* cache) const {
    Matrix pre = up.forward(x, cache ? &cache->up : nullptr);
    Matrix act(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) act.data()[i] = gelu(pre.data()[i]);
    Matrix y = down.forward(act, cache ? &cache->down : nullptr);
    if (cache != nullptr) cache->pre = std::move(pre);
    return y;
  }

  Matrix backward(const Cache& cache, const Matrix& dy) {
    Matrix dact = down.backward(cache.down, dy);
    for (std::size_t i = 0; i < dact.size(); ++i) dact.data()[i] *= gelu_grad(cache.pre.data()[i]);
    return up.backward(cache.up, dact);
  }

  template <class F>
  void visit(F&& f) {
    up.visit(f);
    down.visit(f);
  }
};

/// Multi-head self-attention. `causal` restricts position i to keys j ≤ i;
/// `rotary` applies rotary position embeddings to queries and keys.
struct Attention {
  Linear q, k, v, o;
  std::size_t heads = 1;
  bool causal = true;
  bool rotary = true;

  struct Cache {
    Linear::Cache q, k, v, o;
    Matrix qr, kr, vv;           // post-rotary queries/keys, values
    std::vector<Matrix> probs;   // per head, T × T
  };

  Attention() = default;
  Attention(const std::string& name, std::size_t d, std::size_t n_heads, bool is_causal, bool use_rotary,
            bool weights_trainable, std::size_t lora_rank, double lora_alpha)
      : q(name + ".q", d, d, weights_trainable, false, lora_rank, lora_alpha),
        k(name + ".k", d, d, weights_trainable, false, lora_rank, lora_alpha),
        v(name + ".v", d, d, weights_trainable, false, lora_rank, lora_alpha),
        o(name + ".o", d, d, weights_trainable, false, lora_rank, lora_alpha),
        heads(n_heads),
        causal(is_causal),
        rotary(use_rotary) {}

  std::size_t head_dim() const { return q.out_features() / heads; }

  // Rotates each (2i, 2i+1) pair of every head at position p by p·θ_i
  // (or by −p·θ_i when `inverse`).
  void rotate(Matrix& m, bool inverse) const {
    const std::size_t hd = head_dim();
    for (std::size_t p = 0; p < m.rows(); ++p) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i + 1 < hd; i += 2) {
          const double theta = static_cast<double>(p) * std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(hd));
          const double c = std::cos(theta);
          const double s = inverse ? -std::sin(theta) : std::sin(theta);
          double& a = m(p, h * hd + i);
          double& b = m(p, h * hd + i + 1);
          const double a0 = a;
          const double b0 = b;
          a = a0 * c - b0 * s;
          b = a0 * s + b0 * c;
        }
      }
    }
  }

  Matrix forward(const Matrix& x, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    const std::size_t t_len = x.rows();
    const std::size_t hd = head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    c.qr = q.forward(x, &c.q);
    c.kr = k.forward(x, &c.k);
    c.vv = v.forward(x, &c.v);
    if (rotary) {
      rotate(c.qr, false);
      rotate(c.kr, false);
    }

    Matrix ctx(t_len, q.out_features());
    c.probs.assign(heads, Matrix(t_len, t_len));
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix& prob = c.probs[h];
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < t_len; ++i) {
        const std::size_t limit = causal ? i + 1 : t_len;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += c.qr(i, off + e) * c.kr(j, off + e);
          s *= inv_sqrt;
          prob(i, j) = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          prob(i, j) = std::exp(prob(i, j) - mx);
          z += prob(i, j);
        }
        for (std::size_t j = 0; j < limit; ++j) {
          prob(i, j) /= z;
          const double pij = prob(i, j);
          for (std::size_t e = 0; e < hd; ++e) ctx(i, off + e) += pij * c.vv(j, off + e);
        }
      }
    }
    return o.forward(ctx, &c.o);
  }

  Matrix backward(const Cache& c, const Matrix& dy) {
    const std::size_t t_len = dy.rows();
    const std::size_t hd = head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    Matrix dctx = o.backward(c.o, dy);
    Matrix dq(t_len, q.out_features());
    Matrix dk(t_len, k.out_features());
    Matrix dv(t_len, v.out_features());
    std::vector<double> dp(t_len);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& prob = c.probs[h];
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < t_len; ++i) {
        const std::size_t limit = causal ? i + 1 : t_len;
        double weighted = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += dctx(i, off + e) * c.vv(j, off + e);
          dp[j] = s;
          weighted += prob(i, j) * s;
          for (std::size_t e = 0; e < hd; ++e) dv(j, off + e) += prob(i, j) * dctx(i, off + e);
        }
        for (std::size_t j = 0; j < limit; ++j) {
          const double ds = prob(i, j) * (dp[j] - weighted) * inv_sqrt;
          if (ds == 0.0) continue;
          for (std::size_t e = 0; e < hd; ++e) {
            dq(i, off + e) += ds * c.kr(j, off + e);
            dk(j, off + e) += ds * c.qr(i, off + e);
          }
        }
      }
    }
    if (rotary) {
      rotate(dq, true);
      rotate(dk, true);
    }
    Matrix dx = q.backward(c.q, dq);
    add_inplace(dx, k.backward(c.k, dk));
    add_inplace(dx, v.backward(c.v, dv));
    return dx;
  }

  template <class F>
  void visit(F&& f) {
    q.visit(f);
    k.visit(f);
    v.visit(f);
    o.visit(f);
  }
};

/// Pre-norm transformer block: x + attn(norm(x)), then + ffn(norm(·)).
struct Block {
  RmsNorm attn_norm;
  Attention attn;
  RmsNorm ffn_norm;
  FeedForward ffn;

  struct Cache {
    RmsNorm::Cache n1;
    Attention::Cache a;
    RmsNorm::Cache n2;
    FeedForward::Cache f;
  };

  Block() = default;
  Block(const std::string& name, std::size_t d, std::size_t n_heads, std::size_t ffn_hidden, bool causal, bool rotary,
        bool weights_trainable, std::size_t lora_rank, double lora_alpha, bool ffn_bias)
      : attn_norm(name + ".attn_norm", d, weights_trainable),
        attn(name + ".attn", d, n_heads, causal, rotary, weights_trainable, lora_rank, lora_alpha),
        ffn_norm(name + ".ffn_norm", d, weights_trainable),
        ffn(name + ".ffn", d, ffn_hidden, weights_trainable, lora_rank, lora_alpha, ffn_bias) {}

  Matrix forward(const Matrix& x, Cache* cache) const {
    Matrix h = x;
    add_inplace(h, attn.forward(attn_norm.forward(x, cache ? &cache->n1 : nullptr), cache ? &cache->a : nullptr));
    Matrix y = h;
    add_inplace(y, ffn.forward(ffn_norm.forward(h, cache ? &cache->n2 : nullptr), cache ? &cache->f : nullptr));
    return y;
  }

  Matrix backward(const Cache& c, const Matrix& dy) {
    Matrix dh = dy;
    add_inplace(dh, ffn_norm.backward(c.n2, ffn.backward(c.f, dy)));
    Matrix dx = dh;
    add_inplace(dx, attn_norm.backward(c.n1, attn.backward(c.a, dh)));
    return dx;
  }

  template <class F>
  void visit(F&& f) {
    attn_norm.visit(f);
    attn.visit(f);
    ffn_norm.visit(f);
    ffn.visit(f);
  }
};

}  // namespace movieseq::nn
