#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace movieseq {

/// Dense row-major matrix of doubles. Rows are sequence positions throughout
/// the library, columns are features.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// y = x w^T  (x: n×in, w: out×in)
inline Matrix matmul_nt(const Matrix& x, const Matrix& w) {
  assert(x.cols() == w.cols());
  Matrix y(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      auto wo = w.row(o);
      double acc = 0.0;
      for (std::size_t k = 0; k < xi.size(); ++k) acc += xi[k] * wo[k];
      y(i, o) = acc;
    }
  }
  return y;
}

// y = a b  (a: n×m, b: m×p)
inline Matrix matmul_nn(const Matrix& a, const Matrix& b) {
  assert(a.cols() == b.rows());
  Matrix y(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      auto yi = y.row(i);
      for (std::size_t j = 0; j < bk.size(); ++j) yi[j] += aik * bk[j];
    }
  }
  return y;
}

// acc += a^T b  (a: n×p, b: n×q, acc: p×q)
inline void accumulate_tn(Matrix& acc, const Matrix& a, const Matrix& b, double scale = 1.0) {
  assert(a.rows() == b.rows() && acc.rows() == a.cols() && acc.cols() == b.cols());
  for (std::size_t n = 0; n < a.rows(); ++n) {
    auto bn = b.row(n);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double apn = a(n, p) * scale;
      if (apn == 0.0) continue;
      auto accp = acc.row(p);
      for (std::size_t q = 0; q < bn.size(); ++q) accp[q] += apn * bn[q];
    }
  }
}

inline void add_inplace(Matrix& a, const Matrix& b, double scale = 1.0) {
  assert(a.size() == b.size());
  auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += scale * bd[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity; 0 when either vector is zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

/// Parameters and optimizer moments are kept float32-representable so that
/// checkpoints (which store 32-bit floats) round-trip the training state
/// exactly.
inline double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void round_to_float(Matrix& m) {
  for (double& v : m.data()) v = round_to_float(v);
}

/// 64-bit FNV-1a, used for content hashes (seeds, checksums, manifest hashes).
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Float32 checksum of a matrix: hashes the bytes each entry would occupy in
/// a checkpoint.
inline std::uint64_t checksum(const Matrix& m) {
  std::uint64_t h = fnv1a({});
  for (double v : m.data()) {
    const float f = static_cast<float>(v);
    char bytes[sizeof(float)];
    std::memcpy(bytes, &f, sizeof(float));
    h = fnv1a({bytes, sizeof(float)}, h);
  }
  return h;
}

/// Portable Gaussian source: mt19937_64 is fully specified by the standard,
/// std::normal_distribution is not, so the transform is done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    assert(n > 0);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline void fill_gaussian(Matrix& m, Rng& rng, double stddev) {
  for (double& v : m.data()) v = round_to_float(rng.gaussian() * stddev);
}

}  // namespace movieseq
