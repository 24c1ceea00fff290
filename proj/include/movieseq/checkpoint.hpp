#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "movieseq/encoders.hpp"
#include "movieseq/error.hpp"
#include "movieseq/lm.hpp"

// Checkpoint layout (all integers little-endian u32, floats little-endian f32):
//   magic "MSQC", format version
//   header text length, header text: "key=value\n" lines (LMConfig keys, then
//     any caller extras such as run-config echo and manifest hash)
//   seed (lo, hi), step (lo, hi)
//   tensor count, then per tensor: name length, name bytes, rank, dims, data
// Optimizer moments are stored as tensors named "adam.m/<param>" and
// "adam.v/<param>".

namespace movieseq {

inline constexpr std::uint32_t kCheckpointMagic = 0x4351534D;  // "MSQC"
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainState state;
  std::map<std::string, std::string> extras;  // header keys that are not LMConfig fields
};

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  write_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFu));
  write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t read_u64(std::istream& in) {
  const std::uint64_t lo = read_u32(in);
  const std::uint64_t hi = read_u32(in);
  return lo | (hi << 32);
}

inline void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, 2);
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) write_f32(out, v);
}

inline std::pair<std::string, Matrix> read_tensor(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  if (len > (1u << 20)) throw Error(ErrorCode::kParseError, "tensor name too long");
  std::string name(len, '\0');
  in.read(name.data(), len);
  const std::uint32_t rank = read_u32(in);
  if (rank == 0 || rank > 2) throw Error(ErrorCode::kParseError, "tensor " + name + " has unsupported rank");
  std::size_t rows = 1;
  std::size_t cols = read_u32(in);
  if (rank == 2) {
    rows = cols;
    cols = read_u32(in);
  }
  Matrix m(rows, cols);
  for (double& v : m.data()) v = read_f32(in);
  return {name, std::move(m)};
}

inline std::map<std::string, std::string> parse_kv_block(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kParseError, "checkpoint header line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const TrainState& state,
                            const std::map<std::string, std::string>& extras = {}) {
  std::ostringstream header;
  for (const auto& [k, v] : state.config.to_kv()) header << k << '=' << v << '\n';
  for (const auto& [k, v] : extras) {
    if (k.find('=') != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "checkpoint extra '" + k + "' is not a single key=value line");
    }
    header << k << '=' << v << '\n';
  }
  const std::string text = header.str();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write checkpoint " + tmp);
    detail::write_u32(out, kCheckpointMagic);
    detail::write_u32(out, kCheckpointVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::write_u64(out, state.seed);
    detail::write_u64(out, state.step);
    const auto params = state.params();
    std::uint32_t count = 0;
    for (const auto* p : params) count += p->trainable ? 3 : 1;
    detail::write_u32(out, count);
    for (const auto* p : params) detail::write_tensor(out, p->name, p->value);
    for (const auto* p : params) {
      if (!p->trainable) continue;
      detail::write_tensor(out, "adam.m/" + p->name, state.adam_m.at(p->name));
      detail::write_tensor(out, "adam.v/" + p->name, state.adam_v.at(p->name));
    }
    if (!out) throw Error(ErrorCode::kIoError, "failed writing checkpoint " + tmp);
  }
  // rename is atomic on POSIX, so an interrupted save never clobbers the
  // previous epoch's checkpoint
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error(ErrorCode::kIoError, "cannot move checkpoint into " + path);
}

/// Loads a checkpoint. With `expected`, a differing LMConfig is rejected.
inline Checkpoint load_checkpoint(const std::string& path, const std::optional<LMConfig>& expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open checkpoint " + path);
  if (detail::read_u32(in) != kCheckpointMagic) throw Error(ErrorCode::kParseError, path + ": not a checkpoint");
  if (detail::read_u32(in) != kCheckpointVersion) throw Error(ErrorCode::kParseError, path + ": unsupported checkpoint version");
  const std::uint32_t text_len = detail::read_u32(in);
  std::string text(text_len, '\0');
  in.read(text.data(), text_len);
  if (!in) throw Error(ErrorCode::kParseError, path + ": truncated header");
  auto kv = detail::parse_kv_block(text);

  const LMConfig cfg = LMConfig::from_kv(kv);
  if (expected && !(*expected == cfg)) {
    throw Error(ErrorCode::kConfigMismatch, path + " was written with a different model configuration");
  }
  Checkpoint ck;
  const auto lm_keys = cfg.to_kv();
  for (auto& [k, v] : kv) {
    if (!lm_keys.contains(k)) ck.extras[k] = v;
  }

  const std::uint64_t seed = detail::read_u64(in);
  ck.state = TrainState(cfg, seed);
  ck.state.step = detail::read_u64(in);

  std::map<std::string, nn::Param*> by_name;
  for (nn::Param* p : ck.state.params()) by_name[p->name] = p;
  const std::uint32_t count = detail::read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, m] = detail::read_tensor(in);
    Matrix* target = nullptr;
    if (name.rfind("adam.m/", 0) == 0) {
      auto it = ck.state.adam_m.find(name.substr(7));
      if (it != ck.state.adam_m.end()) target = &it->second;
    } else if (name.rfind("adam.v/", 0) == 0) {
      auto it = ck.state.adam_v.find(name.substr(7));
      if (it != ck.state.adam_v.end()) target = &it->second;
    } else if (auto it = by_name.find(name); it != by_name.end()) {
      target = &it->second->value;
    }
    if (target == nullptr) throw Error(ErrorCode::kConfigMismatch, path + ": unexpected tensor " + name);
    if (target->rows() != m.rows() || target->cols() != m.cols()) {
      throw Error(ErrorCode::kConfigMismatch, path + ": tensor " + name + " has the wrong shape");
    }
    *target = std::move(m);
  }
  return ck;
}

}  // namespace movieseq
