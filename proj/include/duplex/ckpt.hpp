// Copyright (c) 2026 The Duplex Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Checkpoint container: "STT1" magic, a JSON header carrying the model
// config, dtype, optional train state and the tensor table, then raw
// little-endian tensor payloads. The header records an FNV-1a checksum
// of the payload; any mismatch refuses to load.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "duplex/common.hpp"
#include "duplex/model.hpp"
#include "duplex/nn/layers.hpp"

namespace duplex {

/// Loop bookkeeping that must survive a stop/resume cycle bit-exactly.
struct TrainStateBlob {
  std::int64_t global_update = 0;
  int micro_step = 0;
  std::int64_t stage_index = 0;
  std::int64_t adam_step = 0;
  std::int64_t skipped_updates = 0;
  std::string rng_state;
  std::map<std::string, std::string> kv;  // loader positions and the like

  bool operator==(const TrainStateBlob&) const = default;
};

struct TensorEntry {
  std::string name;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t offset = 0;  // scalars into the payload, not bytes
};

/// Low-level framing. write_stt1 injects the payload checksum into the
/// header before writing; read_stt1 verifies magic and checksum.
void write_stt1(const std::string& path, const std::string& header_json,
                const std::vector<char>& payload);
struct RawCheckpoint {
  std::string header_json;
  std::vector<char> payload;
};
RawCheckpoint read_stt1(const std::string& path);

/// Header assembly/parsing, shared by both scalar widths.
std::string build_ckpt_header(const std::string& dtype,
                              const ModelConfig& config,
                              const TrainStateBlob* train,
                              const std::vector<TensorEntry>& table);
struct ParsedCkptHeader {
  std::string dtype;
  ModelConfig config;
  bool has_train = false;
  TrainStateBlob train;
  std::vector<TensorEntry> table;
};
ParsedCkptHeader parse_ckpt_header(const std::string& header_json);

template <class Scalar>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() {
  return "f32";
}
template <>
constexpr const char* dtype_name<double>() {
  return "f64";
}

template <class Scalar>
struct Checkpoint {
  ModelConfig config;
  bool has_train = false;
  TrainStateBlob train;
  std::vector<std::pair<std::string, Mat<Scalar>>> tensors;

  const Mat<Scalar>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <class Scalar>
void append_le(std::vector<char>& out, Scalar v);
template <>
inline void append_le<float>(std::vector<char>& out, float v) {
  std::uint32_t u;
  static_assert(sizeof(u) == sizeof(v));
  __builtin_memcpy(&u, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(char((u >> (8 * i)) & 0xFF));
}
template <>
inline void append_le<double>(std::vector<char>& out, double v) {
  std::uint64_t u;
  static_assert(sizeof(u) == sizeof(v));
  __builtin_memcpy(&u, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(char((u >> (8 * i)) & 0xFF));
}

template <class Scalar>
Scalar read_le(const char* p);
template <>
inline float read_le<float>(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i)
    u |= std::uint32_t(static_cast<unsigned char>(p[i])) << (8 * i);
  float f;
  __builtin_memcpy(&f, &u, 4);
  return f;
}
template <>
inline double read_le<double>(const char* p) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i)
    u |= std::uint64_t(static_cast<unsigned char>(p[i])) << (8 * i);
  double f;
  __builtin_memcpy(&f, &u, 8);
  return f;
}

}  // namespace detail

template <class Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& ckpt) {
  std::vector<TensorEntry> table;
  std::vector<char> payload;
  std::int64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    table.push_back({name, t.rows(), t.cols(), offset});
    offset += t.size();
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c)
        detail::append_le<Scalar>(payload, t(r, c));
  }
  const std::string header =
      build_ckpt_header(dtype_name<Scalar>(), ckpt.config,
                        ckpt.has_train ? &ckpt.train : nullptr, table);
  write_stt1(path, header, payload);
}

template <class Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  RawCheckpoint raw = read_stt1(path);
  ParsedCkptHeader header = parse_ckpt_header(raw.header_json);
  if (header.dtype != dtype_name<Scalar>())
    throw Error("BadConfig", "checkpoint dtype is " + header.dtype +
                                 ", expected " + dtype_name<Scalar>());
  Checkpoint<Scalar> out;
  out.config = header.config;
  out.has_train = header.has_train;
  out.train = header.train;
  const std::int64_t total =
      static_cast<std::int64_t>(raw.payload.size() / sizeof(Scalar));
  for (const auto& e : header.table) {
    if (e.rows < 0 || e.cols < 0 || e.offset < 0 ||
        e.offset + e.rows * e.cols > total)
      throw Error("Parse", "tensor '" + e.name + "' exceeds the payload");
    Mat<Scalar> t(e.rows, e.cols);
    const char* base = raw.payload.data() + e.offset * std::int64_t(sizeof(Scalar));
    std::int64_t k = 0;
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c, ++k)
        t(r, c) = detail::read_le<Scalar>(base + k * std::int64_t(sizeof(Scalar)));
    out.tensors.emplace_back(e.name, std::move(t));
  }
  return out;
}

/// Copies every ParamStore tensor into the checkpoint as prefix+name.
template <class Scalar>
void store_params(Checkpoint<Scalar>& ckpt,
                  const nn::ParamStore<Scalar>& params,
                  const std::string& prefix = "param.") {
  for (const auto& item : params.items())
    ckpt.tensors.emplace_back(prefix + item.node()->name, item.value());
}

/// Restores every ParamStore tensor from the checkpoint, shape checked.
/// Throws MissingParam when the checkpoint lacks one.
template <class Scalar>
void load_params(const Checkpoint<Scalar>& ckpt,
                 nn::ParamStore<Scalar>& params,
                 const std::string& prefix = "param.") {
  for (const auto& name : params.names()) {
    const Mat<Scalar>* t = ckpt.find(prefix + name);
    if (!t)
      throw Error("MissingParam",
                  "checkpoint lacks tensor '" + prefix + name + "'");
    auto& dest = params.at(name).value();
    if (t->rows() != dest.rows() || t->cols() != dest.cols())
      throw Error("ShapeMismatch",
                  "checkpoint tensor '" + name + "' has wrong shape");
    dest = *t;
  }
}

}  // namespace duplex
