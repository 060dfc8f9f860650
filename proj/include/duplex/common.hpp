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

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace duplex {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using VecF = Vec<float>;
using VecD = Vec<double>;

/// Error with a stable machine-readable kind (e.g. "UnknownSymbol", "Io").
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

enum class TaskId { ASR, TTS, VC };

inline const char* task_name(TaskId t) {
  switch (t) {
    case TaskId::ASR: return "ASR";
    case TaskId::TTS: return "TTS";
    case TaskId::VC: return "VC";
  }
  return "?";
}

inline TaskId task_from_name(const std::string& s) {
  if (s == "ASR") return TaskId::ASR;
  if (s == "TTS") return TaskId::TTS;
  if (s == "VC") return TaskId::VC;
  throw Error("UnknownTask", "no task named '" + s + "'");
}

/// Deterministic RNG. mt19937_64 plus a hand-rolled Box-Muller so that
/// sampled streams are identical across standard libraries. State
/// round-trips through text for checkpointing.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Modulo bias is irrelevant here; n is tiny relative to 2^64.
    return gen_() % n;
  }

  /// Standard normal via Box-Muller (cached spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::string save_state() const {
    std::ostringstream os;
    os << gen_ << " " << (has_spare_ ? 1 : 0) << " " << spare_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    is >> gen_ >> spare_flag >> spare_;
    if (!is) throw Error("Parse", "bad rng state string");
    has_spare_ = spare_flag != 0;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a over a byte stream; used for parameter and file hashes.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace duplex
