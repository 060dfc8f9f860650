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

#include <cstdint>
#include <string>
#include <vector>

#include "duplex/common.hpp"

namespace duplex {

// ---------------------------------------------------------------------------
// UTF-8
// ---------------------------------------------------------------------------

/// Decodes UTF-8 into codepoints. Throws Error("Parse") on malformed input.
std::vector<char32_t> utf8_decode(const std::string& s);

std::string utf8_encode(const std::vector<char32_t>& cps);
std::string utf8_encode(char32_t cp);

// ---------------------------------------------------------------------------
// Character vocabulary
// ---------------------------------------------------------------------------

/// Character vocabulary. Indices 0..3 are the specials {blank, pad, bos,
/// eos}; printable symbols follow, so a configured size of 84/98 includes
/// the four specials.
class Vocab {
 public:
  static constexpr int kBlank = 0;
  static constexpr int kPad = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;

  Vocab() = default;

  /// Builds from the printable symbol set (specials are implicit).
  static Vocab from_symbols(const std::vector<char32_t>& printable);
  static Vocab from_symbols(const std::string& printable_utf8);

  /// One symbol per line, line number = id. Specials appear as the literal
  /// tags <blank> <pad> <bos> <eos>.
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(symbols_.size()) + kNumSpecials; }
  int blank_id() const { return kBlank; }
  int pad_id() const { return kPad; }
  int bos_id() const { return kBos; }
  int eos_id() const { return kEos; }

  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  /// Id of a printable symbol, or -1 when absent.
  int id_of(char32_t cp) const;

  /// Printable symbol for an id; throws Error("InvalidId") for specials or
  /// out-of-range ids.
  char32_t symbol_of(int id) const;

  const std::vector<char32_t>& printable() const { return symbols_; }

 private:
  std::vector<char32_t> symbols_;
};

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct NormalizeOpts {
  bool lowercase = false;
  bool strip_punct = false;
  bool strip_diacritics = false;
};

/// Text normalization used for training text and metric references.
/// Idempotent for fixed opts. strip_punct also collapses whitespace runs
/// and trims the ends; strip_diacritics removes the Arabic combining marks
/// U+064B..U+0652 and the superscript alef U+0670.
std::string normalize(const std::string& text, const NormalizeOpts& opts);

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

struct TokenizeOpts {
  int max_len = 600;      // maximum token count
  bool truncate = false;  // truncate instead of erroring past max_len
};

struct TokenSeq {
  std::vector<int> ids;
  int length() const { return static_cast<int>(ids.size()); }
};

/// Character tokenization. Throws Error("UnknownSymbol") naming the char
/// and position when a character is not in the vocab, Error("TooLong")
/// past opts.max_len unless opts.truncate.
TokenSeq tokenize(const std::string& text, const Vocab& vocab,
                  const TokenizeOpts& opts = {});

/// Inverse of tokenize on printable symbols; specials are dropped.
/// Throws Error("InvalidId") for out-of-range ids.
std::string detokenize(const TokenSeq& seq, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Edit distance / error rates
// ---------------------------------------------------------------------------

struct EditStats {
  std::int64_t substitutions = 0;
  std::int64_t insertions = 0;
  std::int64_t deletions = 0;
  std::int64_t distance = 0;  // = S + I + D
};

/// Levenshtein distance with unit weights plus an S/I/D decomposition.
template <class Seq>
EditStats edit_distance(const Seq& ref, const Seq& hyp);

enum class ErrorUnit { Word, Char };

/// Sum of edit distances over sum of reference lengths, computed after
/// normalize() with norm_opts. May exceed 1.0. Throws
/// Error("LengthMismatch") and Error("EmptyReference").
double error_rate(const std::vector<std::string>& refs,
                  const std::vector<std::string>& hyps, ErrorUnit unit,
                  const NormalizeOpts& norm_opts = {});

}  // namespace duplex
