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

#include "duplex/text.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

namespace duplex {

// ---------------------------------------------------------------------------
// UTF-8
// ---------------------------------------------------------------------------

std::vector<char32_t> utf8_decode(const std::string& s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    char32_t cp = 0;
    int extra = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c >> 5) == 0x6) {
      cp = c & 0x1F;
      extra = 1;
    } else if ((c >> 4) == 0xE) {
      cp = c & 0x0F;
      extra = 2;
    } else if ((c >> 3) == 0x1E) {
      cp = c & 0x07;
      extra = 3;
    } else {
      throw Error("Parse", "malformed UTF-8 at byte " + std::to_string(i));
    }
    if (i + extra >= s.size())
      throw Error("Parse", "truncated UTF-8 sequence at byte " + std::to_string(i));
    for (int k = 1; k <= extra; ++k) {
      unsigned char cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2)
        throw Error("Parse", "malformed UTF-8 continuation at byte " + std::to_string(i + k));
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(cp);
    i += 1 + extra;
  }
  return out;
}

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

std::string utf8_encode(const std::vector<char32_t>& cps) {
  std::string out;
  for (char32_t cp : cps) out += utf8_encode(cp);
  return out;
}

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

Vocab Vocab::from_symbols(const std::vector<char32_t>& printable) {
  Vocab v;
  v.symbols_ = printable;
  for (std::size_t i = 0; i < printable.size(); ++i) {
    for (std::size_t j = i + 1; j < printable.size(); ++j) {
      if (printable[i] == printable[j])
        throw Error("DuplicateId", "duplicate symbol in vocab: '" +
                                       utf8_encode(printable[i]) + "'");
    }
  }
  return v;
}

Vocab Vocab::from_symbols(const std::string& printable_utf8) {
  return from_symbols(utf8_decode(printable_utf8));
}

namespace {
const char* kSpecialTags[Vocab::kNumSpecials] = {"<blank>", "<pad>", "<bos>",
                                                 "<eos>"};
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("Io", "cannot open vocab file " + path);
  std::vector<char32_t> printable;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno < kNumSpecials) {
      if (line != kSpecialTags[lineno])
        throw Error("Parse", "vocab line " + std::to_string(lineno) +
                                 " must be " + kSpecialTags[lineno]);
    } else {
      auto cps = utf8_decode(line);
      if (cps.size() != 1)
        throw Error("Parse", "vocab line " + std::to_string(lineno) +
                                 " must hold exactly one symbol");
      printable.push_back(cps[0]);
    }
    ++lineno;
  }
  if (lineno < kNumSpecials)
    throw Error("Parse", "vocab file is missing the special tag lines");
  return from_symbols(printable);
}

void Vocab::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("Io", "cannot write vocab file " + path);
  for (const char* tag : kSpecialTags) f << tag << "\n";
  for (char32_t cp : symbols_) f << utf8_encode(cp) << "\n";
}

int Vocab::id_of(char32_t cp) const {
  for (std::size_t i = 0; i < symbols_.size(); ++i)
    if (symbols_[i] == cp) return static_cast<int>(i) + kNumSpecials;
  return -1;
}

char32_t Vocab::symbol_of(int id) const {
  if (id < kNumSpecials || id >= size())
    throw Error("InvalidId", "id " + std::to_string(id) +
                                 " is not a printable symbol id");
  return symbols_[static_cast<std::size_t>(id - kNumSpecials)];
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace {

bool is_space_cp(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' ||
         c == U'\v' || c == 0x00A0;
}

bool is_punct_cp(char32_t c) {
  // ASCII punctuation.
  if ((c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
      (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E))
    return true;
  // Common Arabic punctuation: comma, semicolon, question mark, tatweel.
  if (c == 0x060C || c == 0x061B || c == 0x061F || c == 0x0640) return true;
  // General punctuation block quotes/dashes.
  if (c >= 0x2010 && c <= 0x2027) return true;
  if (c == 0x00A1 || c == 0x00BF || c == 0x00AB || c == 0x00BB) return true;
  return false;
}

bool is_diacritic_cp(char32_t c) {
  // Arabic combining marks (fathatan..sukun) plus superscript alef.
  return (c >= 0x064B && c <= 0x0652) || c == 0x0670;
}

}  // namespace

std::string normalize(const std::string& text, const NormalizeOpts& opts) {
  std::vector<char32_t> cps = utf8_decode(text);
  std::vector<char32_t> out;
  out.reserve(cps.size());
  for (char32_t c : cps) {
    if (opts.strip_diacritics && is_diacritic_cp(c)) continue;
    if (opts.strip_punct && is_punct_cp(c)) continue;
    if (opts.lowercase && c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
    out.push_back(c);
  }
  if (opts.strip_punct) {
    // Collapse whitespace runs and trim so removed tokens do not leave
    // double spaces behind.
    std::vector<char32_t> squeezed;
    bool in_space = true;  // leading spaces dropped
    for (char32_t c : out) {
      if (is_space_cp(c)) {
        if (!in_space) squeezed.push_back(U' ');
        in_space = true;
      } else {
        squeezed.push_back(c);
        in_space = false;
      }
    }
    while (!squeezed.empty() && squeezed.back() == U' ') squeezed.pop_back();
    out = std::move(squeezed);
  }
  return utf8_encode(out);
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

TokenSeq tokenize(const std::string& text, const Vocab& vocab,
                  const TokenizeOpts& opts) {
  std::vector<char32_t> cps = utf8_decode(text);
  if (static_cast<int>(cps.size()) > opts.max_len) {
    if (!opts.truncate)
      throw Error("TooLong", "text has " + std::to_string(cps.size()) +
                                 " characters, limit is " +
                                 std::to_string(opts.max_len));
    cps.resize(static_cast<std::size_t>(opts.max_len));
  }
  TokenSeq seq;
  seq.ids.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    int id = vocab.id_of(cps[i]);
    if (id < 0)
      throw Error("UnknownSymbol", "character '" + utf8_encode(cps[i]) +
                                       "' at position " + std::to_string(i) +
                                       " is not in the vocabulary");
    seq.ids.push_back(id);
  }
  return seq;
}

std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  std::vector<char32_t> cps;
  cps.reserve(seq.ids.size());
  for (int id : seq.ids) {
    if (id < 0 || id >= vocab.size())
      throw Error("InvalidId", "token id " + std::to_string(id) +
                                   " out of range for vocab of size " +
                                   std::to_string(vocab.size()));
    if (vocab.is_special(id)) continue;
    cps.push_back(vocab.symbol_of(id));
  }
  return utf8_encode(cps);
}

// ---------------------------------------------------------------------------
// Edit distance / error rates
// ---------------------------------------------------------------------------

template <class Seq>
EditStats edit_distance(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  // Full DP table with backtrace; metric sequences are short.
  std::vector<std::vector<std::int32_t>> d(n + 1,
                                           std::vector<std::int32_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<std::int32_t>(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<std::int32_t>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      std::int32_t sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      std::int32_t del = d[i - 1][j] + 1;
      std::int32_t ins = d[i][j - 1] + 1;
      d[i][j] = std::min({sub, del, ins});
    }
  }
  EditStats st;
  st.distance = d[n][m];
  // Backtrace for the S/I/D decomposition.
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] &&
        ref[i - 1] == hyp[j - 1]) {
      --i;
      --j;
    } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
      ++st.substitutions;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++st.deletions;
      --i;
    } else {
      ++st.insertions;
      --j;
    }
  }
  return st;
}

template EditStats edit_distance(const std::vector<char32_t>&,
                                 const std::vector<char32_t>&);
template EditStats edit_distance(const std::vector<std::string>&,
                                 const std::vector<std::string>&);
template EditStats edit_distance(const std::string&, const std::string&);
template EditStats edit_distance(const std::vector<int>&,
                                 const std::vector<int>&);

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> words;
  std::string cur;
  for (char32_t cp : utf8_decode(s)) {
    if (is_space_cp(cp)) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur += utf8_encode(cp);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

}  // namespace

double error_rate(const std::vector<std::string>& refs,
                  const std::vector<std::string>& hyps, ErrorUnit unit,
                  const NormalizeOpts& norm_opts) {
  if (refs.size() != hyps.size() || refs.empty())
    throw Error("LengthMismatch",
                "refs (" + std::to_string(refs.size()) + ") and hyps (" +
                    std::to_string(hyps.size()) + ") must be equal and non-empty");
  std::int64_t dist = 0;
  std::int64_t ref_len = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    std::string r = normalize(refs[i], norm_opts);
    std::string h = normalize(hyps[i], norm_opts);
    if (unit == ErrorUnit::Word) {
      auto rw = split_words(r);
      auto hw = split_words(h);
      dist += edit_distance(rw, hw).distance;
      ref_len += static_cast<std::int64_t>(rw.size());
    } else {
      auto rc = utf8_decode(r);
      auto hc = utf8_decode(h);
      dist += edit_distance(rc, hc).distance;
      ref_len += static_cast<std::int64_t>(rc.size());
    }
  }
  if (ref_len == 0)
    throw Error("EmptyReference", "total reference length is zero");
  return static_cast<double>(dist) / static_cast<double>(ref_len);
}

}  // namespace duplex
