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

#include "duplex/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "duplex/text.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace duplex {

namespace {

constexpr const char* kHeader =
    "utt_id\taudio_path\ttranscript\tspeaker_id\tspk_emb_path\tduration_s";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::int64_t codepoint_count(const std::string& utf8) {
  std::int64_t n = 0;
  for (unsigned char c : utf8)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

std::vector<char32_t> decode_utf8(const std::string& s) {
  std::vector<char32_t> cps;
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    char32_t cp = 0;
    int extra = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      cp = c & 0x1F;
      extra = 1;
    } else if ((c & 0xF0) == 0xE0) {
      cp = c & 0x0F;
      extra = 2;
    } else {
      cp = c & 0x07;
      extra = 3;
    }
    for (int k = 0; k < extra && i + 1 < s.size(); ++k) {
      ++i;
      cp = (cp << 6) | (s[i] & 0x3F);
    }
    ++i;
    cps.push_back(cp);
  }
  return cps;
}

std::string encode_utf8(const std::u32string& t32) {
  std::string utf8;
  for (char32_t cp : t32) {
    if (cp < 0x80) {
      utf8.push_back(char(cp));
    } else if (cp < 0x800) {
      utf8.push_back(char(0xC0 | (cp >> 6)));
      utf8.push_back(char(0x80 | (cp & 0x3F)));
    } else {
      utf8.push_back(char(0xE0 | (cp >> 12)));
      utf8.push_back(char(0x80 | ((cp >> 6) & 0x3F)));
      utf8.push_back(char(0x80 | (cp & 0x3F)));
    }
  }
  return utf8;
}

}  // namespace

const ManifestRow& Manifest::by_id(const std::string& utt_id) const {
  for (const auto& r : rows)
    if (r.utt_id == utt_id) return r;
  throw Error("InvalidId", "no manifest row with utt_id '" + utt_id + "'");
}

std::string Manifest::resolve(const std::string& path) const {
  if (path.empty() || fs::path(path).is_absolute() || base_dir.empty())
    return path;
  return (fs::path(base_dir) / path).string();
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("Io", "cannot open manifest '" + path + "'");
  Manifest m;
  m.base_dir = fs::path(path).parent_path().string();

  std::string line;
  if (!std::getline(in, line))
    throw Error("Parse", "manifest '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader)
    throw Error("Parse", "manifest header mismatch at line 1");

  std::set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 6)
      throw Error("Parse", "line " + std::to_string(lineno) + ": expected 6 "
                           "columns, got " + std::to_string(cols.size()));
    ManifestRow r;
    r.utt_id = cols[0];
    r.audio_path = cols[1];
    r.transcript = cols[2];
    r.speaker_id = cols[3];
    r.spk_emb_path = cols[4];
    try {
      std::size_t used = 0;
      r.duration_s = std::stod(cols[5], &used);
      if (used != cols[5].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error("Parse",
                  "line " + std::to_string(lineno) + ": bad duration");
    }
    if (r.utt_id.empty())
      throw Error("Parse", "line " + std::to_string(lineno) + ": empty id");
    if (!(r.duration_s > 0.0))
      throw Error("Parse",
                  "line " + std::to_string(lineno) + ": duration must be > 0");
    if (!seen.insert(r.utt_id).second)
      throw Error("DuplicateId", "utt_id '" + r.utt_id + "' repeats");
    if (!fs::exists(m.resolve(r.audio_path)))
      throw Error("MissingFile", "audio missing: " + r.audio_path);
    if (!r.spk_emb_path.empty() && !fs::exists(m.resolve(r.spk_emb_path)))
      throw Error("MissingFile", "embedding missing: " + r.spk_emb_path);
    m.rows.push_back(std::move(r));
  }
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("Io", "cannot write manifest '" + path + "'");
  out << kHeader << "\n";
  for (const auto& r : m.rows)
    out << r.utt_id << '\t' << r.audio_path << '\t' << r.transcript << '\t'
        << r.speaker_id << '\t' << r.spk_emb_path << '\t'
        << fmt_double(r.duration_s) << "\n";
  if (!out) throw Error("Io", "write failed for '" + path + "'");
}

VecF load_speaker_embedding(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("Io", "cannot open embedding '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % 4 != 0)
    throw Error("Parse", "embedding '" + path + "' is not float32 data");
  VecF v(static_cast<Eigen::Index>(bytes.size() / 4));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const unsigned char* b =
        reinterpret_cast<const unsigned char*>(bytes.data()) + 4 * i;
    std::uint32_t u = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                      (std::uint32_t(b[2]) << 16) |
                      (std::uint32_t(b[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    v[i] = f;
  }
  return v;
}

void save_speaker_embedding(const VecF& emb, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("Io", "cannot write embedding '" + path + "'");
  for (Eigen::Index i = 0; i < emb.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, &emb[i], 4);
    const char b[4] = {char(u & 0xFF), char((u >> 8) & 0xFF),
                       char((u >> 16) & 0xFF), char((u >> 24) & 0xFF)};
    out.write(b, 4);
  }
  if (!out) throw Error("Io", "write failed for '" + path + "'");
}

std::int64_t source_length(const ManifestRow& row, TaskId task) {
  if (task == TaskId::TTS)
    return codepoint_count(normalize(row.transcript, {}));
  const auto samples =
      static_cast<std::int64_t>(std::llround(row.duration_s * 16000.0));
  return mel_frame_count(samples, MelConfig{});
}

std::vector<BatchPlanEntry> make_batches(const Manifest& m, TaskId task,
                                         std::int64_t max_tokens,
                                         std::uint64_t seed) {
  std::vector<std::pair<std::int64_t, int>> items;
  items.reserve(m.rows.size());
  for (int i = 0; i < static_cast<int>(m.rows.size()); ++i) {
    const std::int64_t len = source_length(m.rows[std::size_t(i)], task);
    if (len > max_tokens)
      throw Error("ItemTooLong",
                  "utt '" + m.rows[std::size_t(i)].utt_id + "' needs " +
                      std::to_string(len) + " tokens, budget is " +
                      std::to_string(max_tokens));
    items.emplace_back(len, i);
  }
  // Length bucketing: neighbors in sorted order share a batch, so
  // padding inside one batch stays small.
  std::sort(items.begin(), items.end(),
            [&](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first < b.first;
              return m.rows[std::size_t(a.second)].utt_id <
                     m.rows[std::size_t(b.second)].utt_id;
            });

  std::vector<BatchPlanEntry> plan;
  std::int64_t used = 0;
  for (const auto& [len, idx] : items) {
    if (plan.empty() || used + len > max_tokens) {
      plan.emplace_back();
      used = 0;
    }
    plan.back().rows.push_back(idx);
    used += len;
  }

  Rng rng(seed);
  for (std::size_t i = plan.size(); i > 1; --i)
    std::swap(plan[i - 1], plan[std::size_t(rng.next_u64() % i)]);
  return plan;
}

Manifest subsample(const Manifest& m, std::size_t n, std::uint64_t seed) {
  if (n >= m.rows.size()) return m;
  std::vector<std::size_t> idx(m.rows.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[std::size_t(rng.next_u64() % i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  Manifest out;
  out.base_dir = m.base_dir;
  for (std::size_t i : idx) out.rows.push_back(m.rows[i]);
  return out;
}

std::vector<std::pair<int, int>> vc_pairs(const Manifest& m) {
  std::map<std::string, std::vector<int>> by_text;
  for (int i = 0; i < static_cast<int>(m.rows.size()); ++i)
    by_text[m.rows[std::size_t(i)].transcript].push_back(i);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [text, rows] : by_text)
    for (int a : rows)
      for (int b : rows)
        if (a != b && m.rows[std::size_t(a)].speaker_id !=
                          m.rows[std::size_t(b)].speaker_id)
          pairs.emplace_back(a, b);
  return pairs;
}

void SyntheticSpec::validate() const {
  if (n_utts < 1) throw Error("BadConfig", "n_utts must be >= 1");
  if (n_speakers < 1 || n_speakers > 4)
    throw Error("BadConfig", "n_speakers must be in [1, 4]");
  if (n_speakers > d_spk)
    throw Error("BadConfig", "need d_spk >= n_speakers for orthogonal "
                             "embeddings");
  if (alphabet.empty()) throw Error("BadConfig", "alphabet is empty");
  if (min_len < 1 || max_len < min_len)
    throw Error("BadConfig", "bad utterance length range");
  if (char_duration_s < 0.03)
    throw Error("BadConfig", "char_duration_s below one analysis window");
  if (sample_rate != 16000)
    throw Error("BadConfig", "synthetic corpus is 16 kHz only");
  const auto tones = resolved_tone_map();
  std::set<double> freqs;
  for (const auto& [cp, hz] : tones) {
    (void)cp;
    if (hz < 50.0 || hz > 4000.0)
      throw Error("BadConfig", "tone frequencies must be in [50, 4000] Hz");
    if (!freqs.insert(hz).second)
      throw Error("BadConfig", "tone_map must be injective");
  }
}

std::map<char32_t, double> SyntheticSpec::resolved_tone_map() const {
  const std::vector<char32_t> symbols = decode_utf8(alphabet);
  std::map<char32_t, double> tones = tone_map;
  int next = 0;
  for (char32_t cp : symbols) {
    if (!tones.count(cp)) tones[cp] = 400.0 + 200.0 * next;
    ++next;
  }
  return tones;
}

double speaker_drone_hz(int speaker_index) {
  return 4500.0 + 700.0 * speaker_index;
}

namespace {

Waveform render_utterance(const std::string& text,
                          const std::map<char32_t, double>& tones,
                          int speaker, const SyntheticSpec& spec) {
  const int sr = spec.sample_rate;
  const int n_char =
      static_cast<int>(std::llround(spec.char_duration_s * sr));
  // Per-speaker timbre: harmonic weights plus a high signature drone.
  const double w1 = 1.0;
  const double w2 = 0.25 + 0.20 * speaker;
  const double w3 = 0.05 + 0.10 * speaker;
  const double wd = 0.18;
  const double amp = 0.45 / (w1 + w2 + w3 + wd);
  const double f_drone = speaker_drone_hz(speaker);
  const int fade = sr / 200;  // 5 ms edge ramp per character

  Waveform w;
  w.sample_rate = sr;
  std::size_t pos = 0;
  const std::vector<char32_t> cps = decode_utf8(text);
  w.samples.resize(cps.size() * std::size_t(n_char));
  for (char32_t cp : cps) {
    const auto it = tones.find(cp);
    if (it == tones.end())
      throw Error("UnknownSymbol", "no tone for a transcript symbol");
    const double f = it->second;
    for (int n = 0; n < n_char; ++n) {
      const double t = double(n) / sr;
      const double tg = double(pos + std::size_t(n)) / sr;
      double s = w1 * std::sin(2.0 * M_PI * f * t) +
                 w2 * std::sin(2.0 * M_PI * 2.0 * f * t) +
                 w3 * std::sin(2.0 * M_PI * 3.0 * f * t) +
                 wd * std::sin(2.0 * M_PI * f_drone * tg);
      double env = 1.0;
      if (n < fade) env = double(n) / fade;
      if (n_char - 1 - n < fade) env = std::min(env, double(n_char - 1 - n) / fade);
      w.samples[pos + std::size_t(n)] = static_cast<float>(amp * env * s);
    }
    pos += std::size_t(n_char);
  }
  return w;
}

}  // namespace

Manifest gen_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  const auto tones = spec.resolved_tone_map();
  std::vector<char32_t> symbols;
  for (const auto& [cp, hz] : tones) {
    (void)hz;
    symbols.push_back(cp);
  }

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "wav", ec);
  fs::create_directories(fs::path(out_dir) / "spk", ec);
  if (ec) throw Error("Io", "cannot create corpus directories");

  Rng rng(spec.seed);

  // Distinct texts; consecutive utterances share a text across speakers
  // so voice conversion always has parallel pairs.
  const int n_texts = (spec.n_utts + spec.n_speakers - 1) / spec.n_speakers;
  std::vector<std::string> texts;
  std::set<std::string> used;
  for (int j = 0; j < n_texts; ++j) {
    std::string text;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const int len =
          spec.min_len +
          int(rng.next_u64() % std::uint64_t(spec.max_len - spec.min_len + 1));
      std::u32string t32;
      for (int k = 0; k < len; ++k)
        t32.push_back(symbols[std::size_t(rng.next_u64() % symbols.size())]);
      const std::string utf8 = encode_utf8(t32);
      if (used.insert(utf8).second) {
        text = utf8;
        break;
      }
    }
    if (text.empty())
      throw Error("BadConfig", "alphabet too small for distinct texts");
    texts.push_back(text);
  }

  // Orthonormal speaker embeddings: Gram-Schmidt over seeded Gaussians.
  MatF q(spec.d_spk, spec.n_speakers);
  for (int c = 0; c < spec.n_speakers; ++c) {
    VecF v(spec.d_spk);
    for (int r = 0; r < spec.d_spk; ++r)
      v[r] = static_cast<float>(rng.normal());
    for (int p = 0; p < c; ++p) v -= q.col(p).dot(v) * q.col(p);
    if (v.norm() < 1e-4f)
      throw Error("BadConfig", "degenerate speaker embedding draw");
    q.col(c) = v / v.norm();
  }

  nlohmann::json speakers = nlohmann::json::array();
  for (int s = 0; s < spec.n_speakers; ++s) {
    const std::string sid = "s" + std::to_string(s);
    const std::string rel = "spk/" + sid + ".emb";
    VecF emb = q.col(s);
    save_speaker_embedding(emb, (fs::path(out_dir) / rel).string());
    speakers.push_back({{"speaker_id", sid},
                        {"drone_hz", speaker_drone_hz(s)},
                        {"emb_path", rel}});
  }
  {
    std::ofstream js((fs::path(out_dir) / "speakers.json").string(),
                     std::ios::binary);
    if (!js) throw Error("Io", "cannot write speakers.json");
    js << nlohmann::json{{"speakers", speakers}}.dump(2) << "\n";
  }

  Manifest m;
  m.base_dir = out_dir;
  for (int i = 0; i < spec.n_utts; ++i) {
    const int speaker = i % spec.n_speakers;
    const std::string& text = texts[std::size_t(i / spec.n_speakers)];
    char id[16];
    std::snprintf(id, sizeof(id), "u%03d", i);
    Waveform w = render_utterance(text, tones, speaker, spec);
    const std::string rel = std::string("wav/") + id + ".wav";
    save_wav((fs::path(out_dir) / rel).string(), w);
    ManifestRow row;
    row.utt_id = id;
    row.audio_path = rel;
    row.transcript = text;
    row.speaker_id = "s" + std::to_string(speaker);
    row.spk_emb_path = "spk/s" + std::to_string(speaker) + ".emb";
    row.duration_s = w.duration_s();
    m.rows.push_back(std::move(row));
  }
  save_manifest(m, (fs::path(out_dir) / "manifest.tsv").string());
  return load_manifest((fs::path(out_dir) / "manifest.tsv").string());
}

std::vector<SpeakerProfile> load_speaker_profiles(const std::string& dir) {
  const std::string path = (fs::path(dir) / "speakers.json").string();
  std::ifstream in(path);
  if (!in) throw Error("Io", "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("speakers.json: ") + e.what());
  }
  std::vector<SpeakerProfile> out;
  for (const auto& row : j.at("speakers")) {
    SpeakerProfile p;
    p.speaker_id = row.at("speaker_id").get<std::string>();
    p.drone_hz = row.at("drone_hz").get<double>();
    p.embedding = load_speaker_embedding(
        (fs::path(dir) / row.at("emb_path").get<std::string>()).string());
    out.push_back(std::move(p));
  }
  if (out.empty()) throw Error("Parse", "speakers.json lists no speakers");
  return out;
}

VecF estimate_speaker_embedding(const MelSpec& mel, const MelConfig& cfg,
                                const std::vector<SpeakerProfile>& profiles) {
  if (profiles.empty())
    throw Error("BadConfig", "no speaker profiles to match against");
  if (mel.rows() == 0) throw Error("ShapeMismatch", "empty mel");
  const auto centers = mel_center_frequencies(cfg);

  VecF acc = VecF::Zero(profiles[0].embedding.size());
  double total = 0.0;
  for (const auto& p : profiles) {
    if (p.embedding.size() != acc.size())
      throw Error("ShapeMismatch", "speaker embedding dims disagree");
    int best = 0;
    for (int c = 1; c < int(centers.size()); ++c)
      if (std::abs(centers[std::size_t(c)] - p.drone_hz) <
          std::abs(centers[std::size_t(best)] - p.drone_hz))
        best = c;
    double energy = 0.0;
    for (int t = 0; t < mel.rows(); ++t)
      for (int c = std::max(0, best - 1);
           c <= std::min(int(centers.size()) - 1, best + 1); ++c)
        energy += std::exp(double(mel.frames(t, c)));
    acc += static_cast<float>(energy) * p.embedding;
    total += energy;
  }
  if (!(total > 0.0) || acc.norm() == 0.0f)
    throw Error("NonFinite", "speaker band energies vanished");
  return acc / acc.norm();
}

VecF estimate_speaker_embedding(const Waveform& wave, const MelConfig& cfg,
                                const std::vector<SpeakerProfile>& profiles) {
  MelSpec mel = logmel(wave, cfg);
  return estimate_speaker_embedding(mel, cfg, profiles);
}

}  // namespace duplex
