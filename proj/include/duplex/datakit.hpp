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
// Dataset plumbing: TSV manifests, token-budget batch planning, speaker
// embedding files, and a synthetic tone-language corpus small enough to
// overfit on a desk while still exercising every task path.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "duplex/audio.hpp"
#include "duplex/common.hpp"

namespace duplex {

struct ManifestRow {
  std::string utt_id;
  std::string audio_path;
  std::string transcript;
  std::string speaker_id;
  std::string spk_emb_path;  // empty when the row carries no embedding
  double duration_s = 0.0;

  bool operator==(const ManifestRow&) const = default;
};

struct Manifest {
  std::vector<ManifestRow> rows;
  std::string base_dir;  // directory paths are resolved against

  const ManifestRow& by_id(const std::string& utt_id) const;
  /// audio_path / spk_emb_path resolved against base_dir when relative.
  std::string resolve(const std::string& path) const;
};

/// Loads and validates a tab-separated manifest. Throws Parse with the
/// offending line, DuplicateId, or MissingFile when a referenced file
/// does not exist.
Manifest load_manifest(const std::string& path);

/// Writes rows back out in the canonical column order.
void save_manifest(const Manifest& m, const std::string& path);

/// Little-endian float32 vector files for speaker embeddings.
VecF load_speaker_embedding(const std::string& path);
void save_speaker_embedding(const VecF& emb, const std::string& path);

/// Source-side length of one item in budget tokens: mel frames for
/// speech-input tasks (ASR, VC), normalized codepoint count for TTS.
std::int64_t source_length(const ManifestRow& row, TaskId task);

struct BatchPlanEntry {
  std::vector<int> rows;  // indices into Manifest::rows
};

/// Length-bucketed greedy plan: every row appears exactly once, each
/// batch's summed source length stays within max_tokens, batch order is
/// shuffled deterministically by seed. Throws ItemTooLong when a single
/// row exceeds the budget.
std::vector<BatchPlanEntry> make_batches(const Manifest& m, TaskId task,
                                         std::int64_t max_tokens,
                                         std::uint64_t seed);

/// Deterministic subsample of n rows (used to cap a task's dataset so
/// one task cannot drown out another).
Manifest subsample(const Manifest& m, std::size_t n, std::uint64_t seed);

/// Pairs of row indices (src, tgt) sharing a transcript across two
/// different speakers, for voice conversion.
std::vector<std::pair<int, int>> vc_pairs(const Manifest& m);

struct SyntheticSpec {
  int n_utts = 8;
  int n_speakers = 2;
  std::string alphabet = "abcd";  // printable symbol set, UTF-8
  int min_len = 2;
  int max_len = 6;
  double char_duration_s = 0.06;
  int d_spk = 32;
  int sample_rate = 16000;
  std::uint64_t seed = 0;
  // char -> tone frequency in Hz; empty means auto-spaced disjoint tones.
  std::map<char32_t, double> tone_map;

  void validate() const;
  /// tone_map with defaults filled in (400 + 200*i Hz per symbol).
  std::map<char32_t, double> resolved_tone_map() const;
};

/// Frequency of the always-on speaker signature drone.
double speaker_drone_hz(int speaker_index);

/// Generates WAVs, transcripts, orthonormal speaker embeddings, a
/// speakers.json profile table, and manifest.tsv under out_dir. Each
/// character becomes a fixed-duration tone; each speaker has its own
/// harmonic weights and signature drone. Byte-identical per seed.
Manifest gen_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

struct SpeakerProfile {
  std::string speaker_id;
  double drone_hz = 0.0;
  VecF embedding;
};

/// Reads speakers.json and the .emb files it references.
std::vector<SpeakerProfile> load_speaker_profiles(const std::string& dir);

/// Estimates which speaker produced the audio by comparing energy in
/// each profile's drone band of the log-mel, then mixes the stored
/// embeddings by those energies. Unit norm output.
VecF estimate_speaker_embedding(const MelSpec& mel, const MelConfig& cfg,
                                const std::vector<SpeakerProfile>& profiles);
VecF estimate_speaker_embedding(const Waveform& wave, const MelConfig& cfg,
                                const std::vector<SpeakerProfile>& profiles);

}  // namespace duplex
