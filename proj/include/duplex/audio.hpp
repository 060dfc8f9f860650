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

#include <string>
#include <vector>

#include "duplex/common.hpp"

namespace duplex {

struct Waveform {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = 16000;
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct LoadWavOpts {
  bool resample = false;  // resample to 16 kHz instead of rejecting
  bool downmix = false;   // average stereo to mono instead of rejecting
};

/// Reads a RIFF WAV (PCM16 or float32). PCM16 is mapped to float by
/// dividing by 32768. Non-16kHz input is rejected unless opts.resample;
/// stereo is rejected unless opts.downmix.
Waveform load_wav(const std::string& path, const LoadWavOpts& opts = {});

/// Writes mono PCM16.
void save_wav(const std::string& path, const Waveform& wave);

/// Linear-interpolation resampler (plumbing for non-16kHz input).
Waveform resample(const Waveform& wave, int target_rate);

struct MelConfig {
  int n_fft = 1024;
  int hop = 160;           // 10 ms at 16 kHz
  int win = 400;           // 25 ms at 16 kHz
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;
  int sample_rate = 16000;

  void validate() const;
};

/// Log mel-filterbank features, one row per frame.
struct MelSpec {
  MatF frames;  // T x n_mels, natural log of floored filterbank energies
  double frame_shift_s = 0.0;
  double frame_length_s = 0.0;
  int rows() const { return static_cast<int>(frames.rows()); }
  int cols() const { return static_cast<int>(frames.cols()); }
};

/// Number of analysis frames for a signal of `len` samples: coverage is
/// 1 + floor((len - win) / hop), no centering or padding.
int mel_frame_count(std::int64_t len, const MelConfig& cfg);

/// Mel filterbank center frequencies in Hz (one per output bin).
std::vector<double> mel_center_frequencies(const MelConfig& cfg);

/// Hann-windowed STFT power -> triangular mel filterbank -> natural log
/// with floor. Throws Error("TooShort") when len < win.
MelSpec logmel(const Waveform& wave, const MelConfig& cfg);

/// Iterative phase reconstruction from a log-mel spectrogram. iters = 0
/// returns the random-phase (seeded) reconstruction. Output length is
/// (T - 1) * hop + win samples. Throws Error("NonFinite") on non-finite
/// input.
Waveform griffin_lim(const MelSpec& mel, const MelConfig& cfg, int iters,
                     std::uint64_t seed = 0);

/// Mel cache file: magic "MEL0", u32 T, u32 n_mels, then row-major
/// little-endian float32 frames.
void save_mel(const std::string& path, const MelSpec& mel);
MelSpec load_mel(const std::string& path);

}  // namespace duplex
