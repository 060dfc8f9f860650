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

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "doctest.h"
#include "duplex/audio.hpp"

using namespace duplex;

namespace {

std::string temp_path(const char* stem) {
  return std::string("/tmp/duplex_test_") + stem;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
}
void put_u16(std::string& s, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
}

void write_pcm16_wav(const std::string& path,
                     const std::vector<std::int16_t>& samples, int rate,
                     int channels) {
  std::string data;
  for (std::int16_t v : samples)
    put_u16(data, static_cast<std::uint16_t>(v));
  std::string body;
  body += "WAVEfmt ";
  put_u32(body, 16);
  put_u16(body, 1);  // PCM
  put_u16(body, static_cast<std::uint16_t>(channels));
  put_u32(body, static_cast<std::uint32_t>(rate));
  put_u32(body, static_cast<std::uint32_t>(rate * channels * 2));
  put_u16(body, static_cast<std::uint16_t>(channels * 2));
  put_u16(body, 16);
  body += "data";
  put_u32(body, static_cast<std::uint32_t>(data.size()));
  body += data;
  std::string file = "RIFF";
  put_u32(file, static_cast<std::uint32_t>(body.size()));
  file += body;
  std::ofstream os(path, std::ios::binary);
  os.write(file.data(), static_cast<std::streamsize>(file.size()));
}

Waveform make_tone(double freq, double amp, int len, int rate = 16000) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(len));
  for (int n = 0; n < len; ++n)
    w.samples[static_cast<std::size_t>(n)] = static_cast<float>(
        amp * std::sin(2.0 * M_PI * freq * n / rate));
  return w;
}

// Argmax FFT bin of a 4096-point window starting at sample 2000.
int dominant_bin(const Waveform& w) {
  const int n = 4096;
  REQUIRE(w.samples.size() >= static_cast<std::size_t>(2000 + n));
  std::vector<float> seg(w.samples.begin() + 2000,
                         w.samples.begin() + 2000 + n);
  Eigen::FFT<float> fft;
  std::vector<std::complex<float>> spec;
  fft.fwd(spec, seg);
  int best = 1;
  for (int k = 1; k < n / 2; ++k)
    if (std::abs(spec[static_cast<std::size_t>(k)]) >
        std::abs(spec[static_cast<std::size_t>(best)]))
      best = k;
  return best;
}

}  // namespace

TEST_SUITE_BEGIN("audiofront");

TEST_CASE("load pcm16 silence") {
  std::string path = temp_path("silence.wav");
  write_pcm16_wav(path, std::vector<std::int16_t>(16000, 0), 16000, 1);
  Waveform w = load_wav(path);
  CHECK(w.samples.size() == 16000);
  CHECK(w.sample_rate == 16000);
  for (float s : w.samples) CHECK(s == 0.0f);
  std::remove(path.c_str());
}

TEST_CASE("pcm16 to float is divide by 32768") {
  std::string path = temp_path("square.wav");
  write_pcm16_wav(path, {32767, -32768, 0, 16384}, 16000, 1);
  Waveform w = load_wav(path);
  REQUIRE(w.samples.size() == 4);
  CHECK(w.samples[0] == 32767.0f / 32768.0f);
  CHECK(w.samples[1] == -1.0f);
  CHECK(w.samples[2] == 0.0f);
  CHECK(w.samples[3] == 0.5f);
  std::remove(path.c_str());
}

TEST_CASE("stereo is rejected unless downmixed") {
  std::string path = temp_path("stereo.wav");
  write_pcm16_wav(path, {1000, 3000, -2000, -4000}, 16000, 2);
  CHECK_THROWS_AS(load_wav(path), Error);
  try {
    load_wav(path);
  } catch (const Error& e) {
    CHECK(e.kind() == "UnsupportedFormat");
  }
  LoadWavOpts opts;
  opts.downmix = true;
  Waveform w = load_wav(path, opts);
  REQUIRE(w.samples.size() == 2);
  CHECK(w.samples[0] == doctest::Approx(2000.0f / 32768.0f));
  CHECK(w.samples[1] == doctest::Approx(-3000.0f / 32768.0f));
  std::remove(path.c_str());
}

TEST_CASE("sample rate mismatch is rejected unless resampling") {
  std::string path = temp_path("8k.wav");
  write_pcm16_wav(path, std::vector<std::int16_t>(8000, 100), 8000, 1);
  CHECK_THROWS_AS(load_wav(path), Error);
  try {
    load_wav(path);
  } catch (const Error& e) {
    CHECK(e.kind() == "SampleRateMismatch");
  }
  LoadWavOpts opts;
  opts.resample = true;
  Waveform w = load_wav(path, opts);
  CHECK(w.sample_rate == 16000);
  CHECK(w.samples.size() >= 15900);
  CHECK(w.samples.size() <= 16100);
  std::remove(path.c_str());
}

TEST_CASE("save wav round trip") {
  Waveform w = make_tone(440.0, 0.4, 800);
  std::string path = temp_path("roundtrip.wav");
  save_wav(path, w);
  Waveform r = load_wav(path);
  REQUIRE(r.samples.size() == w.samples.size());
  float max_err = 0.0f;
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    max_err = std::max(max_err, std::abs(r.samples[i] - w.samples[i]));
  CHECK(max_err <= 1.0f / 32768.0f);
  std::remove(path.c_str());
}

TEST_CASE("missing file raises Io") {
  CHECK_THROWS_AS(load_wav("/nonexistent/x.wav"), Error);
  try {
    load_wav("/nonexistent/x.wav");
  } catch (const Error& e) {
    CHECK(e.kind() == "Io");
  }
}

TEST_CASE("logmel of silence is the log floor") {
  Waveform w;
  w.samples.assign(16000, 0.0f);
  MelConfig cfg;
  MelSpec mel = logmel(w, cfg);
  CHECK(mel.cols() == 80);
  const float target = std::log(static_cast<float>(cfg.log_floor));
  for (int t = 0; t < mel.rows(); ++t)
    for (int m = 0; m < mel.cols(); ++m)
      CHECK(mel.frames(t, m) == doctest::Approx(target));
}

TEST_CASE("frame count formula") {
  MelConfig cfg;
  CHECK(mel_frame_count(16000, cfg) == 98);
  CHECK(mel_frame_count(400, cfg) == 1);
  CHECK(mel_frame_count(399, cfg) == 0);
  CHECK(mel_frame_count(560, cfg) == 2);
  Waveform w = make_tone(440.0, 0.3, 16000);
  CHECK(logmel(w, cfg).rows() == 98);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    int len = 400 + static_cast<int>(rng.below(30000));
    Waveform x = make_tone(300.0, 0.2, len);
    CHECK(logmel(x, cfg).rows() == 1 + (len - 400) / 160);
  }
}

TEST_CASE("too short input") {
  Waveform w;
  w.samples.assign(100, 0.1f);
  MelConfig cfg;
  CHECK_THROWS_AS(logmel(w, cfg), Error);
}

TEST_CASE("tone argmax matches nearest mel center") {
  MelConfig cfg;
  Waveform w = make_tone(440.0, 0.5, 16000);
  MelSpec mel = logmel(w, cfg);
  auto centers = mel_center_frequencies(cfg);
  REQUIRE(centers.size() == 80);
  int expected = 0;
  for (int m = 1; m < 80; ++m)
    if (std::abs(centers[static_cast<std::size_t>(m)] - 440.0) <
        std::abs(centers[static_cast<std::size_t>(expected)] - 440.0))
      expected = m;
  for (int t = 0; t < mel.rows(); ++t) {
    int arg = 0;
    for (int m = 1; m < 80; ++m)
      if (mel.frames(t, m) > mel.frames(t, arg)) arg = m;
    CHECK(arg == expected);
  }
}

TEST_CASE("logmel values bounded below and finite") {
  MelConfig cfg;
  Rng rng(5);
  Waveform w;
  w.samples.resize(9000);
  for (auto& s : w.samples)
    s = static_cast<float>(rng.normal() * 0.2);
  MelSpec mel = logmel(w, cfg);
  const float floor_log = std::log(static_cast<float>(cfg.log_floor));
  for (int t = 0; t < mel.rows(); ++t)
    for (int m = 0; m < 80; ++m) {
      CHECK(std::isfinite(mel.frames(t, m)));
      CHECK(mel.frames(t, m) >= floor_log - 1e-6f);
    }
}

TEST_CASE("scaling the signal raises every frame peak") {
  MelConfig cfg;
  Waveform w = make_tone(523.0, 0.2, 8000);
  Waveform w2 = w;
  for (auto& s : w2.samples) s *= 3.0f;
  MelSpec a = logmel(w, cfg), b = logmel(w2, cfg);
  for (int t = 0; t < a.rows(); ++t)
    CHECK(b.frames.row(t).maxCoeff() > a.frames.row(t).maxCoeff());
}

TEST_CASE("logmel shift covariance") {
  MelConfig cfg;
  Waveform base = make_tone(700.0, 0.4, 16160);
  Rng rng(9);
  for (auto& s : base.samples)
    s += static_cast<float>(rng.normal() * 0.05);
  Waveform shifted;
  shifted.sample_rate = 16000;
  shifted.samples.assign(base.samples.begin() + 160, base.samples.end());
  MelSpec full = logmel(base, cfg), cut = logmel(shifted, cfg);
  REQUIRE(cut.rows() == full.rows() - 1);
  for (int t = 0; t < cut.rows(); ++t)
    for (int m = 0; m < 80; ++m)
      CHECK(cut.frames(t, m) ==
            doctest::Approx(full.frames(t + 1, m)).epsilon(1e-5));
}

TEST_CASE("griffin lim silence and length") {
  MelConfig cfg;
  Waveform w;
  w.samples.assign(16000, 0.0f);
  MelSpec mel = logmel(w, cfg);
  Waveform rec = griffin_lim(mel, cfg, 5, 1);
  CHECK(rec.samples.size() ==
        static_cast<std::size_t>((mel.rows() - 1) * cfg.hop + cfg.win));
  double rms = 0.0;
  for (float s : rec.samples) rms += double(s) * double(s);
  rms = std::sqrt(rms / static_cast<double>(rec.samples.size()));
  CHECK(rms < 1e-3);

  Waveform zero_iter = griffin_lim(mel, cfg, 0, 1);
  CHECK(zero_iter.samples.size() == rec.samples.size());
}

TEST_CASE("griffin lim rejects non-finite input") {
  MelConfig cfg;
  MelSpec mel;
  mel.frames = MatF::Zero(10, 80);
  mel.frames(3, 7) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(griffin_lim(mel, cfg, 5, 1), Error);
}

TEST_CASE("griffin lim tone round trip") {
  MelConfig cfg;
  Waveform tone = make_tone(440.0, 0.5, 16000);
  MelSpec mel = logmel(tone, cfg);
  Waveform rec = griffin_lim(mel, cfg, 60, 1);

  int src_bin = dominant_bin(tone);
  int rec_bin = dominant_bin(rec);
  CHECK(std::abs(src_bin - rec_bin) <= 1);

  MelSpec mel2 = logmel(rec, cfg);
  REQUIRE(mel2.rows() == mel.rows());
  double sum_abs = 0.0;
  for (int t = 0; t < mel.rows(); ++t)
    for (int m = 0; m < 80; ++m)
      sum_abs += std::abs(double(mel2.frames(t, m)) - double(mel.frames(t, m)));
  double mean_abs = sum_abs / (double(mel.rows()) * 80.0);
  CHECK(mean_abs <= 1.0);
}

TEST_CASE("mel cache file round trip") {
  MelConfig cfg;
  Waveform tone = make_tone(880.0, 0.3, 6400);
  MelSpec mel = logmel(tone, cfg);
  std::string path = temp_path("cache.mel");
  save_mel(path, mel);
  MelSpec back = load_mel(path);
  REQUIRE(back.rows() == mel.rows());
  REQUIRE(back.cols() == mel.cols());
  for (int t = 0; t < mel.rows(); ++t)
    for (int m = 0; m < 80; ++m)
      CHECK(back.frames(t, m) == mel.frames(t, m));
  std::remove(path.c_str());
}

TEST_CASE("mel config validation") {
  MelConfig cfg;
  cfg.hop = 500;  // hop > win
  CHECK_THROWS_AS(cfg.validate(), Error);
  MelConfig cfg2;
  cfg2.fmax = 9000.0;  // above Nyquist
  CHECK_THROWS_AS(cfg2.validate(), Error);
}

TEST_SUITE_END();
