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

#include "duplex/audio.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

namespace duplex {

// ---------------------------------------------------------------------------
// WAV I/O
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_u32(std::istream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& f) {
  unsigned char b[2];
  f.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  f.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& f, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF)};
  f.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

Waveform load_wav(const std::string& path, const LoadWavOpts& opts) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("Io", "cannot open " + path);
  char riff[4], wave_tag[4];
  f.read(riff, 4);
  read_u32(f);  // chunk size
  f.read(wave_tag, 4);
  if (!f || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave_tag, "WAVE", 4) != 0)
    throw Error("UnsupportedFormat", path + " is not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<char> data;
  bool have_fmt = false, have_data = false;
  while (f && !(have_fmt && have_data)) {
    char id[4];
    f.read(id, 4);
    if (!f) break;
    std::uint32_t size = read_u32(f);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_u16(f);
      channels = read_u16(f);
      rate = read_u32(f);
      read_u32(f);  // byte rate
      read_u16(f);  // block align
      bits = read_u16(f);
      if (size > 16) f.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data.resize(size);
      f.read(data.data(), size);
      have_data = true;
    } else {
      f.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data)
    throw Error("UnsupportedFormat", path + " is missing fmt/data chunks");
  if (channels != 1 && !(channels == 2 && opts.downmix))
    throw Error("UnsupportedFormat",
                path + " has " + std::to_string(channels) +
                    " channels; expected mono");

  const bool pcm16 = (format == 1 && bits == 16);
  const bool f32 = (format == 3 && bits == 32);
  if (!pcm16 && !f32)
    throw Error("UnsupportedFormat",
                path + ": only PCM16 and float32 are supported");

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const std::size_t bytes_per = pcm16 ? 2 : 4;
  const std::size_t n_frames = data.size() / (bytes_per * channels);
  w.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    float acc = 0.f;
    for (int c = 0; c < channels; ++c) {
      const char* p = data.data() + (i * channels + c) * bytes_per;
      if (pcm16) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        acc += static_cast<float>(v) / 32768.0f;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += v;
      }
    }
    w.samples[i] = acc / static_cast<float>(channels);
  }
  if (w.sample_rate != 16000) {
    if (!opts.resample)
      throw Error("SampleRateMismatch",
                  path + " is " + std::to_string(w.sample_rate) +
                      " Hz; pass resample to convert to 16000");
    w = resample(w, 16000);
  }
  return w;
}

void save_wav(const std::string& path, const Waveform& wave) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("Io", "cannot write " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(wave.samples.size());
  const std::uint32_t data_bytes = n * 2;
  f.write("RIFF", 4);
  write_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  write_u32(f, 16);
  write_u16(f, 1);  // PCM
  write_u16(f, 1);  // mono
  write_u32(f, static_cast<std::uint32_t>(wave.sample_rate));
  write_u32(f, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  write_u16(f, 2);
  write_u16(f, 16);
  f.write("data", 4);
  write_u32(f, data_bytes);
  for (float s : wave.samples) {
    float c = std::min(1.0f, std::max(-1.0f, s));
    auto v = static_cast<std::int16_t>(std::lrintf(c * 32767.0f));
    write_u16(f, static_cast<std::uint16_t>(v));
  }
}

Waveform resample(const Waveform& wave, int target_rate) {
  if (wave.sample_rate == target_rate) return wave;
  Waveform out;
  out.sample_rate = target_rate;
  const double ratio =
      static_cast<double>(wave.sample_rate) / static_cast<double>(target_rate);
  const std::size_t n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(wave.samples.size()) / ratio));
  out.samples.resize(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    double src = static_cast<double>(i) * ratio;
    auto i0 = static_cast<std::size_t>(src);
    double frac = src - static_cast<double>(i0);
    float a = wave.samples[i0];
    float b = i0 + 1 < wave.samples.size() ? wave.samples[i0 + 1] : a;
    out.samples[i] = static_cast<float>((1.0 - frac) * a + frac * b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mel filterbank
// ---------------------------------------------------------------------------

void MelConfig::validate() const {
  if (!(hop <= win && win <= n_fft))
    throw Error("BadConfig", "mel config requires hop <= win <= n_fft");
  if (fmax > sample_rate / 2.0)
    throw Error("BadConfig", "fmax above Nyquist");
  if (log_floor <= 0.0) throw Error("BadConfig", "log_floor must be > 0");
}

int mel_frame_count(std::int64_t len, const MelConfig& cfg) {
  if (len < cfg.win) return 0;
  return static_cast<int>(1 + (len - cfg.win) / cfg.hop);
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Triangular filters on the HTK mel scale over FFT bins [0, n_fft/2].
MatF mel_filterbank(const MelConfig& cfg) {
  const int n_bins = cfg.n_fft / 2 + 1;
  MatF fb = MatF::Zero(n_bins, cfg.n_mels);
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));
  const double hz_per_bin =
      static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.n_fft);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m) + 1];
    const double right = edges[static_cast<std::size_t>(m) + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double hz = b * hz_per_bin;
      double wgt = 0.0;
      if (hz > left && hz < center)
        wgt = (hz - left) / (center - left);
      else if (hz >= center && hz < right)
        wgt = (right - hz) / (right - center);
      fb(b, m) = static_cast<float>(wgt);
    }
  }
  return fb;
}

VecF hann_window(int win) {
  VecF w(win);
  for (int n = 0; n < win; ++n)
    w[n] = static_cast<float>(
        0.5 - 0.5 * std::cos(2.0 * M_PI * n / static_cast<double>(win)));
  return w;
}

// Magnitude STFT, frames in rows, no centering.
MatF stft_mag(const std::vector<float>& x, const MelConfig& cfg) {
  const int T = mel_frame_count(static_cast<std::int64_t>(x.size()), cfg);
  const int n_bins = cfg.n_fft / 2 + 1;
  const VecF window = hann_window(cfg.win);
  MatF mag(T, n_bins);
  Eigen::FFT<float> fft;
  std::vector<float> buf(static_cast<std::size_t>(cfg.n_fft), 0.f);
  std::vector<std::complex<float>> spec;
  for (int t = 0; t < T; ++t) {
    const std::size_t off = static_cast<std::size_t>(t) * cfg.hop;
    for (int n = 0; n < cfg.win; ++n)
      buf[static_cast<std::size_t>(n)] = x[off + static_cast<std::size_t>(n)] * window[n];
    fft.fwd(spec, buf);
    for (int b = 0; b < n_bins; ++b)
      mag(t, b) = std::abs(spec[static_cast<std::size_t>(b)]);
  }
  return mag;
}

}  // namespace

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> centers(static_cast<std::size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m)
    centers[static_cast<std::size_t>(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (cfg.n_mels + 1));
  return centers;
}

MelSpec logmel(const Waveform& wave, const MelConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(wave.samples.size()) < cfg.win)
    throw Error("TooShort", "waveform shorter than one analysis window");
  MatF mag = stft_mag(wave.samples, cfg);
  MatF power = mag.array().square();
  MatF energies = power * mel_filterbank(cfg);  // T x n_mels
  MelSpec mel;
  mel.frames = energies.array()
                   .max(static_cast<float>(cfg.log_floor))
                   .log()
                   .matrix();
  mel.frame_shift_s = static_cast<double>(cfg.hop) / cfg.sample_rate;
  mel.frame_length_s = static_cast<double>(cfg.win) / cfg.sample_rate;
  return mel;
}

// ---------------------------------------------------------------------------
// Griffin-Lim
// ---------------------------------------------------------------------------

namespace {

// Overlap-add ISTFT with squared-window normalization.
std::vector<float> istft(const std::vector<std::vector<std::complex<float>>>& spec,
                         const MelConfig& cfg) {
  const int T = static_cast<int>(spec.size());
  const std::size_t out_len =
      static_cast<std::size_t>(T - 1) * cfg.hop + cfg.win;
  std::vector<float> out(out_len, 0.f), norm(out_len, 0.f);
  const VecF window = hann_window(cfg.win);
  Eigen::FFT<float> fft;
  std::vector<std::complex<float>> full(static_cast<std::size_t>(cfg.n_fft));
  std::vector<float> frame;
  for (int t = 0; t < T; ++t) {
    // Rebuild the full conjugate-symmetric spectrum.
    const auto& half = spec[static_cast<std::size_t>(t)];
    for (int b = 0; b <= cfg.n_fft / 2; ++b)
      full[static_cast<std::size_t>(b)] = half[static_cast<std::size_t>(b)];
    for (int b = cfg.n_fft / 2 + 1; b < cfg.n_fft; ++b)
      full[static_cast<std::size_t>(b)] =
          std::conj(half[static_cast<std::size_t>(cfg.n_fft - b)]);
    fft.inv(frame, full);
    const std::size_t off = static_cast<std::size_t>(t) * cfg.hop;
    for (int n = 0; n < cfg.win; ++n) {
      out[off + static_cast<std::size_t>(n)] +=
          frame[static_cast<std::size_t>(n)] * window[n];
      norm[off + static_cast<std::size_t>(n)] += window[n] * window[n];
    }
  }
  // Clamp the denominator near the edges where window coverage is thin;
  // the least-squares division there would amplify inconsistency noise.
  float max_norm = 0.f;
  for (float v : norm) max_norm = std::max(max_norm, v);
  const float thresh = max_norm * 0.25f;
  for (std::size_t i = 0; i < out_len; ++i)
    if (norm[i] > 0.f) out[i] /= std::max(norm[i], thresh);
  return out;
}

}  // namespace

Waveform griffin_lim(const MelSpec& mel, const MelConfig& cfg, int iters,
                     std::uint64_t seed) {
  cfg.validate();
  if (!mel.frames.allFinite())
    throw Error("NonFinite", "mel spectrogram contains non-finite values");
  const int T = mel.rows();
  const int n_bins = cfg.n_fft / 2 + 1;

  // Invert the filterbank with its transpose (columns normalized so a
  // unit mel energy spreads as a unit of linear power).
  MatF fb = mel_filterbank(cfg);  // n_bins x n_mels
  VecF col_norm = fb.colwise().sum();
  MatF inv = fb;
  for (int m = 0; m < cfg.n_mels; ++m)
    if (col_norm[m] > 1e-8f) inv.col(m) /= col_norm[m];
  MatF energies = mel.frames.array().exp().matrix();  // T x n_mels
  MatF power = energies * inv.transpose();            // T x n_bins
  MatF target_mag = power.array().max(0.f).sqrt();

  Rng rng(seed);
  std::vector<std::vector<std::complex<float>>> spec(
      static_cast<std::size_t>(T),
      std::vector<std::complex<float>>(static_cast<std::size_t>(n_bins)));
  for (int t = 0; t < T; ++t)
    for (int b = 0; b < n_bins; ++b) {
      float phase = static_cast<float>(rng.uniform() * 2.0 * M_PI);
      spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)] =
          std::polar(target_mag(t, b), phase);
    }

  std::vector<float> x = istft(spec, cfg);
  for (int it = 0; it < iters; ++it) {
    Eigen::FFT<float> fft;
    std::vector<float> buf(static_cast<std::size_t>(cfg.n_fft), 0.f);
    std::vector<std::complex<float>> frame_spec;
    const VecF window = hann_window(cfg.win);
    const int Tx = std::min<int>(T, mel_frame_count(static_cast<std::int64_t>(x.size()), cfg));
    for (int t = 0; t < Tx; ++t) {
      const std::size_t off = static_cast<std::size_t>(t) * cfg.hop;
      for (int n = 0; n < cfg.win; ++n)
        buf[static_cast<std::size_t>(n)] =
            x[off + static_cast<std::size_t>(n)] * window[n];
      fft.fwd(frame_spec, buf);
      for (int b = 0; b < n_bins; ++b) {
        std::complex<float> c = frame_spec[static_cast<std::size_t>(b)];
        float m = std::abs(c);
        spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)] =
            m > 1e-12f ? c / m * target_mag(t, b)
                       : std::complex<float>(target_mag(t, b), 0.f);
      }
    }
    x = istft(spec, cfg);
  }

  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples = std::move(x);
  float peak = 0.f;
  for (float s : out.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0f)
    for (float& s : out.samples) s /= peak;
  return out;
}

// ---------------------------------------------------------------------------
// Mel cache files
// ---------------------------------------------------------------------------

void save_mel(const std::string& path, const MelSpec& mel) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("Io", "cannot write " + path);
  f.write("MEL0", 4);
  write_u32(f, static_cast<std::uint32_t>(mel.rows()));
  write_u32(f, static_cast<std::uint32_t>(mel.cols()));
  for (int t = 0; t < mel.rows(); ++t)
    for (int m = 0; m < mel.cols(); ++m) {
      float v = mel.frames(t, m);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
}

MelSpec load_mel(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("Io", "cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "MEL0", 4) != 0)
    throw Error("UnsupportedFormat", path + " is not a MEL0 file");
  std::uint32_t T = read_u32(f);
  std::uint32_t n_mels = read_u32(f);
  MelSpec mel;
  mel.frames.resize(T, n_mels);
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t m = 0; m < n_mels; ++m) {
      float v;
      f.read(reinterpret_cast<char*>(&v), 4);
      mel.frames(t, m) = v;
    }
  if (!f) throw Error("Io", "truncated mel file " + path);
  return mel;
}

}  // namespace duplex
