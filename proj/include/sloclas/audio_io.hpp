#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sloclas/binary_io.hpp"
#include "sloclas/error.hpp"

namespace sloclas {

/// Channel-major sample storage: row c is channel c, contiguous in memory.
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AudioClip {
  SampleMatrix samples;  // channels x num_samples
  int sample_rate_hz = 48000;

  AudioClip() = default;
  AudioClip(SampleMatrix s, int rate) : samples(std::move(s)), sample_rate_hz(rate) {}

  std::size_t channels() const { return static_cast<std::size_t>(samples.rows()); }
  std::size_t num_samples() const { return static_cast<std::size_t>(samples.cols()); }

  std::span<const double> channel(std::size_t c) const {
    return {samples.data() + c * num_samples(), num_samples()};
  }
  std::span<double> channel(std::size_t c) {
    return {samples.data() + c * num_samples(), num_samples()};
  }

  /// Average across channels.
  std::vector<double> mono() const {
    std::vector<double> out(num_samples(), 0.0);
    if (channels() == 0) return out;
    for (std::size_t c = 0; c < channels(); ++c) {
      auto ch = channel(c);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += ch[i];
    }
    const double inv = 1.0 / static_cast<double>(channels());
    for (double& v : out) v *= inv;
    return out;
  }

  double duration_s() const { return static_cast<double>(num_samples()) / sample_rate_hz; }

  void validate() const {
    if (sample_rate_hz <= 0) throw Error(Errc::validation, "sample rate must be positive");
    if (channels() == 0) throw Error(Errc::validation, "clip has no channels");
    if (!samples.allFinite()) throw Error(Errc::validation, "clip contains NaN or Inf samples");
  }
};

enum class WindowKind { rectangular, hamming, hann };

struct FrameSpec {
  std::size_t frame_len_samples = 960;
  std::size_t hop_samples = 480;
  WindowKind window = WindowKind::rectangular;

  void validate() const {
    if (frame_len_samples == 0 || hop_samples == 0)
      throw Error(Errc::validation, "frame length and hop must be positive");
    if (hop_samples > frame_len_samples)
      throw Error(Errc::validation, "hop must not exceed frame length");
  }
};

/// Symmetric window of length n (all ones for rectangular).
inline std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::rectangular || n < 2) return w;
  const double denom = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / denom);
    w[i] = kind == WindowKind::hamming ? 0.54 - 0.46 * c : 0.5 - 0.5 * c;
  }
  return w;
}

inline std::size_t frame_count(std::size_t length, const FrameSpec& spec) {
  if (length < spec.frame_len_samples) return 0;
  return (length - spec.frame_len_samples) / spec.hop_samples + 1;
}

/// Splits a signal into windowed frames; frame i starts at i*hop and a trailing
/// partial frame is dropped.
inline Eigen::MatrixXd frame_signal(std::span<const double> signal, const FrameSpec& spec) {
  spec.validate();
  const std::size_t n = frame_count(signal.size(), spec);
  if (n == 0) throw Error(Errc::empty_input, "signal shorter than one frame");
  const auto window = make_window(spec.window, spec.frame_len_samples);
  Eigen::MatrixXd frames(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.frame_len_samples));
  for (std::size_t f = 0; f < n; ++f) {
    const std::size_t start = f * spec.hop_samples;
    for (std::size_t j = 0; j < spec.frame_len_samples; ++j)
      frames(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(j)) = signal[start + j] * window[j];
  }
  return frames;
}

// ---------------------------------------------------------------------------
// WAV I/O

enum class WavEncoding { pcm16, float32 };

namespace detail {

constexpr std::uint16_t kWaveFormatPcm = 1;
constexpr std::uint16_t kWaveFormatFloat = 3;
constexpr std::uint16_t kWaveFormatExtensible = 0xFFFE;

}  // namespace detail

/// Reads a RIFF/WAVE file with 16/32-bit integer PCM or 32-bit float samples.
/// Integer samples are divided by the format's full scale (32768 or 2^31).
inline AudioClip read_wav(const std::filesystem::path& path) {
  using binary::read_le;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());

  const std::string where = " in " + path.string();
  if (binary::read_tag(in, "RIFF tag") != "RIFF") throw Error(Errc::format, "missing RIFF tag" + where);
  (void)read_le<std::uint32_t>(in, "RIFF size");
  if (binary::read_tag(in, "WAVE tag") != "WAVE") throw Error(Errc::format, "missing WAVE tag" + where);

  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;

  for (;;) {
    std::string id(4, '\0');
    in.read(id.data(), 4);
    if (in.gcount() != 4) throw Error(Errc::format, "no data chunk" + where);
    const auto size = read_le<std::uint32_t>(in, "chunk size");

    if (id == "fmt ") {
      if (size < 16) throw Error(Errc::format, "fmt chunk too small" + where);
      format = read_le<std::uint16_t>(in, "format tag");
      channels = read_le<std::uint16_t>(in, "channel count");
      rate = read_le<std::uint32_t>(in, "sample rate");
      (void)read_le<std::uint32_t>(in, "byte rate");
      block_align = read_le<std::uint16_t>(in, "block align");
      bits = read_le<std::uint16_t>(in, "bits per sample");
      std::uint32_t consumed = 16;
      if (format == detail::kWaveFormatExtensible && size >= 40) {
        (void)read_le<std::uint16_t>(in, "cbSize");
        (void)read_le<std::uint16_t>(in, "valid bits");
        (void)read_le<std::uint32_t>(in, "channel mask");
        format = read_le<std::uint16_t>(in, "sub-format");
        consumed += 10;
      }
      in.ignore(static_cast<std::streamsize>(size - consumed + (size & 1u)));
      have_fmt = true;
      continue;
    }

    if (id != "data") {
      in.ignore(static_cast<std::streamsize>(size + (size & 1u)));
      continue;
    }

    if (!have_fmt) throw Error(Errc::format, "data chunk before fmt chunk" + where);
    if (channels < 1 || channels > 8)
      throw Error(Errc::unsupported, std::to_string(channels) + " channels" + where);
    if (rate == 0) throw Error(Errc::format, "zero sample rate" + where);
    const bool pcm16 = format == detail::kWaveFormatPcm && bits == 16;
    const bool pcm32 = format == detail::kWaveFormatPcm && bits == 32;
    const bool f32 = format == detail::kWaveFormatFloat && bits == 32;
    if (!pcm16 && !pcm32 && !f32)
      throw Error(Errc::unsupported,
                  "encoding format=" + std::to_string(format) + " bits=" + std::to_string(bits) + where);
    const std::uint32_t bytes_per_sample = bits / 8u;
    if (block_align != channels * bytes_per_sample)
      throw Error(Errc::format, "inconsistent block align" + where);
    if (size % block_align != 0) throw Error(Errc::format, "data size not a whole number of frames" + where);

    std::vector<char> raw(size);
    in.read(raw.data(), size);
    if (in.gcount() != static_cast<std::streamsize>(size))
      throw Error(Errc::format, "truncated data chunk" + where);

    const std::size_t frames = size / block_align;
    SampleMatrix samples(channels, static_cast<Eigen::Index>(frames));
    const char* p = raw.data();
    for (std::size_t i = 0; i < frames; ++i) {
      for (std::size_t c = 0; c < channels; ++c, p += bytes_per_sample) {
        double v;
        if (pcm16) {
          std::int16_t s;
          std::memcpy(&s, p, 2);
          v = static_cast<double>(s) / 32768.0;
        } else if (pcm32) {
          std::int32_t s;
          std::memcpy(&s, p, 4);
          v = static_cast<double>(s) / 2147483648.0;
        } else {
          float s;
          std::memcpy(&s, p, 4);
          v = static_cast<double>(s);
        }
        samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) = v;
      }
    }
    AudioClip clip(std::move(samples), static_cast<int>(rate));
    if (!clip.samples.allFinite()) throw Error(Errc::format, "non-finite samples" + where);
    return clip;
  }
}

/// Writes an interleaved WAV. 16-bit output rounds x*32768 and clamps to the
/// int16 range; float output stores the samples as 32-bit IEEE floats.
inline void write_wav(const AudioClip& clip, const std::filesystem::path& path,
                      WavEncoding encoding = WavEncoding::pcm16) {
  using binary::write_le;
  clip.validate();
  if (clip.channels() > 8) throw Error(Errc::unsupported, "more than 8 channels");

  const std::uint16_t channels = static_cast<std::uint16_t>(clip.channels());
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t block_align = static_cast<std::uint16_t>(channels * bits / 8);
  const std::uint64_t data_size = static_cast<std::uint64_t>(block_align) * clip.num_samples();
  if (data_size > 0xFFFFFFFFULL - 36) throw Error(Errc::unsupported, "clip too long for RIFF");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());

  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(36 + data_size));
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, encoding == WavEncoding::pcm16 ? detail::kWaveFormatPcm : detail::kWaveFormatFloat);
  write_le<std::uint16_t>(out, channels);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * block_align);
  write_le<std::uint16_t>(out, block_align);
  write_le<std::uint16_t>(out, bits);
  out.write("data", 4);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data_size));

  std::vector<char> raw(static_cast<std::size_t>(data_size));
  char* p = raw.data();
  for (std::size_t i = 0; i < clip.num_samples(); ++i) {
    for (std::size_t c = 0; c < clip.channels(); ++c) {
      const double v = clip.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i));
      if (encoding == WavEncoding::pcm16) {
        const double q = std::clamp(std::nearbyint(v * 32768.0), -32768.0, 32767.0);
        const auto s = static_cast<std::int16_t>(q);
        std::memcpy(p, &s, 2);
        if constexpr (std::endian::native == std::endian::big) std::swap(p[0], p[1]);
        p += 2;
      } else {
        const auto s = static_cast<float>(v);
        std::memcpy(p, &s, 4);
        if constexpr (std::endian::native == std::endian::big) std::reverse(p, p + 4);
        p += 4;
      }
    }
  }
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

}  // namespace sloclas
