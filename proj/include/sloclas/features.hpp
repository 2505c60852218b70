#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sloclas/array_sim.hpp"
#include "sloclas/audio_io.hpp"
#include "sloclas/binary_io.hpp"
#include "sloclas/error.hpp"
#include "sloclas/fft.hpp"

namespace sloclas {

inline constexpr std::size_t kNumPairs = 6;
inline constexpr std::size_t kGccDim = 306;
inline constexpr std::size_t kMfccDim = 312;
inline constexpr std::size_t kFeatureDim = kGccDim + kMfccDim;

// Cross-spectrum bins below this magnitude are zeroed instead of whitened.
inline constexpr double kPhatEpsilon = 1e-12;

struct GccSpec {
  double segment_len_ms = 170.0;
  int max_lag = kMaxLagSamples;
  std::size_t fft_len = 0;  // 0: next power of two >= segment length

  std::size_t num_lags() const { return static_cast<std::size_t>(2 * max_lag + 1); }

  std::size_t segment_samples(int sample_rate_hz) const {
    return static_cast<std::size_t>(std::lround(segment_len_ms * sample_rate_hz / 1000.0));
  }
};

struct MfccSpec {
  double frame_ms = 20.0;
  double overlap = 0.5;
  int num_ceps = 13;
  int num_mel_filters = 26;
  double preemphasis = 0.97;
  int frames_per_segment = 8;
  int delta_radius = 2;

  std::size_t frame_samples(int sample_rate_hz) const {
    return static_cast<std::size_t>(std::lround(frame_ms * sample_rate_hz / 1000.0));
  }
  std::size_t hop_samples(int sample_rate_hz) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frame_samples(sample_rate_hz) * (1.0 - overlap))));
  }
  std::size_t dims_per_frame() const { return 3 * static_cast<std::size_t>(num_ceps); }
  std::size_t segment_dim() const { return dims_per_frame() * static_cast<std::size_t>(frames_per_segment); }

  void validate() const {
    if (num_ceps < 1 || num_mel_filters < num_ceps)
      throw Error(Errc::validation, "need 1 <= num_ceps <= num_mel_filters");
    if (frames_per_segment < 1) throw Error(Errc::validation, "frames_per_segment must be positive");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw Error(Errc::validation, "overlap must be in [0, 1)");
    if (delta_radius < 1) throw Error(Errc::validation, "delta radius must be positive");
  }
};

// ---------------------------------------------------------------------------
// GCC-PHAT

/// PHAT-weighted cross spectrum S_b * conj(S_a) / |S_b * conj(S_a)| over bins 0..n/2.
inline std::vector<Complex> phat_cross_spectrum(std::span<const double> ch_a, std::span<const double> ch_b,
                                                std::size_t fft_len) {
  const auto sa = rfft(ch_a, fft_len);
  const auto sb = rfft(ch_b, fft_len);
  std::vector<Complex> cross(sa.size());
  for (std::size_t k = 0; k < sa.size(); ++k) {
    const Complex c = sb[k] * std::conj(sa[k]);
    const double mag = std::abs(c);
    cross[k] = mag < kPhatEpsilon ? Complex{} : c / mag;
  }
  return cross;
}

/// GCC-PHAT over lags -max_lag..max_lag. Element j is the lag j - max_lag;
/// a positive lag means ch_b is a delayed copy of ch_a. Values are the
/// whitened correlation summed over all fft_len bins and divided by fft_len,
/// so they lie in [-1, 1].
inline std::vector<double> gcc_phat(std::span<const double> ch_a, std::span<const double> ch_b,
                                    const GccSpec& spec = {}) {
  if (ch_a.size() != ch_b.size()) throw Error(Errc::validation, "channel lengths differ");
  if (ch_a.size() < 2) throw Error(Errc::empty_input, "need at least 2 samples");
  const auto nonzero = [](double v) { return v != 0.0; };
  if (std::none_of(ch_a.begin(), ch_a.end(), nonzero) && std::none_of(ch_b.begin(), ch_b.end(), nonzero))
    throw Error(Errc::degenerate_input, "both channels are all-zero");

  const std::size_t n = spec.fft_len ? spec.fft_len : next_pow2(ch_a.size());
  if (n < ch_a.size()) throw Error(Errc::validation, "FFT length shorter than the input");
  if (static_cast<std::size_t>(spec.max_lag) * 2 + 1 > n) throw Error(Errc::validation, "lag range exceeds FFT length");

  const auto corr = irfft(phat_cross_spectrum(ch_a, ch_b, n), n);
  std::vector<double> out(spec.num_lags());
  for (int lag = -spec.max_lag; lag <= spec.max_lag; ++lag) {
    const std::size_t idx = lag >= 0 ? static_cast<std::size_t>(lag) : n - static_cast<std::size_t>(-lag);
    out[static_cast<std::size_t>(lag + spec.max_lag)] = corr[idx];
  }
  return out;
}

/// Lag (in samples) of the largest GCC-PHAT value; first maximum wins.
inline int gcc_peak_lag(std::span<const double> gcc) {
  const auto it = std::max_element(gcc.begin(), gcc.end());
  return static_cast<int>(it - gcc.begin()) - static_cast<int>(gcc.size() / 2);
}

// ---------------------------------------------------------------------------
// MFCC

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Centre frequencies (Hz) of the triangular filters, equally spaced in mel from 0 to Nyquist.
inline std::vector<double> mel_center_frequencies(int num_filters, int sample_rate_hz) {
  const double top = hz_to_mel(sample_rate_hz / 2.0);
  std::vector<double> centers(static_cast<std::size_t>(num_filters));
  for (int i = 0; i < num_filters; ++i) centers[static_cast<std::size_t>(i)] = mel_to_hz(top * (i + 1) / (num_filters + 1));
  return centers;
}

/// Triangular mel filterbank as a (num_filters x fft_len/2+1) weight matrix.
/// Triangles are defined on the continuous frequency axis and sampled at bin centres.
inline Eigen::MatrixXd mel_filterbank(int num_filters, std::size_t fft_len, int sample_rate_hz) {
  const double top = hz_to_mel(sample_rate_hz / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(num_filters + 2));
  for (int i = 0; i < num_filters + 2; ++i) edges[static_cast<std::size_t>(i)] = mel_to_hz(top * i / (num_filters + 1));

  const auto bins = static_cast<Eigen::Index>(fft_len / 2 + 1);
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(num_filters, bins);
  for (int m = 0; m < num_filters; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    for (Eigen::Index k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / static_cast<double>(fft_len);
      if (f > lo && f < hi) fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

/// Mel filterbank energies of one (already windowed) frame: power spectrum |X|^2/N weighted by the filters.
inline Eigen::VectorXd mel_energies(std::span<const double> frame, int sample_rate_hz, int num_filters) {
  const std::size_t n = next_pow2(frame.size());
  const auto spec = rfft(frame, n);
  Eigen::VectorXd power(static_cast<Eigen::Index>(spec.size()));
  for (std::size_t k = 0; k < spec.size(); ++k) power(static_cast<Eigen::Index>(k)) = std::norm(spec[k]) / static_cast<double>(n);
  return mel_filterbank(num_filters, n, sample_rate_hz) * power;
}

/// Orthonormal DCT-II keeping the first `num_out` coefficients.
inline Eigen::VectorXd dct2(const Eigen::VectorXd& x, int num_out) {
  const auto n = x.size();
  Eigen::VectorXd out(num_out);
  for (int i = 0; i < num_out; ++i) {
    double acc = 0.0;
    for (Eigen::Index m = 0; m < n; ++m)
      acc += x(m) * std::cos(std::numbers::pi * i * (static_cast<double>(m) + 0.5) / static_cast<double>(n));
    out(i) = acc * std::sqrt((i == 0 ? 1.0 : 2.0) / static_cast<double>(n));
  }
  return out;
}

/// Regression deltas along rows (time), radius N, edge frames replicated:
/// d[t] = sum_n n (c[t+n] - c[t-n]) / (2 sum_n n^2).
inline Eigen::MatrixXd deltas(const Eigen::MatrixXd& feats, int radius = 2) {
  const Eigen::Index frames = feats.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(frames, feats.cols());
  if (frames == 0) return out;
  double denom = 0.0;
  for (int n = 1; n <= radius; ++n) denom += 2.0 * n * n;
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (int n = 1; n <= radius; ++n) {
      const Eigen::Index ahead = std::min<Eigen::Index>(t + n, frames - 1);
      const Eigen::Index behind = std::max<Eigen::Index>(t - n, 0);
      out.row(t) += n * (feats.row(ahead) - feats.row(behind));
    }
  }
  return out / denom;
}

// Floor applied before the log so silent frames stay finite.
inline constexpr double kLogEnergyFloor = 1e-10;

/// Static cepstra for every frame of `signal`: pre-emphasis, hamming frames,
/// power spectrum, mel filterbank, log, DCT-II. Rows are frames.
inline Eigen::MatrixXd mfcc_frames(std::span<const double> signal, int sample_rate_hz, const MfccSpec& spec) {
  spec.validate();
  std::vector<double> emphasized(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i)
    emphasized[i] = signal[i] - (i > 0 ? spec.preemphasis * signal[i - 1] : 0.0);

  const FrameSpec frame_spec{spec.frame_samples(sample_rate_hz), spec.hop_samples(sample_rate_hz), WindowKind::hamming};
  const Eigen::MatrixXd frames = frame_signal(emphasized, frame_spec);
  const std::size_t n = next_pow2(frame_spec.frame_len_samples);
  const Eigen::MatrixXd fb = mel_filterbank(spec.num_mel_filters, n, sample_rate_hz);

  Eigen::MatrixXd ceps(frames.rows(), spec.num_ceps);
  std::vector<double> row(static_cast<std::size_t>(frames.cols()));
  Eigen::VectorXd power(static_cast<Eigen::Index>(n / 2 + 1));
  for (Eigen::Index f = 0; f < frames.rows(); ++f) {
    for (Eigen::Index j = 0; j < frames.cols(); ++j) row[static_cast<std::size_t>(j)] = frames(f, j);
    const auto spectrum = rfft(row, n);
    for (std::size_t k = 0; k < spectrum.size(); ++k)
      power(static_cast<Eigen::Index>(k)) = std::norm(spectrum[k]) / static_cast<double>(n);
    const Eigen::VectorXd log_mel = (fb * power).array().max(kLogEnergyFloor).log().matrix();
    ceps.row(f) = dct2(log_mel, spec.num_ceps).transpose();
  }
  return ceps;
}

/// MFCC block of one segment: static, delta and delta-delta cepstra of every
/// frame in the segment, then `frames_per_segment` evenly strided frames
/// (stride = frames / frames_per_segment) concatenated in time order.
/// Each kept frame contributes [static | delta | delta-delta].
inline std::vector<double> mfcc_segment(std::span<const double> mono, int sample_rate_hz, const MfccSpec& spec = {}) {
  spec.validate();
  const FrameSpec frame_spec{spec.frame_samples(sample_rate_hz), spec.hop_samples(sample_rate_hz), WindowKind::hamming};
  const std::size_t available = frame_count(mono.size(), frame_spec);
  const auto wanted = static_cast<std::size_t>(spec.frames_per_segment);
  if (available < wanted)
    throw Error(Errc::insufficient_input, "segment holds " + std::to_string(available) + " frames, need " +
                                              std::to_string(wanted));

  const Eigen::MatrixXd stat = mfcc_frames(mono, sample_rate_hz, spec);
  const Eigen::MatrixXd d1 = deltas(stat, spec.delta_radius);
  const Eigen::MatrixXd d2 = deltas(d1, spec.delta_radius);

  const std::size_t stride = available / wanted;
  const auto c = static_cast<std::size_t>(spec.num_ceps);
  std::vector<double> out;
  out.reserve(spec.segment_dim());
  for (std::size_t i = 0; i < wanted; ++i) {
    const auto f = static_cast<Eigen::Index>(i * stride);
    for (const Eigen::MatrixXd* block : {&stat, &d1, &d2})
      for (std::size_t j = 0; j < c; ++j) out.push_back((*block)(f, static_cast<Eigen::Index>(j)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segment fusion

/// Fused per-segment vector: 6 pairs x 51 GCC-PHAT lags followed by 8 x 39 MFCC values.
struct SegmentFeatures {
  std::vector<double> fused;
  std::size_t gcc_dim = kGccDim;

  std::span<const double> gcc() const { return {fused.data(), gcc_dim}; }
  std::span<const double> mfcc() const { return {fused.data() + gcc_dim, fused.size() - gcc_dim}; }
  std::size_t dim() const { return fused.size(); }
};

/// Features of one span of a 4-channel signal. The span must already be exactly one segment long.
inline SegmentFeatures segment_features(const AudioClip& clip, std::size_t start, std::size_t length,
                                        const GccSpec& gcc, const MfccSpec& mfcc) {
  SegmentFeatures seg;
  seg.gcc_dim = kNumPairs * gcc.num_lags();
  seg.fused.reserve(seg.gcc_dim + mfcc.segment_dim());
  std::array<std::span<const double>, kNumMics> ch;
  for (std::size_t m = 0; m < kNumMics; ++m) ch[m] = clip.channel(m).subspan(start, length);

  for (const auto& [a, b] : kMicPairs) {
    const bool silent = std::all_of(ch[a].begin(), ch[a].end(), [](double v) { return v == 0.0; }) &&
                        std::all_of(ch[b].begin(), ch[b].end(), [](double v) { return v == 0.0; });
    if (silent) {
      seg.fused.insert(seg.fused.end(), gcc.num_lags(), 0.0);
      continue;
    }
    const auto g = gcc_phat(ch[a], ch[b], gcc);
    seg.fused.insert(seg.fused.end(), g.begin(), g.end());
  }

  std::vector<double> mono(length, 0.0);
  for (std::size_t m = 0; m < kNumMics; ++m)
    for (std::size_t i = 0; i < length; ++i) mono[i] += ch[m][i];
  for (double& v : mono) v /= static_cast<double>(kNumMics);
  const auto mf = mfcc_segment(mono, clip.sample_rate_hz, mfcc);
  seg.fused.insert(seg.fused.end(), mf.begin(), mf.end());
  return seg;
}

/// Slides a segment window over the clip with the given hop. GCC-PHAT and MFCC
/// see the identical sample span. A clip shorter than one segment is
/// zero-padded to exactly one segment.
inline std::vector<SegmentFeatures> extract_segments(const AudioClip& clip, const GccSpec& gcc = {},
                                                     const MfccSpec& mfcc = {}, double segment_hop_ms = 85.0) {
  if (clip.channels() != kNumMics)
    throw Error(Errc::channel_count, "expected 4 channels, got " + std::to_string(clip.channels()));
  clip.validate();
  const std::size_t seg_len = gcc.segment_samples(clip.sample_rate_hz);
  const auto hop = static_cast<std::size_t>(std::lround(segment_hop_ms * clip.sample_rate_hz / 1000.0));
  if (seg_len == 0 || hop == 0) throw Error(Errc::validation, "segment length and hop must be positive");

  if (clip.num_samples() < seg_len) {
    AudioClip padded(SampleMatrix::Zero(static_cast<Eigen::Index>(kNumMics), static_cast<Eigen::Index>(seg_len)),
                     clip.sample_rate_hz);
    padded.samples.leftCols(clip.samples.cols()) = clip.samples;
    return {segment_features(padded, 0, seg_len, gcc, mfcc)};
  }

  const std::size_t count = (clip.num_samples() - seg_len) / hop + 1;
  std::vector<SegmentFeatures> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) out.push_back(segment_features(clip, s * hop, seg_len, gcc, mfcc));
  return out;
}

// ---------------------------------------------------------------------------
// Feature files: "SLCF", u32 version, u32 num_segments, u32 dim, f32 row-major.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

/// Rows are segments.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline FeatureMatrix to_matrix(const std::vector<SegmentFeatures>& segments) {
  if (segments.empty()) return {};
  FeatureMatrix m(static_cast<Eigen::Index>(segments.size()), static_cast<Eigen::Index>(segments.front().dim()));
  for (std::size_t i = 0; i < segments.size(); ++i)
    for (std::size_t j = 0; j < segments[i].dim(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = segments[i].fused[j];
  return m;
}

inline void write_feature_file(const FeatureMatrix& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out.write("SLCF", 4);
  binary::write_le<std::uint32_t>(out, kFeatureFileVersion);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.rows()));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.cols()));
  std::vector<float> values(static_cast<std::size_t>(features.size()));
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    for (Eigen::Index j = 0; j < features.cols(); ++j)
      values[static_cast<std::size_t>(i * features.cols() + j)] = static_cast<float>(features(i, j));
  binary::write_le_array<float>(out, values);
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

inline FeatureMatrix read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  if (binary::read_tag(in, "feature magic") != "SLCF") throw Error(Errc::format, "bad magic in " + path.string());
  const auto version = binary::read_le<std::uint32_t>(in, "feature version");
  if (version != kFeatureFileVersion)
    throw Error(Errc::format, "unsupported feature file version " + std::to_string(version));
  const auto rows = binary::read_le<std::uint32_t>(in, "segment count");
  const auto cols = binary::read_le<std::uint32_t>(in, "feature dimension");
  std::vector<float> values(static_cast<std::size_t>(rows) * cols);
  binary::read_le_array<float>(in, values, "feature values");
  FeatureMatrix m(rows, cols);
  for (std::size_t k = 0; k < values.size(); ++k) m.data()[k] = static_cast<double>(values[k]);
  return m;
}

}  // namespace sloclas
