#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sloclas/audio_io.hpp"
#include "sloclas/error.hpp"
#include "sloclas/fft.hpp"

namespace sloclas {

inline constexpr std::size_t kNumMics = 4;
inline constexpr int kMaxLagSamples = 25;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Planar four-microphone array. Azimuth is measured counter-clockwise from +x.
struct ArrayGeometry {
  std::array<Point2, kNumMics> mics{};
  double speed_of_sound_mps = 343.0;

  /// Square of the given side centred on the origin, mics at 45, 135, 225, 315 degrees.
  static ArrayGeometry square(double side_m = 0.064, double speed_of_sound = 343.0) {
    const double h = side_m / 2.0;
    return ArrayGeometry{{Point2{h, h}, Point2{-h, h}, Point2{-h, -h}, Point2{h, -h}}, speed_of_sound};
  }

  double aperture_m() const {
    double best = 0.0;
    for (std::size_t i = 0; i < kNumMics; ++i)
      for (std::size_t j = i + 1; j < kNumMics; ++j) best = std::max(best, distance(mics[i], mics[j]));
    return best;
  }

  /// Every pairwise TDOA must fit inside the GCC-PHAT lag window.
  void validate(int sample_rate_hz, int max_lag = kMaxLagSamples) const {
    if (!(speed_of_sound_mps > 0.0)) throw Error(Errc::geometry, "speed of sound must be positive");
    const double lag = aperture_m() * sample_rate_hz / speed_of_sound_mps;
    if (lag > max_lag)
      throw Error(Errc::geometry, "array aperture spans " + std::to_string(lag) + " samples, more than the " +
                                      std::to_string(max_lag) + "-sample lag range");
  }
};

struct SourcePlacement {
  int azimuth_deg = 1;
  double distance_m = 1.5;

  Point2 position() const {
    const double rad = azimuth_deg * std::numbers::pi / 180.0;
    return {distance_m * std::cos(rad), distance_m * std::sin(rad)};
  }
};

/// Fixed pair order (0,1),(0,2),(0,3),(1,2),(1,3),(2,3).
inline constexpr std::array<std::pair<std::size_t, std::size_t>, 6> kMicPairs = {
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

/// Arrival-time difference (mic b minus mic a) in samples. Positive means b hears the source later.
inline double geometric_tdoa_samples(const SourcePlacement& placement, const ArrayGeometry& geometry,
                                     int sample_rate_hz, std::size_t mic_a, std::size_t mic_b) {
  const Point2 src = placement.position();
  return (distance(src, geometry.mics[mic_b]) - distance(src, geometry.mics[mic_a])) * sample_rate_hz /
         geometry.speed_of_sound_mps;
}

/// Free-field propagation to each microphone: delay by d/c (exact fractional delay
/// through FFT phase rotation) and attenuation by 1/d. Output length equals input length.
inline AudioClip propagate(std::span<const double> source, const SourcePlacement& placement,
                           const ArrayGeometry& geometry, int sample_rate_hz) {
  if (source.empty()) throw Error(Errc::empty_input, "empty source signal");
  if (sample_rate_hz <= 0) throw Error(Errc::validation, "sample rate must be positive");
  if (!(placement.distance_m > 0.0)) throw Error(Errc::validation, "source distance must be positive");
  geometry.validate(sample_rate_hz);

  const Point2 src = placement.position();
  std::array<double, kNumMics> dist{};
  double max_delay = 0.0;
  for (std::size_t m = 0; m < kNumMics; ++m) {
    dist[m] = distance(src, geometry.mics[m]);
    if (dist[m] <= 0.0) throw Error(Errc::geometry, "source coincides with a microphone");
    max_delay = std::max(max_delay, dist[m] / geometry.speed_of_sound_mps * sample_rate_hz);
  }

  const std::size_t n = next_pow2(source.size() + static_cast<std::size_t>(std::ceil(max_delay)) + 1);
  const auto spectrum = rfft(source, n);
  AudioClip out(SampleMatrix::Zero(kNumMics, static_cast<Eigen::Index>(source.size())), sample_rate_hz);

  std::vector<Complex> shifted(spectrum.size());
  for (std::size_t m = 0; m < kNumMics; ++m) {
    const double delay = dist[m] / geometry.speed_of_sound_mps * sample_rate_hz;
    const double gain = 1.0 / dist[m];
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
      const double phase = -2.0 * std::numbers::pi * static_cast<double>(k) * delay / static_cast<double>(n);
      shifted[k] = spectrum[k] * std::polar(gain, phase);
    }
    // Nyquist bin of a real signal must stay real.
    shifted.back() = Complex(shifted.back().real(), 0.0);
    const auto y = irfft(shifted, n);
    std::copy_n(y.begin(), source.size(), out.channel(m).begin());
  }
  return out;
}

inline double total_energy(const AudioClip& clip) { return clip.samples.squaredNorm(); }

/// Adds `noise` scaled so that clean/noise total energy equals `snr_db`. The
/// noise is tiled or cropped to the clean length.
inline AudioClip mix_noise(const AudioClip& clean, const AudioClip& noise, double snr_db) {
  if (clean.channels() != noise.channels())
    throw Error(Errc::channel_count, "clean has " + std::to_string(clean.channels()) + " channels, noise has " +
                                         std::to_string(noise.channels()));
  if (clean.sample_rate_hz != noise.sample_rate_hz) throw Error(Errc::validation, "sample rates differ");
  if (noise.num_samples() == 0) throw Error(Errc::empty_input, "empty noise clip");
  if (!std::isfinite(snr_db)) throw Error(Errc::validation, "SNR must be finite");

  const double clean_energy = total_energy(clean);
  if (!(clean_energy > 0.0)) throw Error(Errc::degenerate_input, "clean signal has zero energy");

  SampleMatrix fitted(clean.samples.rows(), clean.samples.cols());
  const auto nl = static_cast<Eigen::Index>(noise.num_samples());
  for (Eigen::Index i = 0; i < fitted.cols(); ++i) fitted.col(i) = noise.samples.col(i % nl);
  const double noise_energy = fitted.squaredNorm();
  if (!(noise_energy > 0.0)) throw Error(Errc::degenerate_input, "noise has zero energy");

  const double scale = std::sqrt(clean_energy / (noise_energy * std::pow(10.0, snr_db / 10.0)));
  return AudioClip(clean.samples + scale * fitted, clean.sample_rate_hz);
}

}  // namespace sloclas
