#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sloclas/array_sim.hpp"
#include "sloclas/audio_io.hpp"
#include "sloclas/config.hpp"
#include "sloclas/dataset.hpp"
#include "sloclas/error.hpp"
#include "sloclas/parallel.hpp"

namespace sloclas {

struct SimConfig {
  std::vector<int> classes;  // class ids from the fixed table
  int samples_per_class = 20;
  int doa_start = 1;
  int doa_step = 5;
  int doa_count = 72;
  std::optional<double> snr_db;
  std::uint64_t seed = 1;
  double geometry_side_m = 0.064;
  double speed_of_sound_mps = 343.0;
  double distance_m = 1.5;
  int sample_rate_hz = 48000;
  double clip_ms = 255.0;
  WavEncoding encoding = WavEncoding::pcm16;
  SplitRatios split;

  std::vector<int> doa_grid() const {
    std::vector<int> out;
    for (int i = 0; i < doa_count; ++i) {
      int a = (doa_start - 1 + i * doa_step) % 360;
      if (a < 0) a += 360;
      out.push_back(a + 1);
    }
    return out;
  }

  void validate() const {
    if (classes.empty()) throw Error(Errc::validation, "class list is empty");
    for (int c : classes)
      if (c < 0 || c >= kNumClasses) throw Error(Errc::validation, "class id " + std::to_string(c) + " not in table");
    if (std::set<int>(classes.begin(), classes.end()).size() != classes.size())
      throw Error(Errc::validation, "class list has duplicates");
    if (samples_per_class < 1) throw Error(Errc::validation, "samples_per_class must be positive");
    if (doa_count < 1) throw Error(Errc::validation, "doa_count must be positive");
    if (doa_start < 1 || doa_start > 360) throw Error(Errc::validation, "doa_start must be in 1..360");
    const auto grid = doa_grid();
    if (std::set<int>(grid.begin(), grid.end()).size() != grid.size())
      throw Error(Errc::validation, "DoA grid wraps onto itself");
    if (sample_rate_hz <= 0 || !(clip_ms > 0.0) || !(distance_m > 0.0))
      throw Error(Errc::validation, "sample rate, clip length and distance must be positive");
    ArrayGeometry::square(geometry_side_m, speed_of_sound_mps).validate(sample_rate_hz);
  }
};

/// Builds a SimConfig from registry keys. `classes` is either a count (first N
/// table entries) or a comma-separated list of class names.
inline SimConfig sim_config_from(const Config& cfg) {
  SimConfig s;
  const std::string classes = cfg.get_string("classes");
  if (!classes.empty() && classes.find_first_not_of("0123456789") == std::string::npos) {
    const auto n = cfg.get_int("classes");
    if (n < 1 || n > kNumClasses) throw Error(Errc::config, "classes must be in 1..10");
    for (int i = 0; i < n; ++i) s.classes.push_back(i);
  } else {
    std::stringstream ss(classes);
    std::string name;
    while (std::getline(ss, name, ',')) {
      const auto trimmed = std::string(detail::trim(name));
      if (trimmed.empty()) continue;
      const auto id = class_id_of(trimmed);
      if (!id) throw Error(Errc::config, "unknown class name '" + trimmed + "'");
      s.classes.push_back(*id);
    }
  }
  s.samples_per_class = static_cast<int>(cfg.get_int("samples_per_class"));
  s.doa_start = static_cast<int>(cfg.get_int("doa_start"));
  s.doa_step = static_cast<int>(cfg.get_int("doa_step"));
  s.doa_count = static_cast<int>(cfg.get_int("doa_count"));
  s.snr_db = cfg.get_optional_double("snr_db");
  s.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  s.geometry_side_m = cfg.get_double("geometry_side");
  s.speed_of_sound_mps = cfg.get_double("speed_of_sound");
  s.distance_m = cfg.get_double("distance_m");
  s.sample_rate_hz = static_cast<int>(cfg.get_int("sample_rate"));
  s.clip_ms = cfg.get_double("clip_ms");
  const std::string depth = cfg.get_string("bit_depth");
  if (depth == "16")
    s.encoding = WavEncoding::pcm16;
  else if (depth == "32f")
    s.encoding = WavEncoding::float32;
  else
    throw Error(Errc::config, "bit_depth must be 16 or 32f, got '" + depth + "'");
  s.split.val = cfg.get_double("val_ratio");
  s.split.test = cfg.get_double("test_ratio");
  return s;
}

/// splitmix64 finaliser; derives independent stream seeds from (seed, a, b, c).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t z = seed;
  for (std::uint64_t v : {a, b, c}) {
    z += 0x9e3779b97f4a7c15ULL + v;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
  }
  return z;
}

/// Synthetic stand-in for one source recording of a class. Each class is a
/// distinct waveform family; `rng` jitters pitch, timing and level per sample.
inline std::vector<double> event_template(int class_id, std::size_t length, int sample_rate_hz, std::mt19937_64& rng) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto jitter = [&](double spread) { return 1.0 + spread * (2.0 * u(rng) - 1.0); };
  const double fs = sample_rate_hz;
  const double amp = 0.3 + 0.4 * u(rng);
  const auto onset = static_cast<std::size_t>(u(rng) * 0.02 * fs);
  std::vector<double> x(length, 0.0);

  // Envelope helpers: t is seconds since onset.
  const auto attack = [&](double t) { return std::min(1.0, t / 0.003); };

  switch (class_id) {
    case 0: {  // bells: inharmonic partials, slow exponential decay
      const double f0 = 620.0 * jitter(0.1);
      const double ratios[] = {1.0, 2.76, 5.40, 8.93};
      for (std::size_t i = onset; i < length; ++i) {
        const double t = (i - onset) / fs;
        double v = 0.0;
        for (int k = 0; k < 4; ++k) v += std::sin(two_pi * f0 * ratios[k] * t) / (k + 1);
        x[i] = attack(t) * std::exp(-t / 0.25) * v;
      }
      break;
    }
    case 1: {  // bottles: short high clinks repeated
      const double f0 = 2400.0 * jitter(0.15);
      const double period = 0.06 * jitter(0.2);
      for (std::size_t i = onset; i < length; ++i) {
        const double t = (i - onset) / fs;
        const double local = std::fmod(t, period);
        x[i] = std::exp(-local / 0.012) * (std::sin(two_pi * f0 * t) + 0.5 * std::sin(two_pi * 1.5 * f0 * t));
      }
      break;
    }
    case 2: {  // buzzer: steady square wave
      const double f0 = 180.0 * jitter(0.15);
      for (std::size_t i = onset; i < length; ++i) {
        const double t = (i - onset) / fs;
        x[i] = attack(t) * (std::sin(two_pi * f0 * t) >= 0.0 ? 0.7 : -0.7);
      }
      break;
    }
    case 3: {  // cymbals: differenced (high-passed) noise, decaying
      double prev = 0.0;
      const double decay = 0.15 * jitter(0.2);
      for (std::size_t i = onset; i < length; ++i) {
        const double t = (i - onset) / fs;
        const double n = gauss(rng);
        x[i] = 0.5 * attack(t) * std::exp(-t / decay) * (n - prev);
        prev = n;
      }
      break;
    }
    case 4: {  // horn: harmonic stack with slow vibrato
      const double f0 = 280.0 * jitter(0.1);
      double phase = 0.0;
      for (std::size_t i = onset; i < length; ++i) {
        const double t = (i - onset) / fs;
        phase += two_pi * f0 * (1.0 + 0.01 * std::sin(two_pi * 5.0 * t)) / fs;
        double v = 0.0;
        for (int k = 1; k <= 6; ++k) v += std::sin(k * phase) / k;
        x[i] = 0.6 * attack(t) * v;
      }
      break;
    }
    case 5: {  // metal: band-limited noise burst around a resonance
      const double fc = 4200.0 * jitter(0.1);
      const double r = 0.995;
      const double a1 = -2.0 * r * std::cos(two_pi * fc / fs);
      const double a2 = r * r;
      double y1 = 0.0, y2 = 0.0;
      for (std::size_t i = onset; i < length; ++i) {
        const double t = (i - onset) / fs;
        const double y = 0.02 * gauss(rng) - a1 * y1 - a2 * y2;
        y2 = y1;
        y1 = y;
        x[i] = attack(t) * std::exp(-t / 0.08) * y;
      }
      break;
    }
    case 6: {  // particle: sparse clicks
      const double rate = 120.0 * jitter(0.3);
      for (std::size_t i = onset; i < length; ++i)
        if (u(rng) < rate / fs) {
          const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
          for (std::size_t k = 0; k < 48 && i + k < length; ++k)
            x[i + k] += sign * std::exp(-static_cast<double>(k) / 8.0) * (1.0 - 0.5 * (k % 2));
        }
      break;
    }
    case 7: {  // phone: dual tone gated at a fast cadence
      const double f1 = 440.0 * jitter(0.05);
      const double f2 = 480.0 * jitter(0.05);
      const double gate = 25.0 * jitter(0.2);
      for (std::size_t i = onset; i < length; ++i) {
        const double t = (i - onset) / fs;
        const double g = std::sin(two_pi * gate * t) > 0.0 ? 1.0 : 0.15;
        x[i] = 0.5 * attack(t) * g * (std::sin(two_pi * f1 * t) + std::sin(two_pi * f2 * t));
      }
      break;
    }
    case 8: {  // ring: amplitude-modulated high tone
      const double fc = 1500.0 * jitter(0.08);
      const double fm = 14.0 * jitter(0.2);
      for (std::size_t i = onset; i < length; ++i) {
        const double t = (i - onset) / fs;
        x[i] = attack(t) * (0.55 + 0.45 * std::sin(two_pi * fm * t)) * std::sin(two_pi * fc * t);
      }
      break;
    }
    case 9: {  // whistle: rising chirp
      const double f_start = 1800.0 * jitter(0.1);
      const double sweep = 8000.0 * jitter(0.2);  // Hz per second
      for (std::size_t i = onset; i < length; ++i) {
        const double t = (i - onset) / fs;
        x[i] = attack(t) * std::sin(two_pi * (f_start * t + 0.5 * sweep * t * t));
      }
      break;
    }
    default:
      throw Error(Errc::validation, "no template for class " + std::to_string(class_id));
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : x) v *= amp / peak;
  return x;
}

/// Relative WAV path for one simulated sample: doa_XXX/<class>_NNNN.wav.
inline std::string simulated_wav_path(int class_id, int sample, int doa_deg) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "doa_%03d/%s_%04d.wav", doa_deg,
                std::string(kClassNames[static_cast<std::size_t>(class_id)]).c_str(), sample);
  return buf;
}

/// Writes one 4-channel WAV per (class, sample, DoA) plus manifest.csv under
/// out_dir. The same source waveform of (class, sample) is played from every
/// DoA; optional sensor noise is independent per channel. Deterministic in the seed.
inline Manifest synthesize_dataset(const SimConfig& config, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw Error(Errc::io, "cannot create " + out_dir.string());

  const auto geometry = ArrayGeometry::square(config.geometry_side_m, config.speed_of_sound_mps);
  const auto grid = config.doa_grid();
  for (int doa : grid) {
    char dir[16];
    std::snprintf(dir, sizeof dir, "doa_%03d", doa);
    fs::create_directories(out_dir / dir, ec);
    if (ec) throw Error(Errc::io, "cannot create " + (out_dir / dir).string());
  }

  const auto length = static_cast<std::size_t>(std::lround(config.clip_ms * config.sample_rate_hz / 1000.0));
  Manifest manifest;
  manifest.base_dir = out_dir;
  const std::size_t per_class = static_cast<std::size_t>(config.samples_per_class);
  const std::size_t total = config.classes.size() * per_class * grid.size();
  manifest.rows.resize(total);

  // One job per source recording; it renders that source at every DoA.
  parallel_for(config.classes.size() * per_class, [&](std::size_t job) {
    const int class_id = config.classes[job / per_class];
    const int sample = static_cast<int>(job % per_class) + 1;
    std::mt19937_64 src_rng(mix_seed(config.seed, 1, static_cast<std::uint64_t>(class_id), static_cast<std::uint64_t>(sample)));
    const auto source = event_template(class_id, length, config.sample_rate_hz, src_rng);

    for (std::size_t d = 0; d < grid.size(); ++d) {
      AudioClip clip = propagate(source, SourcePlacement{grid[d], config.distance_m}, geometry, config.sample_rate_hz);
      if (config.snr_db) {
        std::mt19937_64 noise_rng(mix_seed(config.seed, 2, job, d));
        std::normal_distribution<double> gauss(0.0, 1.0);
        AudioClip noise(SampleMatrix(kNumMics, static_cast<Eigen::Index>(length)), config.sample_rate_hz);
        for (Eigen::Index i = 0; i < noise.samples.size(); ++i) noise.samples.data()[i] = gauss(noise_rng);
        clip = mix_noise(clip, noise, *config.snr_db);
      }
      ManifestRow& row = manifest.rows[job * grid.size() + d];
      row.wav_path = simulated_wav_path(class_id, sample, grid[d]);
      row.id = row.wav_path.substr(0, row.wav_path.size() - 4);
      std::replace(row.id.begin(), row.id.end(), '/', '_');
      row.class_id = class_id;
      row.class_name = std::string(kClassNames[static_cast<std::size_t>(class_id)]);
      row.doa_deg = grid[d];
      row.snr_db = config.snr_db;
      if (config.snr_db) row.noise_class = "white";
      write_wav(clip, out_dir / row.wav_path, config.encoding);
    }
  });

  std::sort(manifest.rows.begin(), manifest.rows.end(),
            [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; });
  assign_splits(manifest.rows, config.seed, config.split);
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace sloclas
