#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "sloclas/error.hpp"

namespace sloclas {

struct ConfigKey {
  std::string_view name;
  std::string_view default_value;  // empty means "unset"
  std::string_view description;
};

// Every key accepted in a run config. Anything else is rejected.
inline constexpr std::array kConfigKeys = {
    ConfigKey{"seed", "1", "single source of all randomness"},
    // simulation
    ConfigKey{"classes", "10", "class count (first N of the table) or comma-separated class names"},
    ConfigKey{"samples_per_class", "20", "source recordings per class"},
    ConfigKey{"doa_start", "1", "first azimuth in degrees"},
    ConfigKey{"doa_step", "5", "azimuth spacing in degrees"},
    ConfigKey{"doa_count", "72", "number of azimuths"},
    ConfigKey{"snr_db", "", "optional sensor-noise SNR in dB; unset means clean"},
    ConfigKey{"geometry_side", "0.064", "side of the square microphone array in metres"},
    ConfigKey{"speed_of_sound", "343", "speed of sound in m/s"},
    ConfigKey{"distance_m", "1.5", "source distance from the array centre in metres"},
    ConfigKey{"sample_rate", "48000", "sample rate in Hz"},
    ConfigKey{"clip_ms", "255", "length of each simulated clip in ms"},
    ConfigKey{"bit_depth", "16", "WAV encoding of simulated clips: 16 or 32f"},
    // features
    ConfigKey{"segment_ms", "170", "feature segment length in ms"},
    ConfigKey{"segment_hop_ms", "85", "feature segment hop in ms"},
    ConfigKey{"max_lag", "25", "GCC-PHAT lag range; lags -max_lag..max_lag"},
    ConfigKey{"mfcc_frame_ms", "20", "MFCC frame length in ms"},
    ConfigKey{"mfcc_overlap", "0.5", "MFCC frame overlap fraction"},
    ConfigKey{"num_ceps", "13", "cepstral coefficients per frame"},
    ConfigKey{"num_mel_filters", "26", "triangular mel filters"},
    ConfigKey{"preemphasis", "0.97", "pre-emphasis coefficient"},
    ConfigKey{"frames_per_segment", "8", "MFCC frames kept per segment"},
    // training
    ConfigKey{"epochs", "50", "training epochs"},
    ConfigKey{"batch_size", "32", "mini-batch size"},
    ConfigKey{"learning_rate", "0.001", "Adam learning rate"},
    ConfigKey{"lambda", "0.99", "weight of the DoA loss in the combined objective"},
    ConfigKey{"sigma_deg", "8", "width of the Gaussian DoA likelihood code"},
    ConfigKey{"hidden", "512", "hidden width of embedding and head layers"},
    ConfigKey{"dropout", "0.2", "dropout rate of the embedding layers"},
    ConfigKey{"val_ratio", "0.1", "validation fraction per (class, DoA) stratum"},
    ConfigKey{"test_ratio", "0.1", "test fraction per (class, DoA) stratum"},
    // evaluation
    ConfigKey{"eta_deg", "5", "DoA error allowance for ACC_theta"},
};

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : kConfigKeys)
    if (k.name == name) return &k;
  return nullptr;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace detail

/// Validated key=value configuration with registry defaults.
class Config {
 public:
  /// Parses "key = value" lines; '#' starts a comment.
  static Config parse(std::istream& in, const std::string& source = "<config>") {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view view = line;
      if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
      view = detail::trim(view);
      if (view.empty()) continue;
      const auto eq = view.find('=');
      if (eq == std::string_view::npos)
        throw Error(Errc::config, source + ":" + std::to_string(lineno) + ": expected key=value");
      cfg.set(std::string(detail::trim(view.substr(0, eq))), std::string(detail::trim(view.substr(eq + 1))));
    }
    return cfg;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::config, "cannot open config file " + path.string());
    return parse(in, path.string());
  }

  static Config from_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) {
    if (!find_config_key(key)) throw Error(Errc::config, "unknown key '" + key + "'");
    values_[key] = value;
  }

  /// Applies a "key=value" override.
  void set_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos)
      throw Error(Errc::config, "override '" + std::string(assignment) + "' is not key=value");
    set(std::string(detail::trim(assignment.substr(0, eq))), std::string(detail::trim(assignment.substr(eq + 1))));
  }

  bool has(std::string_view key) const { return !get_string(key).empty(); }

  std::string get_string(std::string_view key) const {
    const ConfigKey* k = find_config_key(key);
    if (!k) throw Error(Errc::config, "unknown key '" + std::string(key) + "'");
    if (auto it = values_.find(std::string(key)); it != values_.end()) return it->second;
    return std::string(k->default_value);
  }

  long long get_int(std::string_view key) const {
    const std::string s = get_string(key);
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
      throw Error(Errc::config, "key '" + std::string(key) + "' expects an integer, got '" + s + "'");
    return v;
  }

  double get_double(std::string_view key) const {
    const std::string s = get_string(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(Errc::config, "key '" + std::string(key) + "' expects a number, got '" + s + "'");
  }

  std::optional<double> get_optional_double(std::string_view key) const {
    if (!has(key)) return std::nullopt;
    return get_double(key);
  }

  const std::map<std::string, std::string>& explicit_values() const { return values_; }

  /// Every registry key with its effective value, one "key = value" line each; parses back to an equal config.
  std::string to_text() const {
    std::string out;
    for (const ConfigKey& k : kConfigKeys) out += std::string(k.name) + " = " + get_string(k.name) + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sloclas
