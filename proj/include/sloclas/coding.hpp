#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sloclas/error.hpp"

namespace sloclas {

inline constexpr int kDoaBins = 360;
inline constexpr double kDefaultSigmaDeg = 8.0;

/// Shortest angular distance between two azimuths in degrees, in [0, 180].
inline double circular_distance_deg(double a, double b) {
  const double d = std::fmod(std::abs(a - b), 360.0);
  return std::min(d, 360.0 - d);
}

/// 360-bin DoA likelihood; index i stands for azimuth i+1 degrees.
struct DoaCode {
  std::vector<double> values = std::vector<double>(kDoaBins, 0.0);

  static constexpr int azimuth_of(std::size_t index) { return static_cast<int>(index) + 1; }
  static constexpr std::size_t index_of(int azimuth_deg) { return static_cast<std::size_t>(azimuth_deg - 1); }
};

/// Gaussian likelihood exp(-d^2 / sigma^2) around the true azimuth, with d the
/// circular distance. Far tails are floored at the smallest normal double so
/// every bin stays strictly positive.
inline DoaCode encode_doa(int truth_deg, double sigma_deg = kDefaultSigmaDeg) {
  if (truth_deg < 1 || truth_deg > kDoaBins)
    throw Error(Errc::validation, "DoA " + std::to_string(truth_deg) + " outside 1..360");
  if (!(sigma_deg > 0.0)) throw Error(Errc::validation, "sigma must be positive");
  DoaCode code;
  for (std::size_t i = 0; i < code.values.size(); ++i) {
    const double d = circular_distance_deg(DoaCode::azimuth_of(i), truth_deg);
    code.values[i] = std::max(std::exp(-(d * d) / (sigma_deg * sigma_deg)), std::numeric_limits<double>::min());
  }
  return code;
}

/// Azimuth of the largest posterior bin; ties go to the smallest index.
inline int decode_doa(std::span<const double> posterior) {
  if (posterior.size() != static_cast<std::size_t>(kDoaBins))
    throw Error(Errc::validation, "posterior must have 360 bins, got " + std::to_string(posterior.size()));
  if (!std::all_of(posterior.begin(), posterior.end(), [](double v) { return std::isfinite(v); }))
    throw Error(Errc::validation, "posterior is not finite");
  return DoaCode::azimuth_of(static_cast<std::size_t>(std::max_element(posterior.begin(), posterior.end()) - posterior.begin()));
}

struct EventCode {
  std::vector<double> values;
};

inline EventCode encode_event(int class_id, int num_classes) {
  if (num_classes < 1) throw Error(Errc::validation, "class count must be positive");
  if (class_id < 0 || class_id >= num_classes)
    throw Error(Errc::validation,
                "class id " + std::to_string(class_id) + " outside [0, " + std::to_string(num_classes) + ")");
  EventCode code{std::vector<double>(static_cast<std::size_t>(num_classes), 0.0)};
  code.values[static_cast<std::size_t>(class_id)] = 1.0;
  return code;
}

}  // namespace sloclas
