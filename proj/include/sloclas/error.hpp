#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sloclas {

enum class Errc {
  format,
  unsupported,
  io,
  validation,
  empty_input,
  geometry,
  degenerate_input,
  insufficient_input,
  channel_count,
  shape,
  ingestion,
  config,
  refusal,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::format: return "format error";
    case Errc::unsupported: return "unsupported";
    case Errc::io: return "I/O error";
    case Errc::validation: return "validation error";
    case Errc::empty_input: return "empty input";
    case Errc::geometry: return "geometry error";
    case Errc::degenerate_input: return "degenerate input";
    case Errc::insufficient_input: return "insufficient input";
    case Errc::channel_count: return "channel-count error";
    case Errc::shape: return "shape error";
    case Errc::ingestion: return "ingestion error";
    case Errc::config: return "config error";
    case Errc::refusal: return "refusal";
  }
  return "error";
}

/// Exception carrying one of the library's error categories.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace sloclas
