#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "sloclas/audio_io.hpp"
#include "sloclas/error.hpp"

namespace sloclas {

inline constexpr std::array<std::string_view, 10> kClassNames = {
    "bells", "bottles", "buzzer", "cymbals", "horn", "metal", "particle", "phone", "ring", "whistle"};
inline constexpr int kNumClasses = static_cast<int>(kClassNames.size());

inline std::optional<int> class_id_of(std::string_view name) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i)
    if (kClassNames[i] == name) return static_cast<int>(i);
  return std::nullopt;
}

inline std::vector<std::string> class_name_list() { return {kClassNames.begin(), kClassNames.end()}; }

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct ManifestRow {
  std::string id;
  std::string wav_path;  // relative to the manifest's directory
  int class_id = 0;
  std::string class_name;
  int doa_deg = 1;
  Split split = Split::train;
  std::optional<double> snr_db;
  std::optional<std::string> noise_class;

  bool operator==(const ManifestRow&) const = default;
};

struct Manifest {
  static constexpr int kSchemaVersion = 1;

  std::vector<ManifestRow> rows;
  std::filesystem::path base_dir;  // wav_path entries resolve against this

  std::filesystem::path wav_file(const ManifestRow& row) const { return base_dir / row.wav_path; }

  std::vector<const ManifestRow*> rows_in(Split split) const {
    std::vector<const ManifestRow*> out;
    for (const auto& r : rows)
      if (r.split == split) out.push_back(&r);
    return out;
  }
};

/// Checks one row against the class table and the 1..360 DoA grid.
inline void validate_row(const ManifestRow& row) {
  if (row.id.empty()) throw Error(Errc::validation, "empty sample id");
  if (row.doa_deg < 1 || row.doa_deg > 360)
    throw Error(Errc::validation, "row " + row.id + ": doa_deg " + std::to_string(row.doa_deg) + " outside 1..360");
  if (row.class_id < 0 || row.class_id >= kNumClasses)
    throw Error(Errc::validation, "row " + row.id + ": class_id " + std::to_string(row.class_id) + " outside [0,10)");
  if (kClassNames[static_cast<std::size_t>(row.class_id)] != row.class_name)
    throw Error(Errc::validation, "row " + row.id + ": class_name '" + row.class_name + "' does not match class_id " +
                                      std::to_string(row.class_id));
}

inline void validate_manifest(const Manifest& m) {
  std::set<std::string> ids;
  for (const auto& r : m.rows) {
    validate_row(r);
    if (!ids.insert(r.id).second) throw Error(Errc::validation, "duplicate sample id " + r.id);
  }
}

// ---------------------------------------------------------------------------
// Stratified splits

struct SplitRatios {
  double val = 0.1;
  double test = 0.1;
};

/// Assigns splits per (class, DoA) stratum. Each stratum gets its test and
/// validation share of rows, rounded so the running totals track the ratios;
/// every stratum is therefore within one row of n*ratio. Strata and the rows
/// inside them are visited in id order, so the result depends only on ids and seed.
inline void assign_splits(std::vector<ManifestRow>& rows, std::uint64_t seed, SplitRatios ratios = {}) {
  if (ratios.val < 0.0 || ratios.test < 0.0 || ratios.val + ratios.test > 1.0)
    throw Error(Errc::validation, "invalid split ratios");
  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rows[a].id < rows[b].id; });
  for (std::size_t i : order) strata[{rows[i].class_id, rows[i].doa_deg}].push_back(i);

  // Counts are rounded cumulatively so that small strata still add up to the global ratios.
  std::mt19937_64 rng(seed);
  std::size_t seen = 0, given_test = 0, given_val = 0;
  for (auto& [key, members] : strata) {
    std::shuffle(members.begin(), members.end(), rng);
    seen += members.size();
    const auto want_test = static_cast<std::size_t>(std::llround(static_cast<double>(seen) * ratios.test));
    const auto want_val = static_cast<std::size_t>(std::llround(static_cast<double>(seen) * ratios.val));
    const std::size_t n_test = std::min(members.size(), want_test - std::min(want_test, given_test));
    const std::size_t n_val = std::min(members.size() - n_test, want_val - std::min(want_val, given_val));
    given_test += n_test;
    given_val += n_val;
    for (std::size_t k = 0; k < members.size(); ++k)
      rows[members[k]].split = k < n_test ? Split::test : (k < n_test + n_val ? Split::val : Split::train);
  }
}

// ---------------------------------------------------------------------------
// CSV manifest

inline constexpr std::array<std::string_view, 8> kManifestColumns = {
    "id", "wav_path", "class_id", "class_name", "doa_deg", "split", "snr_db", "noise_class"};

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw Error(Errc::format, "unterminated quote in manifest line");
  return fields;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline int parse_int_field(const std::string& s, std::string_view column, std::size_t line) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw Error(Errc::format, "line " + std::to_string(line) + ": column " + std::string(column) +
                                  " is not an integer: '" + s + "'");
  return v;
}

inline double parse_double_field(const std::string& s, std::string_view column, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error(Errc::format, "line " + std::to_string(line) + ": column " + std::string(column) +
                                  " is not a number: '" + s + "'");
  return v;
}

}  // namespace detail

/// Writes the manifest as UTF-8 CSV with LF line endings, rows in stored order.
inline void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  for (std::size_t i = 0; i < kManifestColumns.size(); ++i) out << (i ? "," : "") << kManifestColumns[i];
  out << '\n';
  for (const auto& r : manifest.rows) {
    out << detail::csv_field(r.id) << ',' << detail::csv_field(r.wav_path) << ',' << r.class_id << ','
        << detail::csv_field(r.class_name) << ',' << r.doa_deg << ',' << to_string(r.split) << ','
        << (r.snr_db ? detail::format_double(*r.snr_db) : "") << ','
        << (r.noise_class ? detail::csv_field(*r.noise_class) : "") << '\n';
  }
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

/// Reads a CSV manifest. Columns are matched by header name; a missing or
/// unknown column is a format error naming it. With `check_paths`, every WAV
/// must exist.
inline Manifest read_manifest(const std::filesystem::path& path, bool check_paths = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::format, "empty manifest " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t, std::less<>> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (std::find(kManifestColumns.begin(), kManifestColumns.end(), header[i]) == kManifestColumns.end())
      throw Error(Errc::format, "unknown manifest column '" + header[i] + "'");
    if (!col.emplace(header[i], i).second) throw Error(Errc::format, "duplicate manifest column '" + header[i] + "'");
  }
  for (auto name : kManifestColumns)
    if (!col.count(name)) throw Error(Errc::format, "manifest is missing column '" + std::string(name) + "'");

  std::set<std::string> ids;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw Error(Errc::format, "line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                                    " fields, got " + std::to_string(f.size()));
    const auto get = [&](std::string_view name) -> const std::string& { return f[col.find(name)->second]; };
    ManifestRow r;
    r.id = get("id");
    r.wav_path = get("wav_path");
    r.class_id = detail::parse_int_field(get("class_id"), "class_id", lineno);
    r.class_name = get("class_name");
    r.doa_deg = detail::parse_int_field(get("doa_deg"), "doa_deg", lineno);
    const auto split = parse_split(get("split"));
    if (!split) throw Error(Errc::format, "line " + std::to_string(lineno) + ": column split has bad value '" + get("split") + "'");
    r.split = *split;
    if (!get("snr_db").empty()) r.snr_db = detail::parse_double_field(get("snr_db"), "snr_db", lineno);
    if (!get("noise_class").empty()) r.noise_class = get("noise_class");
    validate_row(r);
    if (!ids.insert(r.id).second) throw Error(Errc::validation, "duplicate sample id " + r.id);
    if (check_paths && !std::filesystem::exists(m.wav_file(r)))
      throw Error(Errc::ingestion, "row " + r.id + ": missing file " + m.wav_file(r).string());
    m.rows.push_back(std::move(r));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Corpus ingestion

struct LayoutEntry {
  int class_id = 0;
  int doa_deg = 1;
};

/// Layout adapter: the DoA is the first integer in the nearest ancestor
/// directory name that contains digits; the class is the first class name found
/// (case-insensitively) in the file stem, then in the ancestor directory names.
inline std::optional<LayoutEntry> parse_layout_entry(const std::filesystem::path& relative) {
  const auto lower = [](std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  std::vector<std::string> dirs;
  for (const auto& part : relative.parent_path()) dirs.push_back(part.string());

  std::optional<int> doa;
  for (auto it = dirs.rbegin(); it != dirs.rend() && !doa; ++it) {
    const auto pos = it->find_first_of("0123456789");
    if (pos == std::string::npos) continue;
    int v = 0;
    std::from_chars(it->data() + pos, it->data() + it->size(), v);
    doa = v;
  }
  if (!doa || *doa < 1 || *doa > 360) return std::nullopt;

  std::vector<std::string> candidates{lower(relative.stem().string())};
  for (auto it = dirs.rbegin(); it != dirs.rend(); ++it) candidates.push_back(lower(*it));
  for (const auto& text : candidates) {
    std::size_t best_pos = std::string::npos;
    int best = -1;
    for (std::size_t c = 0; c < kClassNames.size(); ++c) {
      // Longest name wins at equal positions so "bells" is not taken for "bell".
      const auto pos = text.find(kClassNames[c]);
      if (pos != std::string::npos && (pos < best_pos || (pos == best_pos && kClassNames[c].size() > kClassNames[static_cast<std::size_t>(best)].size()))) {
        best_pos = pos;
        best = static_cast<int>(c);
      }
    }
    if (best >= 0) return LayoutEntry{best, *doa};
  }
  return std::nullopt;
}

struct IngestResult {
  Manifest manifest;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Scans `root` for .wav files, parses class and DoA through the layout
/// adapter, sorts rows by id and assigns stratified splits. Unparseable
/// entries are skipped with a warning; an empty result is an ingestion error.
inline IngestResult ingest_sloclas(const std::filesystem::path& root, std::uint64_t seed, SplitRatios ratios = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error(Errc::ingestion, root.string() + " is not a directory");
  IngestResult result;
  result.manifest.base_dir = root;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".wav") files.push_back(fs::relative(entry.path(), root));
  }
  std::sort(files.begin(), files.end());

  std::set<std::string> ids;
  for (const auto& rel : files) {
    const auto parsed = parse_layout_entry(rel);
    if (!parsed) {
      ++result.skipped;
      result.warnings.push_back("cannot parse class/DoA from " + rel.generic_string());
      continue;
    }
    std::string id = rel.generic_string();
    id = id.substr(0, id.size() - rel.extension().string().size());
    std::replace(id.begin(), id.end(), '/', '_');
    if (!ids.insert(id).second) {
      ++result.skipped;
      result.warnings.push_back("duplicate id " + id);
      continue;
    }
    ManifestRow row;
    row.id = std::move(id);
    row.wav_path = rel.generic_string();
    row.class_id = parsed->class_id;
    row.class_name = std::string(kClassNames[static_cast<std::size_t>(parsed->class_id)]);
    row.doa_deg = parsed->doa_deg;
    result.manifest.rows.push_back(std::move(row));
  }
  if (result.manifest.rows.empty()) throw Error(Errc::ingestion, "no usable samples under " + root.string());
  std::sort(result.manifest.rows.begin(), result.manifest.rows.end(),
            [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; });
  assign_splits(result.manifest.rows, seed, ratios);
  return result;
}

// ---------------------------------------------------------------------------
// Energy-based endpointing

struct EndpointSpec {
  double energy_win_ms = 10.0;
  double threshold_ratio = 4.0;
  double min_event_ms = 50.0;
  double hangover_ms = 30.0;

  void validate() const {
    if (!(energy_win_ms > 0 && threshold_ratio > 0 && min_event_ms > 0 && hangover_ms > 0))
      throw Error(Errc::validation, "endpoint parameters must be positive");
  }
};

struct Interval {
  std::size_t start = 0;  // first sample
  std::size_t end = 0;    // one past the last sample

  bool operator==(const Interval&) const = default;
};

// Window energies at or below this (about -100 dBFS) count as digital silence.
inline constexpr double kSilenceEnergy = 1e-10;

/// Event intervals from short-time energy of the channel mean. Windows above
/// threshold_ratio x noise floor (5th percentile of window energies) are
/// active; gaps shorter than the hangover are bridged and events shorter than
/// min_event_ms dropped. A non-silent clip with no energy contrast at all is
/// one event spanning the clip.
inline std::vector<Interval> segment_by_energy(const AudioClip& clip, const EndpointSpec& spec = {}) {
  spec.validate();
  if (clip.num_samples() == 0) throw Error(Errc::empty_input, "empty clip");
  const std::vector<double> mono = clip.mono();
  const double rate = clip.sample_rate_hz;
  const auto win = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.energy_win_ms * rate / 1000.0)));
  const std::size_t num_win = (mono.size() + win - 1) / win;

  std::vector<double> energy(num_win, 0.0);
  for (std::size_t w = 0; w < num_win; ++w) {
    const std::size_t a = w * win;
    const std::size_t b = std::min(mono.size(), a + win);
    for (std::size_t i = a; i < b; ++i) energy[w] += mono[i] * mono[i];
    energy[w] /= static_cast<double>(b - a);
  }

  std::vector<double> sorted = energy;
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(num_win)));
  const double floor = sorted[rank == 0 ? 0 : rank - 1];
  const double threshold = std::max(spec.threshold_ratio * floor, kSilenceEnergy);

  if (sorted.back() <= kSilenceEnergy) return {};
  if (sorted.back() <= threshold) return {Interval{0, mono.size()}};

  std::vector<Interval> events;
  for (std::size_t w = 0; w < num_win; ++w) {
    if (energy[w] <= threshold) continue;
    const std::size_t a = w * win;
    const std::size_t b = std::min(mono.size(), a + win);
    if (!events.empty() && events.back().end == a)
      events.back().end = b;
    else
      events.push_back({a, b});
  }

  const auto hangover = static_cast<std::size_t>(std::lround(spec.hangover_ms * rate / 1000.0));
  std::vector<Interval> bridged;
  for (const auto& e : events) {
    if (!bridged.empty() && e.start - bridged.back().end < hangover)
      bridged.back().end = e.end;
    else
      bridged.push_back(e);
  }

  const auto min_len = static_cast<std::size_t>(std::lround(spec.min_event_ms * rate / 1000.0));
  std::vector<Interval> out;
  for (const auto& e : bridged)
    if (e.end - e.start >= min_len) out.push_back(e);
  return out;
}

}  // namespace sloclas
