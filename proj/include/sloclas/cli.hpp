#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sloclas/audio_io.hpp"
#include "sloclas/config.hpp"
#include "sloclas/dataset.hpp"
#include "sloclas/digest.hpp"
#include "sloclas/error.hpp"
#include "sloclas/eval.hpp"
#include "sloclas/features.hpp"
#include "sloclas/parallel.hpp"
#include "sloclas/simulate.hpp"
#include "sloclas/slcnet.hpp"
#include "sloclas/train.hpp"

namespace sloclas::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitRefusal = 3 };

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

/// Maps library errors to exit codes: config errors 2, refusals 3, everything else 1.
inline int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const Error& e) {
    err << "slc: " << e.what() << '\n';
    if (e.code() == Errc::config) return kExitConfig;
    if (e.code() == Errc::refusal) return kExitRefusal;
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "slc: " << e.what() << '\n';
    return kExitFailure;
  }
}

/// Exclusive lock file inside an output directory, removed on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".slc.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw Error(Errc::io, "output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    ::close(fd);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

struct FeatureSettings {
  GccSpec gcc;
  MfccSpec mfcc;
  double segment_hop_ms = 85.0;
};

inline FeatureSettings feature_settings_from(const Config& cfg) {
  FeatureSettings f;
  f.gcc.segment_len_ms = cfg.get_double("segment_ms");
  f.gcc.max_lag = static_cast<int>(cfg.get_int("max_lag"));
  f.segment_hop_ms = cfg.get_double("segment_hop_ms");
  f.mfcc.frame_ms = cfg.get_double("mfcc_frame_ms");
  f.mfcc.overlap = cfg.get_double("mfcc_overlap");
  f.mfcc.num_ceps = static_cast<int>(cfg.get_int("num_ceps"));
  f.mfcc.num_mel_filters = static_cast<int>(cfg.get_int("num_mel_filters"));
  f.mfcc.preemphasis = cfg.get_double("preemphasis");
  f.mfcc.frames_per_segment = static_cast<int>(cfg.get_int("frames_per_segment"));
  if (f.gcc.max_lag < 1 || !(f.gcc.segment_len_ms > 0.0) || !(f.segment_hop_ms > 0.0))
    throw Error(Errc::config, "segment_ms, segment_hop_ms and max_lag must be positive");
  try {
    f.mfcc.validate();
  } catch (const Error& e) {
    throw Error(Errc::config, e.what());
  }
  return f;
}

inline FeatureMatrix clip_features(const AudioClip& clip, const FeatureSettings& f) {
  return to_matrix(extract_segments(clip, f.gcc, f.mfcc, f.segment_hop_ms));
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(const Config& cfg, const fs::path& out_dir, Streams io) {
  return guarded([&] {
    const SimConfig sim = sim_config_from(cfg);
    DirectoryLock lock(out_dir);
    const Manifest m = synthesize_dataset(sim, out_dir);
    io.out << "simulated " << m.rows.size() << " samples (" << sim.classes.size() << " classes x "
           << sim.samples_per_class << " samples x " << sim.doa_count << " DoAs) into " << out_dir.string() << '\n'
           << "manifest " << (out_dir / "manifest.csv").string() << " digest "
           << file_digest(out_dir / "manifest.csv") << '\n';
    return kExitOk;
  }, io.err);
}

inline int cmd_ingest(const Config& cfg, const fs::path& root, const fs::path& out_manifest, Streams io) {
  return guarded([&] {
    const SplitRatios ratios{cfg.get_double("val_ratio"), cfg.get_double("test_ratio")};
    IngestResult r = ingest_sloclas(root, static_cast<std::uint64_t>(cfg.get_int("seed")), ratios);
    for (const auto& w : r.warnings) io.err << "warning: " << w << '\n';
    // Paths in the written manifest are relative to its own directory.
    const fs::path base = fs::absolute(out_manifest).parent_path();
    for (auto& row : r.manifest.rows)
      row.wav_path = fs::relative(fs::absolute(root / row.wav_path), base).generic_string();
    r.manifest.base_dir = base;
    write_manifest(r.manifest, out_manifest);
    io.out << "ingested " << r.manifest.rows.size() << " samples, skipped " << r.skipped << '\n';
    return kExitOk;
  }, io.err);
}

inline int cmd_features(const Config& cfg, const fs::path& manifest_path, const fs::path& out_dir, Streams io) {
  return guarded([&] {
    const FeatureSettings settings = feature_settings_from(cfg);
    const Manifest manifest = read_manifest(manifest_path, false);
    DirectoryLock lock(out_dir);

    std::vector<std::string> missing;
    for (const auto& row : manifest.rows)
      if (!fs::exists(manifest.wav_file(row))) missing.push_back(row.id);

    std::vector<std::string> failures(manifest.rows.size());
    std::vector<long long> segments(manifest.rows.size(), 0);
    parallel_for(manifest.rows.size(), [&](std::size_t i) {
      const ManifestRow& row = manifest.rows[i];
      if (!fs::exists(manifest.wav_file(row))) return;
      try {
        const AudioClip clip = read_wav(manifest.wav_file(row));
        const FeatureMatrix feats = clip_features(clip, settings);
        write_feature_file(feats, feature_path(out_dir, row));
        segments[i] = feats.rows();
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    });

    long long written = 0, total_segments = 0;
    bool failed = !missing.empty();
    for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
      if (!failures[i].empty()) {
        failed = true;
        io.err << "failed: " << manifest.rows[i].id << ": " << failures[i] << '\n';
      } else if (segments[i] > 0) {
        ++written;
        total_segments += segments[i];
      }
    }
    if (!missing.empty()) {
      io.err << "missing WAV for " << missing.size() << " sample(s):";
      for (const auto& id : missing) io.err << ' ' << id;
      io.err << '\n';
    }
    io.out << "wrote " << written << " feature files (" << total_segments << " segments, dim "
           << kNumPairs * settings.gcc.num_lags() + settings.mfcc.segment_dim() << ") to " << out_dir.string() << '\n';
    return failed ? kExitFailure : kExitOk;
  }, io.err);
}

inline std::string format_metric(double v, bool applicable) {
  if (!applicable) return "NA";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

/// Trains and writes the checkpoint, the effective config as <model>.config and a
/// per-epoch CSV log (epoch,train_loss,mae,acc_theta,acc_event). Refuses to overwrite an
/// existing checkpoint unless `force`.
inline int cmd_train(const Config& cfg, const fs::path& manifest_path, const fs::path& features_dir,
                     const fs::path& out_model, bool force, Streams io, std::optional<fs::path> log_path = {}) {
  return guarded([&] {
    const TrainConfig tc = train_config_from(cfg);
    try {
      tc.validate();
    } catch (const Error& e) {
      throw Error(Errc::config, e.what());
    }
    if (fs::exists(out_model) && !force)
      throw Error(Errc::refusal, out_model.string() + " exists; pass --force to overwrite");
    const fs::path out_dir = fs::absolute(out_model).parent_path();
    DirectoryLock lock(out_dir);
    const Manifest manifest = read_manifest(manifest_path, false);

    const bool doa_applicable = tc.lambda > 0.0;
    const bool event_applicable = tc.lambda < 1.0;
    const fs::path log_file = log_path ? *log_path : fs::path(out_model.string() + ".metrics.csv");
    std::ofstream log(log_file, std::ios::binary | std::ios::trunc);
    if (!log) throw Error(Errc::io, "cannot write " + log_file.string());
    log << "epoch,train_loss,mae,acc_theta,acc_event\n";

    const TrainResult result = train(manifest, features_dir, tc, [&](const EpochMetrics& m) {
      log << m.epoch << ',' << format_metric(m.train_loss, true) << ',' << format_metric(m.mae_deg, doa_applicable)
          << ',' << format_metric(m.acc_theta_pct, doa_applicable) << ','
          << format_metric(m.acc_event_pct, event_applicable) << '\n';
      log.flush();
      char line[160];
      std::snprintf(line, sizeof line, "epoch %3d  loss %.6f  mae %s  acc_theta %s  acc_e %s\n", m.epoch, m.train_loss,
                    doa_applicable ? std::to_string(m.mae_deg).c_str() : "NA",
                    doa_applicable ? std::to_string(m.acc_theta_pct).c_str() : "NA",
                    event_applicable ? std::to_string(m.acc_event_pct).c_str() : "NA");
      io.out << line << std::flush;
    });
    save_checkpoint(result.model, out_model);
    const fs::path config_file = out_model.string() + ".config";
    std::ofstream(config_file, std::ios::binary | std::ios::trunc) << cfg.to_text();
    io.out << "saved " << out_model.string() << " digest " << file_digest(out_model) << '\n';
    return kExitOk;
  }, io.err);
}

/// Scores a checkpoint on one manifest split; prints the text table and writes the JSON report.
inline int cmd_eval(const Config& cfg, const fs::path& model_path, const fs::path& manifest_path,
                    const fs::path& features_dir, std::optional<double> eta, const fs::path& report_path, Streams io,
                    Split split = Split::test) {
  return guarded([&] {
    const double eta_deg = eta ? *eta : cfg.get_double("eta_deg");
    if (!(eta_deg >= 0.0)) throw Error(Errc::config, "eta must be non-negative");
    const SlcModel model = load_checkpoint(model_path);
    const Manifest manifest = read_manifest(manifest_path, false);
    if (model.shape.num_classes != kNumClasses)
      throw Error(Errc::shape, "model has " + std::to_string(model.shape.num_classes) +
                                   " classes, manifest class table has " + std::to_string(kNumClasses));
    const auto rows = manifest.rows_in(split);
    if (rows.empty()) throw Error(Errc::validation, "split " + std::string(to_string(split)) + " is empty");
    const auto examples = load_examples(rows, features_dir, cfg.get_double("sigma_deg"));
    for (const auto& ex : examples)
      if (ex.segments.cols() != model.shape.input_dim)
        throw Error(Errc::shape, "features have dimension " + std::to_string(ex.segments.cols()) + ", model expects " +
                                     std::to_string(model.shape.input_dim));
    const auto names = class_name_list();
    const EvalReport report = evaluate(model, pointers(examples), eta_deg, names);
    std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write " + report_path.string());
    out << to_json(report).dump(2) << '\n';
    io.out << to_text(report);
    return kExitOk;
  }, io.err);
}

/// Predicts DoA and class for one 4-channel WAV. Optionally writes the 360-bin
/// posterior as little-endian float32.
inline int cmd_predict(const Config& cfg, const fs::path& model_path, const fs::path& wav_path,
                       std::optional<fs::path> posterior_path, Streams io) {
  return guarded([&] {
    const FeatureSettings settings = feature_settings_from(cfg);
    const SlcModel model = load_checkpoint(model_path);
    const AudioClip clip = read_wav(wav_path);
    if (clip.channels() != kNumMics)
      throw Error(Errc::channel_count, wav_path.string() + " has " + std::to_string(clip.channels()) + " channels, need 4");
    const FeatureMatrix feats = clip_features(clip, settings);
    const Prediction p = forward(model, feats, Mode::infer);
    const int doa = decode_doa(p.doa_posterior);

    std::vector<std::size_t> order(p.class_probs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p.class_probs[a] > p.class_probs[b]; });
    const auto name = [](std::size_t c) {
      return c < kClassNames.size() ? std::string(kClassNames[c]) : "class" + std::to_string(c);
    };
    io.out << "doa_deg " << doa << '\n' << "class " << name(order.front()) << '\n' << "top3";
    for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, " %s=%.4f", name(order[i]).c_str(), p.class_probs[order[i]]);
      io.out << buf;
    }
    io.out << '\n';

    if (posterior_path) {
      std::ofstream out(*posterior_path, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(Errc::io, "cannot write " + posterior_path->string());
      std::vector<float> values(p.doa_posterior.begin(), p.doa_posterior.end());
      binary::write_le_array<float>(out, values);
    }
    return kExitOk;
  }, io.err);
}

}  // namespace sloclas::cli
