#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sloclas/coding.hpp"
#include "sloclas/config.hpp"
#include "sloclas/dataset.hpp"
#include "sloclas/error.hpp"
#include "sloclas/eval.hpp"
#include "sloclas/features.hpp"
#include "sloclas/slcnet.hpp"

namespace sloclas {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 0.001;
  double lambda = 0.99;
  std::uint64_t seed = 1;
  double sigma_deg = kDefaultSigmaDeg;
  int hidden = 512;
  double dropout = 0.2;
  double eta_deg = 5.0;

  void validate() const {
    if (epochs < 1 || batch_size < 2) throw Error(Errc::validation, "need epochs >= 1 and batch_size >= 2");
    if (!(learning_rate > 0.0)) throw Error(Errc::validation, "learning rate must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(Errc::validation, "lambda must be in [0, 1]");
    if (!(sigma_deg > 0.0)) throw Error(Errc::validation, "sigma must be positive");
    if (hidden < 1) throw Error(Errc::validation, "hidden width must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::validation, "dropout must be in [0, 1)");
  }
};

inline TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.epochs = static_cast<int>(cfg.get_int("epochs"));
  t.batch_size = static_cast<int>(cfg.get_int("batch_size"));
  t.learning_rate = cfg.get_double("learning_rate");
  t.lambda = cfg.get_double("lambda");
  t.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  t.sigma_deg = cfg.get_double("sigma_deg");
  t.hidden = static_cast<int>(cfg.get_int("hidden"));
  t.dropout = cfg.get_double("dropout");
  t.eta_deg = cfg.get_double("eta_deg");
  return t;
}

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double mae_deg = 0.0;
  double acc_theta_pct = 0.0;
  double acc_event_pct = 0.0;
};

struct TrainResult {
  SlcModel model;
  std::vector<EpochMetrics> log;
};

/// Per-feature mean and inverse standard deviation over every training segment.
inline void fit_input_standardization(SlcModel& model, std::span<const TrainingExample* const> examples) {
  const Eigen::Index dim = model.shape.input_dim;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(dim);
  double count = 0.0;
  for (const TrainingExample* ex : examples) {
    sum += ex->segments.colwise().sum().transpose();
    sq += ex->segments.array().square().matrix().colwise().sum().transpose();
    count += static_cast<double>(ex->segments.rows());
  }
  if (count == 0.0) return;
  model.input_mean = sum / count;
  const Eigen::VectorXd var = (sq / count - model.input_mean.cwiseAbs2()).cwiseMax(0.0);
  model.input_inv_std = var.cwiseSqrt().cwiseMax(1e-6).cwiseInverse();
}

/// Mini-batch Adam training. Each epoch shuffles the training examples with a
/// generator seeded once from config.seed; a trailing batch of one example is
/// skipped because its batch statistics are undefined. After every epoch the
/// model is scored on `eval_set` (if non-empty). Fully deterministic in the seed.
inline TrainResult train(std::span<const TrainingExample* const> train_set,
                         std::span<const TrainingExample* const> eval_set, int num_classes, const TrainConfig& config,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  config.validate();
  if (train_set.size() < 2) throw Error(Errc::validation, "need at least two training examples");
  const auto input_dim = static_cast<int>(train_set.front()->segments.cols());

  ModelShape shape;
  shape.input_dim = input_dim;
  shape.hidden = config.hidden;
  shape.num_classes = num_classes;
  shape.dropout = config.dropout;
  TrainResult result{SlcModel::create(shape, config.seed), {}};
  SlcModel& model = result.model;
  fit_input_standardization(model, train_set);

  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
  AdamState adam;
  const AdamConfig adam_cfg{config.learning_rate};
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c)
    names.push_back(c < kNumClasses ? std::string(kClassNames[static_cast<std::size_t>(c)]) : "class" + std::to_string(c));

  std::vector<const TrainingExample*> batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      if (stop - start < 2) continue;
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);
      GradientResult g = compute_gradients(model, batch, config.lambda, rng);
      update_running_stats(model, g.cache);
      auto params = model.parameters();
      std::vector<std::span<double>> pviews;
      for (auto& p : params) pviews.push_back(p.values);
      const auto gviews = g.gradients.views();
      adam_step(pviews, gviews, adam, adam_cfg);
      loss_sum += g.loss.total * static_cast<double>(batch.size());
      seen += batch.size();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    if (!eval_set.empty()) {
      const EvalReport r = evaluate(model, eval_set, config.eta_deg, names);
      m.mae_deg = r.mae_deg;
      m.acc_theta_pct = r.acc_theta_pct;
      m.acc_event_pct = r.acc_event_pct;
    }
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Manifest-level helpers

inline std::filesystem::path feature_path(const std::filesystem::path& features_dir, const ManifestRow& row) {
  return features_dir / (row.id + ".slcf");
}

/// Loads the feature file of every row into training examples (DoA targets coded with `sigma_deg`).
/// A missing or unreadable file is an ingestion error naming the sample.
inline std::vector<TrainingExample> load_examples(std::span<const ManifestRow* const> rows,
                                                  const std::filesystem::path& features_dir, double sigma_deg) {
  std::vector<TrainingExample> out;
  out.reserve(rows.size());
  for (const ManifestRow* row : rows) {
    const auto path = feature_path(features_dir, *row);
    if (!std::filesystem::exists(path))
      throw Error(Errc::ingestion, "sample " + row->id + ": missing feature file " + path.string());
    TrainingExample ex;
    try {
      ex.segments = read_feature_file(path);
    } catch (const Error& e) {
      throw Error(Errc::ingestion, "sample " + row->id + ": " + e.what());
    }
    if (ex.segments.rows() < 1) throw Error(Errc::ingestion, "sample " + row->id + ": no segments");
    ex.doa_deg = row->doa_deg;
    ex.doa_target = encode_doa(row->doa_deg, sigma_deg);
    ex.class_id = row->class_id;
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<const TrainingExample*> pointers(const std::vector<TrainingExample>& v) {
  std::vector<const TrainingExample*> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(&e);
  return out;
}

/// Trains on the manifest's train split and reports test-split metrics per epoch.
inline TrainResult train(const Manifest& manifest, const std::filesystem::path& features_dir, const TrainConfig& config,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  config.validate();
  const auto train_rows = manifest.rows_in(Split::train);
  const auto test_rows = manifest.rows_in(Split::test);
  const auto train_examples = load_examples(train_rows, features_dir, config.sigma_deg);
  const auto test_examples = load_examples(test_rows, features_dir, config.sigma_deg);
  return train(pointers(train_examples), pointers(test_examples), kNumClasses, config, on_epoch);
}

}  // namespace sloclas
