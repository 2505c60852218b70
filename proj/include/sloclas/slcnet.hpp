#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sloclas/binary_io.hpp"
#include "sloclas/coding.hpp"
#include "sloclas/error.hpp"
#include "sloclas/features.hpp"

namespace sloclas {

struct ModelShape {
  int input_dim = static_cast<int>(kFeatureDim);
  int hidden = 512;
  int doa_dim = kDoaBins;
  int num_classes = 10;
  double dropout = 0.2;

  bool operator==(const ModelShape&) const = default;
};

struct BatchNorm {
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;

  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
};

/// Affine layer y = W x + b, optionally followed by batch normalisation.
struct Dense {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
  bool has_bn = false;
  BatchNorm bn;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

enum LayerIndex : std::size_t { kEmbed0, kEmbed1, kDoaHidden, kDoaOut, kSecHidden, kSecOut, kNumLayers };

inline constexpr std::array<const char*, kNumLayers> kLayerNames = {"embed0",     "embed1", "doa_hidden",
                                                                    "doa_out",    "sec_hidden", "sec_out"};

struct ParamRef {
  std::string name;
  std::span<double> values;
};

/// Shared two-layer embedding (FC-BN-ReLU-dropout), max-pooled over segments,
/// feeding a DoA head (FC-BN-ReLU-FC-logistic, 360 outputs) and an event head
/// (FC-BN-ReLU-FC-softmax, C outputs). Inputs are standardised with fixed
/// per-feature statistics before the first layer.
class SlcModel {
 public:
  ModelShape shape;
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_inv_std;
  std::array<Dense, kNumLayers> layers;

  /// Glorot-uniform weights, zero biases, unit BN scale, identity standardisation.
  static SlcModel create(const ModelShape& shape, std::uint64_t seed) {
    if (shape.input_dim < 1 || shape.hidden < 1 || shape.doa_dim < 1 || shape.num_classes < 1)
      throw Error(Errc::validation, "model dimensions must be positive");
    if (!(shape.dropout >= 0.0 && shape.dropout < 1.0)) throw Error(Errc::validation, "dropout must be in [0, 1)");
    SlcModel m;
    m.shape = shape;
    m.input_mean = Eigen::VectorXd::Zero(shape.input_dim);
    m.input_inv_std = Eigen::VectorXd::Ones(shape.input_dim);
    std::mt19937_64 rng(seed);
    const auto init = [&](Dense& d, int in, int out, bool bn) {
      const double limit = std::sqrt(6.0 / (in + out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      d.weight.resize(out, in);
      for (Eigen::Index r = 0; r < d.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < d.weight.cols(); ++c) d.weight(r, c) = dist(rng);
      d.bias = Eigen::VectorXd::Zero(out);
      d.has_bn = bn;
      if (bn) {
        d.bn.gamma = Eigen::VectorXd::Ones(out);
        d.bn.beta = Eigen::VectorXd::Zero(out);
        d.bn.running_mean = Eigen::VectorXd::Zero(out);
        d.bn.running_var = Eigen::VectorXd::Ones(out);
      }
    };
    init(m.layers[kEmbed0], shape.input_dim, shape.hidden, true);
    init(m.layers[kEmbed1], shape.hidden, shape.hidden, true);
    init(m.layers[kDoaHidden], shape.hidden, shape.hidden, true);
    init(m.layers[kDoaOut], shape.hidden, shape.doa_dim, false);
    init(m.layers[kSecHidden], shape.hidden, shape.hidden, true);
    init(m.layers[kSecOut], shape.hidden, shape.num_classes, false);
    return m;
  }

  /// Trainable tensors in a fixed order: per layer weight, bias, then BN scale and shift.
  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
      Dense& d = layers[l];
      const std::string base = kLayerNames[l];
      out.push_back({base + ".weight", {d.weight.data(), static_cast<std::size_t>(d.weight.size())}});
      out.push_back({base + ".bias", {d.bias.data(), static_cast<std::size_t>(d.bias.size())}});
      if (d.has_bn) {
        out.push_back({base + ".bn_scale", {d.bn.gamma.data(), static_cast<std::size_t>(d.bn.gamma.size())}});
        out.push_back({base + ".bn_shift", {d.bn.beta.data(), static_cast<std::size_t>(d.bn.beta.size())}});
      }
    }
    return out;
  }

  /// Throws a shape error if layer dimensions do not chain input -> hidden -> heads.
  void validate() const {
    const auto expect = [&](std::size_t l, Eigen::Index out, Eigen::Index in) {
      const Dense& d = layers[l];
      if (d.out_dim() != out || d.in_dim() != in || d.bias.size() != out)
        throw Error(Errc::shape, std::string(kLayerNames[l]) + ": expected " + std::to_string(out) + "x" +
                                     std::to_string(in) + ", found " + std::to_string(d.out_dim()) + "x" +
                                     std::to_string(d.in_dim()));
      if (d.has_bn) {
        if (d.bn.gamma.size() != out || d.bn.beta.size() != out || d.bn.running_mean.size() != out ||
            d.bn.running_var.size() != out)
          throw Error(Errc::shape, std::string(kLayerNames[l]) + ": batch-norm size mismatch");
        if ((d.bn.running_var.array() <= 0.0).any())
          throw Error(Errc::validation, std::string(kLayerNames[l]) + ": running variance must be positive");
      }
    };
    expect(kEmbed0, shape.hidden, shape.input_dim);
    expect(kEmbed1, shape.hidden, shape.hidden);
    expect(kDoaHidden, shape.hidden, shape.hidden);
    expect(kDoaOut, shape.doa_dim, shape.hidden);
    expect(kSecHidden, shape.hidden, shape.hidden);
    expect(kSecOut, shape.num_classes, shape.hidden);
    if (input_mean.size() != shape.input_dim || input_inv_std.size() != shape.input_dim)
      throw Error(Errc::shape, "input standardisation size mismatch");
  }
};

// ---------------------------------------------------------------------------
// Forward pass

enum class Mode { train, infer };

/// Activations kept from a train-mode forward pass for backpropagation.
struct LayerCache {
  Eigen::MatrixXd input;       // rows = examples
  Eigen::MatrixXd normalized;  // BN x_hat (rows = examples)
  Eigen::VectorXd inv_std;
  Eigen::VectorXd batch_mean;
  Eigen::VectorXd batch_var;
  Eigen::MatrixXd output;       // post-activation (post-dropout where applicable)
  Eigen::MatrixXd relu_active;  // 1 where the ReLU passed its input
  Eigen::MatrixXd dropout_mask; // empty when dropout is inactive
};

struct ForwardCache {
  std::array<LayerCache, kNumLayers> layers;
  std::vector<Eigen::Index> segment_offsets;  // example b owns rows [offsets[b], offsets[b+1])
  Eigen::MatrixXi pool_argmax;                // examples x hidden, absolute segment row
};

struct BatchOutput {
  Eigen::MatrixXd doa;    // examples x 360, logistic outputs
  Eigen::MatrixXd probs;  // examples x C, softmax outputs
};

namespace detail {

inline Eigen::MatrixXd affine(const Dense& d, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z(x.rows(), d.out_dim());
  z.noalias() = x * d.weight.transpose();
  z.rowwise() += d.bias.transpose();
  return z;
}

inline void batch_norm(const Dense& d, Eigen::MatrixXd& z, Mode mode, LayerCache* cache) {
  if (mode == Mode::train) {
    const Eigen::RowVectorXd mean = z.colwise().mean();
    z.rowwise() -= mean;
    const Eigen::RowVectorXd var = z.array().square().colwise().mean();
    const Eigen::RowVectorXd inv_std = (var.array() + BatchNorm::kEps).rsqrt();
    z.array().rowwise() *= inv_std.array();
    if (cache) {
      cache->normalized = z;
      cache->inv_std = inv_std.transpose();
      cache->batch_mean = mean.transpose();
      cache->batch_var = var.transpose();
    }
  } else {
    const Eigen::RowVectorXd inv_std = (d.bn.running_var.array() + BatchNorm::kEps).rsqrt().transpose();
    z.rowwise() -= d.bn.running_mean.transpose();
    z.array().rowwise() *= inv_std.array();
  }
  z.array().rowwise() *= d.bn.gamma.transpose().array();
  z.rowwise() += d.bn.beta.transpose();
}

// FC -> BN -> ReLU (-> inverted dropout).
inline Eigen::MatrixXd hidden_layer(const Dense& d, const Eigen::MatrixXd& x, Mode mode, double dropout,
                                    std::mt19937_64* rng, LayerCache* cache) {
  Eigen::MatrixXd z = affine(d, x);
  batch_norm(d, z, mode, cache);
  if (cache) {
    cache->input = x;
    cache->relu_active = (z.array() > 0.0).cast<double>();
  }
  z = z.cwiseMax(0.0);
  if (mode == Mode::train && dropout > 0.0) {
    if (!rng) throw Error(Errc::validation, "train-mode dropout needs a random generator");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - dropout);
    Eigen::MatrixXd mask(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(*rng) < dropout ? 0.0 : keep_scale;
    z.array() *= mask.array();
    if (cache) cache->dropout_mask = std::move(mask);
  }
  if (cache) cache->output = z;
  return z;
}

inline Eigen::MatrixXd logistic(const Eigen::MatrixXd& z) {
  static constexpr double lo = std::numeric_limits<double>::min();
  static constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return z.unaryExpr([](double v) { return std::clamp(1.0 / (1.0 + std::exp(-v)), lo, hi); });
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p = z.colwise() - z.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

}  // namespace detail

/// Batched forward pass. Each input is one example's (segments x 618) matrix.
/// In train mode, batch statistics drive BN and dropout is drawn from `rng`.
inline BatchOutput forward_batch(const SlcModel& model, std::span<const FeatureMatrix* const> inputs, Mode mode,
                                 std::mt19937_64* rng = nullptr, ForwardCache* cache = nullptr) {
  if (inputs.empty()) throw Error(Errc::validation, "empty batch");
  const ModelShape& s = model.shape;
  std::vector<Eigen::Index> offsets{0};
  for (const FeatureMatrix* x : inputs) {
    if (x->rows() < 1) throw Error(Errc::validation, "example has no segments");
    if (x->cols() != s.input_dim)
      throw Error(Errc::validation,
                  "segment dimension " + std::to_string(x->cols()) + " != " + std::to_string(s.input_dim));
    offsets.push_back(offsets.back() + x->rows());
  }

  Eigen::MatrixXd x(offsets.back(), s.input_dim);
  for (std::size_t b = 0; b < inputs.size(); ++b) x.middleRows(offsets[b], inputs[b]->rows()) = *inputs[b];
  x.rowwise() -= model.input_mean.transpose();
  x.array().rowwise() *= model.input_inv_std.transpose().array();

  auto lc = [&](std::size_t l) { return cache ? &cache->layers[l] : nullptr; };
  Eigen::MatrixXd h = detail::hidden_layer(model.layers[kEmbed0], x, mode, s.dropout, rng, lc(kEmbed0));
  h = detail::hidden_layer(model.layers[kEmbed1], h, mode, s.dropout, rng, lc(kEmbed1));

  // Max over segments, first maximum wins.
  const auto batch = static_cast<Eigen::Index>(inputs.size());
  Eigen::MatrixXd pooled(batch, h.cols());
  Eigen::MatrixXi argmax(batch, h.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
      Eigen::Index best = offsets[static_cast<std::size_t>(b)];
      for (Eigen::Index r = best + 1; r < offsets[static_cast<std::size_t>(b) + 1]; ++r)
        if (h(r, j) > h(best, j)) best = r;
      pooled(b, j) = h(best, j);
      argmax(b, j) = static_cast<int>(best);
    }
  }

  BatchOutput out;
  const Eigen::MatrixXd doa_h = detail::hidden_layer(model.layers[kDoaHidden], pooled, mode, 0.0, rng, lc(kDoaHidden));
  const Eigen::MatrixXd doa_z = detail::affine(model.layers[kDoaOut], doa_h);
  out.doa = detail::logistic(doa_z);
  const Eigen::MatrixXd sec_h = detail::hidden_layer(model.layers[kSecHidden], pooled, mode, 0.0, rng, lc(kSecHidden));
  out.probs = detail::softmax_rows(detail::affine(model.layers[kSecOut], sec_h));

  if (cache) {
    cache->segment_offsets = std::move(offsets);
    cache->pool_argmax = std::move(argmax);
    cache->layers[kDoaOut].input = doa_h;
    cache->layers[kDoaOut].output = out.doa;
    cache->layers[kSecOut].input = sec_h;
    cache->layers[kSecOut].output = out.probs;
  }
  return out;
}

struct Prediction {
  std::vector<double> doa_posterior;
  std::vector<double> class_probs;
};

/// Single-example forward pass.
inline Prediction forward(const SlcModel& model, const FeatureMatrix& segments, Mode mode = Mode::infer,
                          std::mt19937_64* rng = nullptr) {
  const FeatureMatrix* one[] = {&segments};
  const BatchOutput out = forward_batch(model, one, mode, rng);
  Prediction p;
  p.doa_posterior.assign(out.doa.data(), out.doa.data() + out.doa.size());
  p.class_probs.assign(out.probs.data(), out.probs.data() + out.probs.size());
  return p;
}

/// Folds the batch statistics of a train-mode pass into the BN running averages.
inline void update_running_stats(SlcModel& model, const ForwardCache& cache) {
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    Dense& d = model.layers[l];
    if (!d.has_bn) continue;
    const LayerCache& c = cache.layers[l];
    d.bn.running_mean = BatchNorm::kMomentum * d.bn.running_mean + (1.0 - BatchNorm::kMomentum) * c.batch_mean;
    d.bn.running_var = BatchNorm::kMomentum * d.bn.running_var + (1.0 - BatchNorm::kMomentum) * c.batch_var;
  }
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kProbFloor = 1e-12;

/// Squared L2 distance between the DoA code and the prediction.
inline double mse_loss(std::span<const double> target, std::span<const double> prediction) {
  if (target.size() != prediction.size()) throw Error(Errc::validation, "MSE operands differ in size");
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = target[i] - prediction[i];
    acc += d * d;
  }
  return acc;
}

/// Categorical cross-entropy -log p[true], with p floored at 1e-12.
inline double ce_loss(int true_class, std::span<const double> class_probs) {
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= class_probs.size())
    throw Error(Errc::validation, "true class out of range");
  return -std::log(std::max(class_probs[static_cast<std::size_t>(true_class)], kProbFloor));
}

inline double combined_loss(double mse, double ce, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(Errc::validation, "lambda must be in [0, 1]");
  if (lambda == 1.0) return mse;
  if (lambda == 0.0) return ce;
  return lambda * mse + (1.0 - lambda) * ce;
}

struct TrainingExample {
  FeatureMatrix segments;
  DoaCode doa_target;
  int doa_deg = 1;
  int class_id = 0;
};

struct LossBreakdown {
  double total = 0.0;
  double mse = 0.0;  // batch mean
  double ce = 0.0;   // batch mean
};

inline LossBreakdown batch_loss(const BatchOutput& out, std::span<const TrainingExample* const> batch, double lambda) {
  LossBreakdown loss;
  const auto n = static_cast<Eigen::Index>(batch.size());
  std::vector<double> row(static_cast<std::size_t>(out.doa.cols()));
  std::vector<double> probs(static_cast<std::size_t>(out.probs.cols()));
  for (Eigen::Index b = 0; b < n; ++b) {
    for (Eigen::Index j = 0; j < out.doa.cols(); ++j) row[static_cast<std::size_t>(j)] = out.doa(b, j);
    for (Eigen::Index j = 0; j < out.probs.cols(); ++j) probs[static_cast<std::size_t>(j)] = out.probs(b, j);
    const double mse = mse_loss(batch[static_cast<std::size_t>(b)]->doa_target.values, row);
    const double ce = ce_loss(batch[static_cast<std::size_t>(b)]->class_id, probs);
    loss.mse += mse;
    loss.ce += ce;
    loss.total += combined_loss(mse, ce, lambda);
  }
  loss.mse /= static_cast<double>(n);
  loss.ce /= static_cast<double>(n);
  loss.total /= static_cast<double>(n);
  return loss;
}

// ---------------------------------------------------------------------------
// Backward pass

struct DenseGrad {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
};

struct ModelGradients {
  std::array<DenseGrad, kNumLayers> layers;

  /// Views in the same order as SlcModel::parameters().
  std::vector<std::span<double>> views() {
    std::vector<std::span<double>> out;
    for (DenseGrad& g : layers) {
      out.emplace_back(g.weight.data(), static_cast<std::size_t>(g.weight.size()));
      out.emplace_back(g.bias.data(), static_cast<std::size_t>(g.bias.size()));
      if (g.gamma.size() > 0) {
        out.emplace_back(g.gamma.data(), static_cast<std::size_t>(g.gamma.size()));
        out.emplace_back(g.beta.data(), static_cast<std::size_t>(g.beta.size()));
      }
    }
    return out;
  }
};

namespace detail {

// Gradient of an affine layer; returns the gradient w.r.t. its input.
inline Eigen::MatrixXd affine_backward(const Dense& d, const Eigen::MatrixXd& input, const Eigen::MatrixXd& dz,
                                       DenseGrad& g) {
  g.weight.noalias() = dz.transpose() * input;
  g.bias = dz.colwise().sum().transpose();
  Eigen::MatrixXd dx(dz.rows(), d.in_dim());
  dx.noalias() = dz * d.weight;
  return dx;
}

// Backward through (dropout) -> ReLU -> BN -> affine.
inline Eigen::MatrixXd hidden_backward(const Dense& d, const LayerCache& c, Eigen::MatrixXd dy, DenseGrad& g) {
  if (c.dropout_mask.size() > 0) dy.array() *= c.dropout_mask.array();
  dy.array() *= c.relu_active.array();

  g.gamma = (dy.array() * c.normalized.array()).colwise().sum().transpose();
  g.beta = dy.colwise().sum().transpose();

  const double n = static_cast<double>(dy.rows());
  Eigen::MatrixXd dxhat = dy.array().rowwise() * d.bn.gamma.transpose().array();
  const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * c.normalized.array()).colwise().sum();
  Eigen::MatrixXd dz = n * dxhat;
  dz.rowwise() -= sum_dxhat;
  dz.array() -= c.normalized.array().rowwise() * sum_dxhat_xhat.array();
  dz.array().rowwise() *= (c.inv_std.transpose().array() / n);

  return affine_backward(d, c.input, dz, g);
}

}  // namespace detail

/// Exact gradient of the batch-mean combined loss for a train-mode forward pass.
/// Max pooling sends each pooled gradient to the segment that won the max.
inline ModelGradients backward(const SlcModel& model, const ForwardCache& cache, const BatchOutput& out,
                               std::span<const TrainingExample* const> batch, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(Errc::validation, "lambda must be in [0, 1]");
  const auto n = static_cast<Eigen::Index>(batch.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  ModelGradients grads;

  Eigen::MatrixXd d_doa(n, out.doa.cols());
  Eigen::MatrixXd d_logits = out.probs;
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto& target = batch[static_cast<std::size_t>(b)]->doa_target.values;
    for (Eigen::Index j = 0; j < out.doa.cols(); ++j) {
      const double p = out.doa(b, j);
      d_doa(b, j) = lambda * inv_n * 2.0 * (p - target[static_cast<std::size_t>(j)]) * p * (1.0 - p);
    }
    d_logits(b, batch[static_cast<std::size_t>(b)]->class_id) -= 1.0;
  }
  d_logits *= (1.0 - lambda) * inv_n;

  const Eigen::MatrixXd d_doa_h =
      detail::affine_backward(model.layers[kDoaOut], cache.layers[kDoaOut].input, d_doa, grads.layers[kDoaOut]);
  Eigen::MatrixXd d_pooled = detail::hidden_backward(model.layers[kDoaHidden], cache.layers[kDoaHidden], d_doa_h,
                                                     grads.layers[kDoaHidden]);
  const Eigen::MatrixXd d_sec_h =
      detail::affine_backward(model.layers[kSecOut], cache.layers[kSecOut].input, d_logits, grads.layers[kSecOut]);
  d_pooled += detail::hidden_backward(model.layers[kSecHidden], cache.layers[kSecHidden], d_sec_h,
                                      grads.layers[kSecHidden]);

  Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(cache.segment_offsets.back(), d_pooled.cols());
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index j = 0; j < d_pooled.cols(); ++j) d_h(cache.pool_argmax(b, j), j) += d_pooled(b, j);

  d_h = detail::hidden_backward(model.layers[kEmbed1], cache.layers[kEmbed1], std::move(d_h), grads.layers[kEmbed1]);
  (void)detail::hidden_backward(model.layers[kEmbed0], cache.layers[kEmbed0], std::move(d_h), grads.layers[kEmbed0]);
  return grads;
}

struct GradientResult {
  ModelGradients gradients;
  LossBreakdown loss;
  ForwardCache cache;
};

/// Train-mode forward pass plus backward pass over one mini-batch.
inline GradientResult compute_gradients(const SlcModel& model, std::span<const TrainingExample* const> batch,
                                        double lambda, std::mt19937_64& rng) {
  std::vector<const FeatureMatrix*> inputs;
  inputs.reserve(batch.size());
  for (const TrainingExample* ex : batch) {
    if (ex->class_id < 0 || ex->class_id >= model.shape.num_classes)
      throw Error(Errc::shape, "class id " + std::to_string(ex->class_id) + " does not fit a " +
                                   std::to_string(model.shape.num_classes) + "-class model");
    inputs.push_back(&ex->segments);
  }
  GradientResult r;
  const BatchOutput out = forward_batch(model, inputs, Mode::train, &rng, &r.cache);
  r.loss = batch_loss(out, batch, lambda);
  r.gradients = backward(model, r.cache, out, batch, lambda);
  return r;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;
};

/// One bias-corrected Adam update applied in place.
inline void adam_step(std::span<const std::span<double>> params, std::span<const std::span<double>> grads,
                      AdamState& state, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size()) throw Error(Errc::shape, "parameter and gradient lists differ");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error(Errc::shape, "optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t];
    auto g = grads[t];
    if (p.size() != g.size() || state.m[t].size() != p.size())
      throw Error(Errc::shape, "tensor " + std::to_string(t) + " size mismatch");
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// "SLCM", u32 version, u32 layer_count; per layer u32 rows, u32 cols, f64
// weights row-major, f64 biases, u32 has_bn, then (if has_bn) f64 scale, shift,
// running mean, running variance; u32 C, u32 hidden; u32 input_dim, f64 input
// mean, f64 input inverse std, f64 dropout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const SlcModel& model, const std::filesystem::path& path) {
  using binary::write_le;
  model.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  const auto write_vec = [&](const auto& v) {
    binary::write_le_array<double>(out, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
  };
  out.write("SLCM", 4);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(kNumLayers));
  for (const Dense& d : model.layers) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.out_dim()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.in_dim()));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = d.weight;
    write_vec(w);
    write_vec(d.bias);
    write_le<std::uint32_t>(out, d.has_bn ? 1u : 0u);
    if (d.has_bn) {
      write_vec(d.bn.gamma);
      write_vec(d.bn.beta);
      write_vec(d.bn.running_mean);
      write_vec(d.bn.running_var);
    }
  }
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.shape.num_classes));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.shape.hidden));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.shape.input_dim));
  write_vec(model.input_mean);
  write_vec(model.input_inv_std);
  write_le<double>(out, model.shape.dropout);
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

inline SlcModel load_checkpoint(const std::filesystem::path& path) {
  using binary::read_le;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  if (binary::read_tag(in, "checkpoint magic") != "SLCM") throw Error(Errc::format, "bad checkpoint magic in " + path.string());
  const auto version = read_le<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion)
    throw Error(Errc::format, "unsupported checkpoint version " + std::to_string(version));
  const auto count = read_le<std::uint32_t>(in, "layer count");
  if (count != kNumLayers) throw Error(Errc::format, "expected 6 layers, found " + std::to_string(count));

  // Guards allocations against corrupt headers.
  constexpr std::uint32_t kMaxDim = 1u << 16;
  const auto read_vec = [&](Eigen::Index n, const char* what) {
    Eigen::VectorXd v(n);
    binary::read_le_array<double>(in, std::span<double>(v.data(), static_cast<std::size_t>(n)), what);
    return v;
  };

  SlcModel m;
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    Dense& d = m.layers[l];
    const auto rows = read_le<std::uint32_t>(in, "layer rows");
    const auto cols = read_le<std::uint32_t>(in, "layer cols");
    if (rows == 0 || cols == 0 || rows > kMaxDim || cols > kMaxDim)
      throw Error(Errc::format, std::string(kLayerNames[l]) + ": implausible size " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(rows, cols);
    binary::read_le_array<double>(in, std::span<double>(w.data(), static_cast<std::size_t>(w.size())), "weights");
    d.weight = w;
    d.bias = read_vec(rows, "biases");
    const auto has_bn = read_le<std::uint32_t>(in, "batch-norm flag");
    if (has_bn > 1) throw Error(Errc::format, "bad batch-norm flag");
    d.has_bn = has_bn == 1;
    if (d.has_bn) {
      d.bn.gamma = read_vec(rows, "batch-norm scale");
      d.bn.beta = read_vec(rows, "batch-norm shift");
      d.bn.running_mean = read_vec(rows, "batch-norm mean");
      d.bn.running_var = read_vec(rows, "batch-norm variance");
    }
  }
  m.shape.num_classes = static_cast<int>(read_le<std::uint32_t>(in, "class count"));
  m.shape.hidden = static_cast<int>(read_le<std::uint32_t>(in, "hidden width"));
  const auto input_dim = read_le<std::uint32_t>(in, "input dimension");
  if (input_dim == 0 || input_dim > kMaxDim) throw Error(Errc::format, "implausible input dimension");
  m.shape.input_dim = static_cast<int>(input_dim);
  m.shape.doa_dim = static_cast<int>(m.layers[kDoaOut].out_dim());
  m.input_mean = read_vec(input_dim, "input mean");
  m.input_inv_std = read_vec(input_dim, "input scale");
  m.shape.dropout = read_le<double>(in, "dropout");
  if (in.peek() != std::char_traits<char>::eof()) throw Error(Errc::format, "trailing bytes in " + path.string());
  m.validate();
  return m;
}

/// Loads a checkpoint and requires it to match `expected`; a mismatch is a
/// shape error reporting both shapes.
inline SlcModel load_checkpoint(const std::filesystem::path& path, const ModelShape& expected) {
  SlcModel m = load_checkpoint(path);
  const auto describe = [](const ModelShape& s) {
    return "input " + std::to_string(s.input_dim) + ", hidden " + std::to_string(s.hidden) + ", doa " +
           std::to_string(s.doa_dim) + ", classes " + std::to_string(s.num_classes);
  };
  if (m.shape.input_dim != expected.input_dim || m.shape.hidden != expected.hidden ||
      m.shape.doa_dim != expected.doa_dim || m.shape.num_classes != expected.num_classes)
    throw Error(Errc::shape, "checkpoint has " + describe(m.shape) + "; expected " + describe(expected));
  return m;
}

}  // namespace sloclas
