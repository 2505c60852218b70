#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "sloclas/slcnet.hpp"
#include "test_util.hpp"

using namespace sloclas;

namespace {

ModelShape small_shape(int hidden = 16, double dropout = 0.2) {
  ModelShape s;
  s.hidden = hidden;
  s.dropout = dropout;
  return s;
}

FeatureMatrix random_segments(int rows, std::mt19937_64& rng, int dim = 618) {
  std::normal_distribution<double> g;
  FeatureMatrix m(rows, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

}  // namespace

TEST(Forward, SoftmaxSumsToOneAndLogisticInUnitInterval) {
  std::mt19937_64 rng(1);
  const SlcModel m = SlcModel::create(small_shape(), 1);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMatrix x = random_segments(1 + trial % 4, rng) * (trial % 3 == 0 ? 1e3 : 1.0);
    const Prediction p = forward(m, x);
    ASSERT_EQ(p.doa_posterior.size(), 360u);
    ASSERT_EQ(p.class_probs.size(), 10u);
    EXPECT_NEAR(std::accumulate(p.class_probs.begin(), p.class_probs.end(), 0.0), 1.0, 1e-9);
    for (double v : p.doa_posterior) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Forward, SegmentOrderDoesNotMatter) {
  std::mt19937_64 rng(2);
  const SlcModel m = SlcModel::create(small_shape(), 2);
  const FeatureMatrix x = random_segments(5, rng);
  FeatureMatrix y = x;
  y.row(0) = x.row(3);
  y.row(3) = x.row(0);
  y.row(1) = x.row(4);
  y.row(4) = x.row(1);
  const Prediction a = forward(m, x), b = forward(m, y);
  for (std::size_t i = 0; i < a.doa_posterior.size(); ++i) EXPECT_NEAR(a.doa_posterior[i], b.doa_posterior[i], 1e-12);
  for (std::size_t i = 0; i < a.class_probs.size(); ++i) EXPECT_NEAR(a.class_probs[i], b.class_probs[i], 1e-12);
}

TEST(Forward, WrongInputDimensionIsValidationError) {
  std::mt19937_64 rng(3);
  const SlcModel m = SlcModel::create(small_shape(), 3);
  EXPECT_ERRC(forward(m, random_segments(2, rng, 617)), Errc::validation);
}

TEST(Forward, TrainModeBatchNormIsStandardised) {
  std::mt19937_64 rng(4);
  SlcModel m = SlcModel::create(small_shape(64, 0.0), 4);
  std::vector<FeatureMatrix> xs;
  for (int b = 0; b < 32; ++b) xs.push_back(random_segments(2, rng));
  std::vector<const FeatureMatrix*> in;
  for (const auto& x : xs) in.push_back(&x);
  ForwardCache cache;
  forward_batch(m, in, Mode::train, &rng, &cache);
  for (std::size_t l : {kEmbed0, kEmbed1, kDoaHidden, kSecHidden}) {
    const Eigen::MatrixXd& xhat = cache.layers[l].normalized;
    const Eigen::RowVectorXd mean = xhat.colwise().mean();
    const Eigen::RowVectorXd var = (xhat.rowwise() - mean).array().square().colwise().mean();
    EXPECT_LE(mean.cwiseAbs().maxCoeff(), 1e-6) << kLayerNames[l];
    EXPECT_LE((var.array() - 1.0).abs().maxCoeff(), 1e-4) << kLayerNames[l];
  }
}

TEST(Forward, InvertedDropoutPreservesExpectation) {
  std::mt19937_64 rng(5);
  const SlcModel m = SlcModel::create(small_shape(8, 0.2), 5);
  Dense d = m.layers[kEmbed0];
  d.has_bn = true;
  const Eigen::MatrixXd x = random_segments(4, rng);
  LayerCache plain;
  const Eigen::MatrixXd ref = detail::hidden_layer(d, x, Mode::train, 0.0, nullptr, &plain);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(ref.rows(), ref.cols());
  constexpr int kMasks = 100000;
  for (int i = 0; i < kMasks; ++i) sum += detail::hidden_layer(d, x, Mode::train, 0.2, &rng, nullptr);
  sum /= kMasks;
  for (Eigen::Index i = 0; i < ref.size(); ++i) {
    if (ref.data()[i] < 0.05) continue;  // relative error is meaningless for near-zero units
    EXPECT_NEAR(sum.data()[i] / ref.data()[i], 1.0, 0.02);
  }
}

TEST(Losses, MseExamples) {
  const DoaCode t = encode_doa(40);
  EXPECT_EQ(mse_loss(t.values, t.values), 0.0);
  const std::vector<double> zeros(360, 0.0);
  double sq = 0.0;
  for (double v : t.values) sq += v * v;
  EXPECT_EQ(mse_loss(t.values, zeros), sq);
  std::vector<double> off = t.values;
  off[100] += 0.5;
  EXPECT_EQ(mse_loss(t.values, off), 0.25);
}

TEST(Losses, CrossEntropyExamples) {
  EXPECT_EQ(ce_loss(2, std::vector<double>{0, 0, 1, 0}), 0.0);
  EXPECT_NEAR(ce_loss(4, std::vector<double>(10, 0.1)), std::log(10.0), 1e-12);
  EXPECT_NEAR(ce_loss(0, std::vector<double>{0.7, 0.2, 0.1}), 0.35667494393873245, 1e-12);
  EXPECT_ERRC(ce_loss(3, std::vector<double>{0.5, 0.5}), Errc::validation);
}

TEST(Losses, CombinedEndpointsAreExact) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double mse = u(rng), ce = u(rng);
    EXPECT_EQ(combined_loss(mse, ce, 1.0), mse);
    EXPECT_EQ(combined_loss(mse, ce, 0.0), ce);
  }
  EXPECT_DOUBLE_EQ(combined_loss(2.0, 1.0, 0.99), 1.99);
  EXPECT_ERRC(combined_loss(1.0, 1.0, 1.5), Errc::validation);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto r = gradcheck::run(seed);
    EXPECT_LE(r.worst_rel, 1e-4) << "seed " << seed << " worst at " << r.worst_name;
    EXPECT_LE(r.kinks, r.checked / 100);
  }
}

TEST(Backward, SingleTaskLambdasMatchFiniteDifferences) {
  for (const double lambda : {0.0, 1.0}) {
    gradcheck::Setup s;
    s.lambda = lambda;
    const auto r = gradcheck::run(11, s);
    EXPECT_LE(r.worst_rel, 1e-4) << "lambda " << lambda << " worst at " << r.worst_name;
  }
}

TEST(Backward, LambdaOneZeroesEventBranch) {
  std::mt19937_64 rng(7);
  const SlcModel m = SlcModel::create(small_shape(), 7);
  std::vector<TrainingExample> ex(4);
  for (int i = 0; i < 4; ++i) {
    ex[static_cast<std::size_t>(i)].segments = random_segments(2, rng);
    ex[static_cast<std::size_t>(i)].doa_target = encode_doa(10 + 50 * i);
    ex[static_cast<std::size_t>(i)].class_id = i;
  }
  const std::vector<const TrainingExample*> batch{&ex[0], &ex[1], &ex[2], &ex[3]};
  const GradientResult g = compute_gradients(m, batch, 1.0, rng);
  for (std::size_t l : {kSecHidden, kSecOut}) {
    EXPECT_EQ(g.gradients.layers[l].weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.gradients.layers[l].bias.cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_EQ(g.gradients.layers[kSecHidden].gamma.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, DuplicatedBatchGivesSameGradient) {
  // BN statistics of a batch and of the batch repeated twice are identical,
  // so mean reduction makes the gradients match.
  std::mt19937_64 rng(8);
  const SlcModel m = SlcModel::create(small_shape(16, 0.0), 8);
  std::vector<TrainingExample> ex(3);
  for (int i = 0; i < 3; ++i) {
    ex[static_cast<std::size_t>(i)].segments = random_segments(2, rng);
    ex[static_cast<std::size_t>(i)].doa_target = encode_doa(100 + i);
    ex[static_cast<std::size_t>(i)].class_id = i;
  }
  const std::vector<const TrainingExample*> once{&ex[0], &ex[1], &ex[2]};
  const std::vector<const TrainingExample*> twice{&ex[0], &ex[1], &ex[2], &ex[0], &ex[1], &ex[2]};
  GradientResult a = compute_gradients(m, once, 0.5, rng);
  GradientResult b = compute_gradients(m, twice, 0.5, rng);
  const auto va = a.gradients.views(), vb = b.gradients.views();
  ASSERT_EQ(va.size(), vb.size());
  for (std::size_t t = 0; t < va.size(); ++t)
    for (std::size_t i = 0; i < va[t].size(); ++i)
      EXPECT_NEAR(va[t][i], vb[t][i], 1e-10 + 1e-8 * std::abs(va[t][i]));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{0.5}, g{1.0};
  const std::vector<std::span<double>> ps{p}, gs{g};
  AdamState st;
  adam_step(ps, gs, st, AdamConfig{0.001});
  EXPECT_NEAR(p[0], 0.5 - 0.001, 1e-10);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{0.3, -2.0}, g{0.0, 0.0};
  const std::vector<std::span<double>> ps{p}, gs{g};
  AdamState st;
  for (int i = 0; i < 100; ++i) adam_step(ps, gs, st);
  EXPECT_EQ(p, (std::vector<double>{0.3, -2.0}));
}

TEST(Adam, IdenticalHistoriesGiveIdenticalUpdates) {
  std::vector<double> p{1.0, 1.0}, g(2);
  const std::vector<std::span<double>> ps{p}, gs{g};
  AdamState st;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int i = 0; i < 50; ++i) {
    g[0] = g[1] = n(rng);
    adam_step(ps, gs, st);
  }
  EXPECT_EQ(p[0], p[1]);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testutil::TempDir dir;
  std::mt19937_64 rng(10);
  SlcModel m = SlcModel::create(small_shape(12), 10);
  gradcheck::perturb_model(m, rng);
  for (auto& d : m.layers)
    if (d.has_bn) d.bn.running_var.setConstant(0.7);
  save_checkpoint(m, dir / "m.slcm");
  const SlcModel back = load_checkpoint(dir / "m.slcm");
  EXPECT_EQ(back.shape, m.shape);
  const FeatureMatrix x = random_segments(3, rng);
  const Prediction a = forward(m, x), b = forward(back, x);
  for (std::size_t i = 0; i < a.doa_posterior.size(); ++i) EXPECT_NEAR(a.doa_posterior[i], b.doa_posterior[i], 1e-12);
  for (std::size_t i = 0; i < a.class_probs.size(); ++i) EXPECT_NEAR(a.class_probs[i], b.class_probs[i], 1e-12);
}

TEST(Checkpoint, TruncatedIsFormatError) {
  testutil::TempDir dir;
  save_checkpoint(SlcModel::create(small_shape(12), 11), dir / "m.slcm");
  std::filesystem::resize_file(dir / "m.slcm", std::filesystem::file_size(dir / "m.slcm") - 9);
  EXPECT_ERRC(load_checkpoint(dir / "m.slcm"), Errc::format);
}

TEST(Checkpoint, ShapeMismatchReportsBothShapes) {
  testutil::TempDir dir;
  save_checkpoint(SlcModel::create(small_shape(12), 12), dir / "m.slcm");
  try {
    load_checkpoint(dir / "m.slcm", small_shape(32));
    FAIL() << "no throw";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::shape);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("hidden 12"), std::string::npos) << msg;
    EXPECT_NE(msg.find("hidden 32"), std::string::npos) << msg;
  }
}

TEST(Model, InvalidClassIdIsShapeError) {
  std::mt19937_64 rng(13);
  const SlcModel m = SlcModel::create(small_shape(), 13);
  TrainingExample a, b;
  a.segments = random_segments(1, rng);
  b.segments = random_segments(1, rng);
  b.class_id = 12;
  const std::vector<const TrainingExample*> batch{&a, &b};
  EXPECT_ERRC(compute_gradients(m, batch, 0.5, rng), Errc::shape);
}
