#include <gtest/gtest.h>

#include <random>

#include "sloclas/dataset.hpp"
#include "sloclas/eval.hpp"
#include "test_util.hpp"

using namespace sloclas;

namespace {

using V = std::vector<int>;

}  // namespace

TEST(Mae, HandComputed) {
  EXPECT_EQ(mae(V{10, 20}, V{10, 20}), 0.0);
  EXPECT_EQ(mae(V{10, 20}, V{13, 28}), 5.5);
  EXPECT_EQ(mae(V{1}, V{359}), 2.0);
  EXPECT_EQ(mae(V{1, 90, 180}, V{359, 270, 181}), (2.0 + 180.0 + 1.0) / 3.0);
}

TEST(Mae, SymmetricAndBounded) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> d(1, 360);
  for (int trial = 0; trial < 100; ++trial) {
    V a(50), b(50);
    for (auto& v : a) v = d(rng);
    for (auto& v : b) v = d(rng);
    EXPECT_EQ(mae(a, b), mae(b, a));
    EXPECT_LE(mae(a, b), 180.0);
  }
}

TEST(Mae, LengthMismatchAndEmptyAreValidationErrors) {
  EXPECT_ERRC(mae(V{1, 2}, V{1}), Errc::validation);
  EXPECT_ERRC(mae(V{}, V{}), Errc::validation);
}

TEST(AccTheta, BoundaryCountsAsCorrect) {
  EXPECT_EQ(acc_theta(V{100, 100, 100}, V{100, 100, 100}, 5.0), 100.0);
  EXPECT_NEAR(acc_theta(V{100, 100, 100}, V{103, 105, 106}, 5.0), 200.0 / 3.0, 1e-12);
  EXPECT_EQ(acc_theta(V{100, 100, 100, 100}, V{100, 101, 100, 359}, 0.0), 50.0);
  EXPECT_EQ(acc_theta(V{1}, V{356}, 5.0), 100.0);
}

TEST(AccTheta, MonotoneInEta) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> d(1, 360), jitter(-15, 15);
  V t(500), e(500);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = d(rng);
    e[i] = ((t[i] - 1 + jitter(rng)) % 360 + 360) % 360 + 1;
  }
  double prev = -1.0;
  for (int eta = 0; eta <= 20; ++eta) {
    const double a = acc_theta(t, e, eta);
    EXPECT_GE(a, prev);
    prev = a;
  }
}

TEST(AccEvent, CountsAndConfusion) {
  EXPECT_EQ(acc_event(V{0, 1, 2}, V{0, 1, 2}), 100.0);
  ConfusionMatrix cm;
  const V truth{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const V pred{0, 1, 2, 3, 4, 5, 6, 7, 0, 0};
  EXPECT_EQ(acc_event(truth, pred, &cm, 10), 80.0);
  long long trace = 0, total = 0;
  for (std::size_t i = 0; i < cm.size(); ++i)
    for (std::size_t j = 0; j < cm.size(); ++j) {
      total += cm[i][j];
      if (i == j) trace += cm[i][j];
    }
  EXPECT_EQ(100.0 * static_cast<double>(trace) / static_cast<double>(total), 80.0);
  EXPECT_EQ(cm[8][0], 1);
  EXPECT_ERRC(acc_event(V{}, V{}), Errc::validation);
}

TEST(AccEvent, UniformGuesserNearTenPercent) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> c(0, 9);
  V t(2000), p(2000);
  for (auto& v : t) v = c(rng);
  for (auto& v : p) v = c(rng);
  EXPECT_NEAR(acc_event(t, p), 10.0, 3.0);
}

TEST(Evaluate, OracleDoaModelScoresPerfectly) {
  // Zero hidden weights with bias = code logit make the DoA head emit the target encoding.
  ModelShape shape;
  shape.hidden = 4;
  shape.dropout = 0.0;
  SlcModel m = SlcModel::create(shape, 1);
  const int truth = 123;
  const DoaCode code = encode_doa(truth);
  m.layers[kDoaOut].weight.setZero();
  for (int i = 0; i < 360; ++i) {
    const double p = std::min(code.values[static_cast<std::size_t>(i)], 0.999);
    m.layers[kDoaOut].bias(i) = std::log(p / (1.0 - p));
  }
  m.layers[kSecOut].weight.setZero();
  m.layers[kSecOut].bias.setZero();
  m.layers[kSecOut].bias(4) = 5.0;
  std::vector<TrainingExample> ex(20);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (auto& e : ex) {
    e.segments = FeatureMatrix(2, 618);
    for (Eigen::Index i = 0; i < e.segments.size(); ++i) e.segments.data()[i] = g(rng);
    e.doa_deg = truth;
    e.class_id = 4;
  }
  std::vector<const TrainingExample*> ptrs;
  for (const auto& e : ex) ptrs.push_back(&e);
  const auto names = class_name_list();
  const EvalReport r = evaluate(m, ptrs, 5.0, names);
  EXPECT_EQ(r.mae_deg, 0.0);
  EXPECT_EQ(r.acc_theta_pct, 100.0);
  EXPECT_EQ(r.acc_event_pct, 100.0);
  EXPECT_EQ(r.num_samples, 20);
  EXPECT_EQ(r.per_class.at("horn"), 100.0);
}

TEST(Report, JsonRoundTripIsLossless) {
  EvalReport r;
  r.mae_deg = 4.387654321987;
  r.acc_theta_pct = 95.2100000001;
  r.acc_event_pct = 80.01;
  r.eta_deg = 5.0;
  r.num_samples = 1234;
  r.confusion = {{1, 2}, {3, 4}};
  r.per_class = {{"bells", 33.333333333333336}, {"bottles", 57.142857142857146}};
  const auto j = to_json(r);
  for (const char* key : {"mae_deg", "acc_theta_pct", "acc_event_pct", "eta_deg", "confusion", "per_class", "num_samples"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(report_from_json(nlohmann::json::parse(j.dump())), r);
}

TEST(Report, TextTableShowsNotApplicable) {
  EvalReport r;
  r.mae_deg = 1.5;
  const std::string with = to_text(r, true), without = to_text(r, false);
  EXPECT_NE(with.find("MAE"), std::string::npos);
  EXPECT_NE(without.find("NA"), std::string::npos);
  EXPECT_EQ(with.find("NA"), std::string::npos);
}
