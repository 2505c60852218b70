#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sloclas/array_sim.hpp"
#include "sloclas/features.hpp"
#include "test_util.hpp"

using namespace sloclas;

namespace {

constexpr int kFs = 48000;

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::white_noise(n, rng, 0.3);
}

}  // namespace

TEST(ArrayGeometry, DefaultSquareFitsLagRange) {
  const auto g = ArrayGeometry::square();
  EXPECT_NEAR(g.aperture_m(), 0.064 * std::sqrt(2.0), 1e-15);
  EXPECT_LE(g.aperture_m() * kFs / g.speed_of_sound_mps, 25.0);
  EXPECT_NO_THROW(g.validate(kFs));
}

TEST(ArrayGeometry, OversizedArrayIsGeometryError) {
  EXPECT_ERRC(ArrayGeometry::square(0.3).validate(kFs), Errc::geometry);
}

TEST(Propagate, PerpendicularBisectorGivesIdenticalChannels) {
  // Mics 0 and 1 sit at (+h,+h) and (-h,+h); the y axis bisects them.
  const auto src = noise(4096, 1);
  const AudioClip c = propagate(src, {90, 1.5}, ArrayGeometry::square(), kFs);
  double worst = 0.0;
  for (std::size_t i = 0; i < c.num_samples(); ++i) worst = std::max(worst, std::abs(c.channel(0)[i] - c.channel(1)[i]));
  EXPECT_LT(worst, 1e-12);
}

TEST(Propagate, NinetyDegreesGccMatchesGeometry) {
  const auto geom = ArrayGeometry::square();
  const auto src = noise(8160 + 512, 2);
  const AudioClip c = propagate(src, {90, 1.5}, geom, kFs);
  for (const auto& [a, b] : kMicPairs) {
    const auto ch_a = c.channel(a).subspan(512, 8160);
    const auto ch_b = c.channel(b).subspan(512, 8160);
    const int expected = static_cast<int>(std::lround(geometric_tdoa_samples({90, 1.5}, geom, kFs, a, b)));
    EXPECT_EQ(gcc_peak_lag(gcc_phat(ch_a, ch_b)), expected) << "pair " << a << "," << b;
  }
}

TEST(Propagate, ZeroSourceGivesZeroChannels) {
  const std::vector<double> z(1000, 0.0);
  const AudioClip c = propagate(z, {45, 1.5}, ArrayGeometry::square(), kFs);
  EXPECT_EQ(c.samples.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Propagate, IntegerDelayMatchesShiftedCopy) {
  // Pick c so that the distance is exactly 300 samples: each channel is the
  // source shifted by round(d/c*fs), attenuated by 1/d (exact for integer delays).
  ArrayGeometry g{{Point2{0, 0}, Point2{0, 0}, Point2{0, 0}, Point2{0, 0}}, 343.0};
  const double d = 300.0 * 343.0 / kFs;
  const auto src = noise(1024, 3);
  const AudioClip c = propagate(src, {0, d}, g, kFs);
  for (std::size_t i = 300; i < src.size(); ++i) EXPECT_NEAR(c.channel(2)[i], src[i - 300] / d, 1e-9);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_NEAR(c.channel(2)[i], 0.0, 1e-9);
}

TEST(Propagate, IsLinear) {
  const auto geom = ArrayGeometry::square();
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = noise(3000, 10 + trial), b = noise(3000, 100 + trial);
    std::vector<double> sum(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) sum[i] = a[i] + b[i];
    const SourcePlacement p{1 + 37 * trial, 1.5};
    const AudioClip ca = propagate(a, p, geom, kFs), cb = propagate(b, p, geom, kFs), cs = propagate(sum, p, geom, kFs);
    const double err = (cs.samples - ca.samples - cb.samples).norm();
    EXPECT_LE(err, 1e-9 * cs.samples.norm());
  }
}

TEST(Propagate, EveryGridDoaPeaksAtRoundedTdoa) {
  const auto geom = ArrayGeometry::square();
  const auto src = noise(8160 + 512, 4);
  for (int doa = 1; doa <= 356; doa += 5) {
    const AudioClip c = propagate(src, {doa, 1.5}, geom, kFs);
    for (const auto& [a, b] : kMicPairs) {
      const int expected = static_cast<int>(std::lround(geometric_tdoa_samples({doa, 1.5}, geom, kFs, a, b)));
      const auto g = gcc_phat(c.channel(a).subspan(512, 8160), c.channel(b).subspan(512, 8160));
      ASSERT_EQ(gcc_peak_lag(g), expected) << "doa " << doa << " pair " << a << "," << b;
    }
  }
}

TEST(MixNoise, ZeroDbGivesUnitEnergyRatio) {
  const AudioClip clean(SampleMatrix::Map(noise(4000, 5).data(), 4, 1000), kFs);
  const AudioClip nz(SampleMatrix::Map(noise(2000, 6).data(), 4, 500), kFs);
  const AudioClip mixed = mix_noise(clean, nz, 0.0);
  const double noise_energy = (mixed.samples - clean.samples).squaredNorm();
  EXPECT_NEAR(total_energy(clean) / noise_energy, 1.0, 1e-6);
}

TEST(MixNoise, TwentyDbOnUnitEnergy) {
  AudioClip clean(SampleMatrix::Map(noise(400, 7).data(), 4, 100), kFs);
  clean.samples /= clean.samples.norm();
  const AudioClip nz(SampleMatrix::Map(noise(400, 8).data(), 4, 100), kFs);
  const AudioClip mixed = mix_noise(clean, nz, 20.0);
  EXPECT_NEAR((mixed.samples - clean.samples).squaredNorm(), 0.01, 1e-12);
}

TEST(MixNoise, ReMeasuredSnrWithinHundredthDb) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> snr(-10.0, 40.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double target = snr(rng);
    const AudioClip clean(SampleMatrix::Map(noise(4000, 20 + trial).data(), 4, 1000), kFs);
    const AudioClip nz(SampleMatrix::Map(noise(1200, 90 + trial).data(), 4, 300), kFs);
    const AudioClip mixed = mix_noise(clean, nz, target);
    const double measured = 10.0 * std::log10(total_energy(clean) / (mixed.samples - clean.samples).squaredNorm());
    EXPECT_NEAR(measured, target, 0.01);
  }
}

TEST(MixNoise, ZeroEnergyCleanIsDegenerate) {
  const AudioClip clean(SampleMatrix::Zero(4, 100), kFs);
  const AudioClip nz(SampleMatrix::Map(noise(400, 8).data(), 4, 100), kFs);
  EXPECT_ERRC(mix_noise(clean, nz, 10.0), Errc::degenerate_input);
}

TEST(MixNoise, ChannelMismatchIsChannelCountError) {
  const AudioClip clean(SampleMatrix::Ones(4, 100), kFs);
  const AudioClip nz(SampleMatrix::Ones(2, 100), kFs);
  EXPECT_ERRC(mix_noise(clean, nz, 10.0), Errc::channel_count);
}
