#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <vector>

namespace sloclas {

using Complex = std::complex<double>;

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

namespace detail {

// FFTW planning is not thread-safe; execution with the new-array interface is.
// Plans are created once per size and shared for the lifetime of the process.
class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftw_plan forward(std::size_t n) { return get(n, true); }
  fftw_plan inverse(std::size_t n) { return get(n, false); }

  FftPlanCache(const FftPlanCache&) = delete;
  FftPlanCache& operator=(const FftPlanCache&) = delete;

 private:
  FftPlanCache() = default;
  ~FftPlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(std::size_t n, bool forward) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_pair(n, forward);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<double> real(n);
    std::vector<Complex> spec(n / 2 + 1);
    auto* cplx = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan plan = forward
        ? fftw_plan_dft_r2c_1d(static_cast<int>(n), real.data(), cplx, flags)
        : fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx, real.data(), flags);
    plans_.emplace(key, plan);
    return plan;
  }

  std::mutex mutex_;
  std::map<std::pair<std::size_t, bool>, fftw_plan> plans_;
};

}  // namespace detail

/// Real-input DFT of `x` zero-padded (or truncated) to `n` points; returns bins 0..n/2.
inline std::vector<Complex> rfft(std::span<const double> x, std::size_t n) {
  std::vector<double> buf(n, 0.0);
  const std::size_t m = std::min(n, x.size());
  std::copy_n(x.begin(), m, buf.begin());
  std::vector<Complex> out(n / 2 + 1);
  fftw_execute_dft_r2c(detail::FftPlanCache::instance().forward(n), buf.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

/// Inverse of rfft including the 1/n factor. `spec` holds bins 0..n/2.
inline std::vector<double> irfft(std::span<const Complex> spec, std::size_t n) {
  std::vector<Complex> buf(spec.begin(), spec.end());
  buf.resize(n / 2 + 1);
  std::vector<double> out(n);
  fftw_execute_dft_c2r(detail::FftPlanCache::instance().inverse(n),
                       reinterpret_cast<fftw_complex*>(buf.data()), out.data());
  const double scale = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= scale;
  return out;
}

}  // namespace sloclas
