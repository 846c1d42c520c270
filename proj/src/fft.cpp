#include "wsonar/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <mutex>

#include "wsonar/error.hpp"

namespace wsonar {
namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

struct RealFft::Impl {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;

  ~Impl() {
    std::lock_guard lock(planner_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (inv) fftw_destroy_plan(inv);
    if (real) fftw_free(real);
    if (spec) fftw_free(spec);
  }
};

RealFft::RealFft(std::size_t n) : n_(n), impl_(std::make_unique<Impl>()) {
  require(n >= 1, Errc::invalid_config, "fft size must be positive");
  std::lock_guard lock(planner_mutex());
  impl_->real = fftw_alloc_real(n);
  impl_->spec = fftw_alloc_complex(n / 2 + 1);
  const int ni = static_cast<int>(n);
  impl_->fwd = fftw_plan_dft_r2c_1d(ni, impl_->real, impl_->spec, FFTW_ESTIMATE);
  impl_->inv = fftw_plan_dft_c2r_1d(ni, impl_->spec, impl_->real, FFTW_ESTIMATE);
}

RealFft::~RealFft() = default;
RealFft::RealFft(RealFft&&) noexcept = default;
RealFft& RealFft::operator=(RealFft&&) noexcept = default;

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  require(in.size() <= n_ && out.size() >= bins(), Errc::length_mismatch, "fft buffer size");
  std::copy(in.begin(), in.end(), impl_->real);
  std::fill(impl_->real + in.size(), impl_->real + n_, 0.0);
  fftw_execute(impl_->fwd);
  std::memcpy(static_cast<void*>(out.data()), impl_->spec, sizeof(fftw_complex) * bins());
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
  require(in.size() >= bins() && out.size() >= n_, Errc::length_mismatch, "ifft buffer size");
  // c2r destroys its input, so work on the owned copy.
  std::memcpy(impl_->spec, in.data(), sizeof(fftw_complex) * bins());
  fftw_execute(impl_->inv);
  std::copy(impl_->real, impl_->real + n_, out.begin());
}

std::size_t fft_friendly_size(std::size_t n) {
  if (n <= 1) return 1;
  for (std::size_t m = n;; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2u, 3u, 5u})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  RealFft fft(fft_friendly_size(out_len));
  std::vector<std::complex<double>> fa(fft.bins()), fb(fft.bins());
  fft.forward(a, fa);
  fft.forward(b, fb);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  std::vector<double> out(fft.size());
  fft.inverse(fa, out);
  out.resize(out_len);
  const double scale = 1.0 / static_cast<double>(fft.size());
  for (double& v : out) v *= scale;
  return out;
}

}  // namespace wsonar
