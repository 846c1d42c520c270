#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace wsonar {

// Real-input FFT of a fixed size backed by FFTW. Plans are created under a
// global lock; an instance owns its buffers and is not itself thread-safe.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  RealFft(RealFft&&) noexcept;
  RealFft& operator=(RealFft&&) noexcept;

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  // Unnormalized forward transform; `in` is zero-padded to size().
  void forward(std::span<const double> in, std::span<std::complex<double>> out);
  // Unnormalized inverse transform (result is n times the true inverse).
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

 private:
  struct Impl;
  std::size_t n_ = 0;
  std::unique_ptr<Impl> impl_;
};

// Smallest 2^a 3^b 5^c >= n.
std::size_t fft_friendly_size(std::size_t n);

// Full linear convolution, length a.size() + b.size() - 1.
std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b);

}  // namespace wsonar
