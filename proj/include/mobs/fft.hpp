#pragma once

// Thin RAII layer over FFTW (double precision). Plans are cached per shape and
// executed with the new-array interface, so one plan serves many threads.

#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "mobs/volume.hpp"

namespace mobs::fft {

using Complex = std::complex<double>;

struct FftwDeleter {
  void operator()(void* p) const;
};

template <typename T>
using Buffer = std::unique_ptr<T[], FftwDeleter>;

Buffer<double> alloc_real(std::int64_t n);
Buffer<Complex> alloc_complex(std::int64_t n);

/// Number of complex coefficients of a real transform over `dims`
/// (x axis halved: nx/2 + 1).
std::int64_t half_spectrum_size(const Dims& dims);

/// Real-to-complex transform pair over a fixed shape (1, 2 or 3 dims; axes of
/// length one are dropped). Inverse is unnormalized.
class RealPlan {
 public:
  explicit RealPlan(const Dims& dims);
  ~RealPlan();
  RealPlan(const RealPlan&) = delete;
  RealPlan& operator=(const RealPlan&) = delete;

  const Dims& dims() const { return dims_; }
  std::int64_t spectrum_size() const { return half_spectrum_size(dims_); }

  // Buffers must come from alloc_real/alloc_complex. The inverse destroys its input.
  void forward(double* in, Complex* out) const;
  void inverse(Complex* in, double* out) const;

 private:
  Dims dims_;
  void* forward_ = nullptr;
  void* inverse_ = nullptr;
};

/// Shared plan for `dims`; created on first use.
const RealPlan& real_plan(const Dims& dims);

/// Full complex DFT over `dims` (sign -1 forward, +1 inverse, unnormalized).
std::vector<Complex> dft(const Dims& dims, const std::vector<Complex>& in, int sign);

}  // namespace mobs::fft
