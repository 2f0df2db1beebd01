#include "mobs/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

#include "mobs/parallel.hpp"

namespace mobs::fft {

namespace {

// The FFTW planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<int> fftw_shape(const Dims& d) {
  std::vector<int> shape;
  if (d.nz > 1) shape.push_back(static_cast<int>(d.nz));
  if (d.ny > 1) shape.push_back(static_cast<int>(d.ny));
  shape.push_back(static_cast<int>(d.nx));
  return shape;
}

}  // namespace

void FftwDeleter::operator()(void* p) const { fftw_free(p); }

Buffer<double> alloc_real(std::int64_t n) {
  auto* p = static_cast<double*>(fftw_malloc(sizeof(double) * static_cast<std::size_t>(std::max<std::int64_t>(n, 1))));
  if (!p) throw std::bad_alloc();
  return Buffer<double>(p);
}

Buffer<Complex> alloc_complex(std::int64_t n) {
  auto* p = static_cast<Complex*>(fftw_malloc(sizeof(Complex) * static_cast<std::size_t>(std::max<std::int64_t>(n, 1))));
  if (!p) throw std::bad_alloc();
  return Buffer<Complex>(p);
}

std::int64_t half_spectrum_size(const Dims& d) { return (d.nx / 2 + 1) * d.ny * d.nz; }

RealPlan::RealPlan(const Dims& dims) : dims_(dims) {
  const std::vector<int> shape = fftw_shape(dims);
  auto in = alloc_real(dims.size());
  auto out = alloc_complex(half_spectrum_size(dims));
  std::lock_guard lock(planner_mutex());
  forward_ = fftw_plan_dft_r2c(static_cast<int>(shape.size()), shape.data(), in.get(),
                               reinterpret_cast<fftw_complex*>(out.get()), FFTW_ESTIMATE);
  inverse_ = fftw_plan_dft_c2r(static_cast<int>(shape.size()), shape.data(),
                               reinterpret_cast<fftw_complex*>(out.get()), in.get(), FFTW_ESTIMATE);
  if (!forward_ || !inverse_) throw NumericError("FFTW failed to create a plan for " + to_string(dims));
}

RealPlan::~RealPlan() {
  std::lock_guard lock(planner_mutex());
  if (forward_) fftw_destroy_plan(static_cast<fftw_plan>(forward_));
  if (inverse_) fftw_destroy_plan(static_cast<fftw_plan>(inverse_));
}

void RealPlan::forward(double* in, Complex* out) const {
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_), in, reinterpret_cast<fftw_complex*>(out));
}

void RealPlan::inverse(Complex* in, double* out) const {
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_), reinterpret_cast<fftw_complex*>(in), out);
}

const RealPlan& real_plan(const Dims& dims) {
  static std::mutex cache_mutex;
  static std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, std::unique_ptr<RealPlan>> cache;
  std::lock_guard lock(cache_mutex);
  auto& slot = cache[{dims.nx, dims.ny, dims.nz}];
  if (!slot) slot = std::make_unique<RealPlan>(dims);
  return *slot;
}

std::vector<Complex> dft(const Dims& dims, const std::vector<Complex>& in, int sign) {
  const std::vector<int> shape = fftw_shape(dims);
  const std::int64_t n = dims.size();
  auto a = alloc_complex(n);
  auto b = alloc_complex(n);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft(static_cast<int>(shape.size()), shape.data(), reinterpret_cast<fftw_complex*>(a.get()),
                         reinterpret_cast<fftw_complex*>(b.get()), sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD,
                         FFTW_ESTIMATE);
  }
  std::copy(in.begin(), in.end(), a.get());
  fftw_execute(plan);
  std::vector<Complex> out(b.get(), b.get() + n);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
  return out;
}

}  // namespace mobs::fft
