#include "mobs/search.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <unordered_map>

#include "mobs/fft.hpp"
#include "mobs/parallel.hpp"
#include "mobs/stats.hpp"

namespace mobs {

namespace {

void validate_kernel(const Dims& d, const StackKernel& k) {
  if (k.slices.empty()) throw InputError("empty kernel");
  if (k.weights.size() != k.slices.size()) throw InputError("kernel needs one weight per slice");
  if (k.depth() % 2 == 0) throw InputError("kernel depth must be odd");
  const Dims kd = k.slices.front().dims();
  if (kd.nx % 2 == 0 || kd.ny % 2 == 0 || !kd.is_2d()) throw InputError("kernel slices must be odd-sized 2D arrays");
  for (const auto& s : k.slices) {
    if (s.dims() != kd) throw InputError("kernel slices differ in size");
  }
  if (kd.nx > d.nx || kd.ny > d.ny || k.depth() > d.nz) {
    throw InputError("kernel " + to_string(Dims{kd.nx, kd.ny, k.depth()}) + " is larger than phantom " + to_string(d));
  }
}

std::int64_t wrap(std::int64_t i, std::int64_t n) { return ((i % n) + n) % n; }

// conj(FFT(kernel centered at the origin)) * weight / (nx * ny).
std::vector<fft::Complex> kernel_spectrum(const Volume& kernel, double weight, const Dims& plane,
                                          const fft::RealPlan& plan) {
  auto real = fft::alloc_real(plane.size());
  std::fill_n(real.get(), plane.size(), 0.0);
  const Dims kd = kernel.dims();
  const std::int64_t cx = kd.nx / 2;
  const std::int64_t cy = kd.ny / 2;
  for (std::int64_t j = 0; j < kd.ny; ++j) {
    const std::int64_t y = wrap(j - cy, plane.ny);
    for (std::int64_t i = 0; i < kd.nx; ++i) {
      real[wrap(i - cx, plane.nx) + plane.nx * y] = kernel(i, j);
    }
  }
  const std::int64_t h = plan.spectrum_size();
  auto spec = fft::alloc_complex(h);
  plan.forward(real.get(), spec.get());
  const double scale = weight / static_cast<double>(plane.size());
  std::vector<fft::Complex> out(static_cast<std::size_t>(h));
  for (std::int64_t i = 0; i < h; ++i) out[i] = std::conj(spec[i]) * scale;
  return out;
}

template <typename T>
void correlate(std::span<const T> in, const Dims& d, const StackKernel& k, std::span<T> out, int jobs) {
  validate_kernel(d, k);
  const Dims plane{d.nx, d.ny, 1};
  const std::int64_t pixels = plane.size();
  const auto& plan = fft::real_plan(plane);
  const std::int64_t h = plan.spectrum_size();
  const int depth = k.depth();
  const int center = depth / 2;

  std::vector<std::vector<fft::Complex>> kernel_spectra(static_cast<std::size_t>(depth));
  parallel_for(
      depth,
      [&](std::int64_t s) {
        kernel_spectra[static_cast<std::size_t>(s)] =
            kernel_spectrum(k.slices[static_cast<std::size_t>(s)], k.weights[static_cast<std::size_t>(s)], plane, plan);
      },
      jobs);

  using Stored = std::complex<T>;
  std::vector<std::vector<Stored>> slice_spectra(static_cast<std::size_t>(d.nz));
  parallel_for(
      d.nz,
      [&](std::int64_t z) {
        auto real = fft::alloc_real(pixels);
        auto spec = fft::alloc_complex(h);
        std::copy_n(in.begin() + z * pixels, pixels, real.get());
        plan.forward(real.get(), spec.get());
        auto& dst = slice_spectra[static_cast<std::size_t>(z)];
        dst.resize(static_cast<std::size_t>(h));
        for (std::int64_t i = 0; i < h; ++i) dst[i] = Stored(static_cast<T>(spec[i].real()), static_cast<T>(spec[i].imag()));
      },
      jobs);

  parallel_for(
      d.nz,
      [&](std::int64_t z) {
        auto acc = fft::alloc_complex(h);
        auto real = fft::alloc_real(pixels);
        auto* a = reinterpret_cast<double*>(acc.get());
        std::fill_n(a, 2 * h, 0.0);
        for (int s = 0; s < depth; ++s) {
          const auto& p = slice_spectra[static_cast<std::size_t>(wrap(z + s - center, d.nz))];
          const auto& t = kernel_spectra[static_cast<std::size_t>(s)];
          for (std::int64_t i = 0; i < h; ++i) {
            const double pr = p[i].real();
            const double pi = p[i].imag();
            const double tr = t[i].real();
            const double ti = t[i].imag();
            a[2 * i] += pr * tr - pi * ti;
            a[2 * i + 1] += pr * ti + pi * tr;
          }
        }
        plan.inverse(acc.get(), real.get());
        std::transform(real.get(), real.get() + pixels, out.begin() + z * pixels,
                       [](double v) { return static_cast<T>(v); });
      },
      jobs);
}

}  // namespace

StackKernel as_stack(const Volume& kernel) {
  StackKernel k;
  for (std::int64_t z = 0; z < kernel.dims().nz; ++z) {
    k.slices.push_back(kernel.slice(z));
    k.weights.push_back(1.0);
  }
  return k;
}

StackKernel as_stack(const LinearTemplate& t) { return StackKernel{{t.spatial_kernel}, {1.0}}; }

StackKernel as_stack(const LinearTemplate3D& t) {
  StackKernel k;
  for (int s = 0; s < t.n_slices(); ++s) {
    k.slices.push_back(t.slice_templates[static_cast<std::size_t>(s)].spatial_kernel);
    k.weights.push_back(t.slice_weights[s]);
  }
  return k;
}

StackKernel as_stack(const AnyTemplate& t) {
  return std::visit([](const auto& v) { return as_stack(v); }, t);
}

Volume response_map(const Volume& phantom, const StackKernel& kernel, int jobs) {
  Volume out(phantom.dims(), phantom.spacing());
  correlate<double>(phantom.values(), phantom.dims(), kernel, out.values(), jobs);
  return out;
}

VolumeF response_map(const VolumeF& phantom, const StackKernel& kernel, int jobs) {
  VolumeF out(phantom.dims(), phantom.spacing());
  correlate<float>(phantom.values(), phantom.dims(), kernel, out.values(), jobs);
  return out;
}

VolumeF response_map(VolumeF&& phantom, const StackKernel& kernel, int jobs) {
  // Every slice spectrum is taken before the first output slice is written.
  VolumeF out = std::move(phantom);
  correlate<float>(out.values(), out.dims(), kernel, out.values(), jobs);
  return out;
}

template <typename T>
SearchResult search_score(const BasicVolume<T>& map, const BinaryMask& mask) {
  if (mask.dims() != map.dims()) throw InputError("mask dims differ from map dims");
  SearchResult best;
  best.score = -std::numeric_limits<double>::infinity();
  const auto values = map.values();
  for (std::int64_t i = 0; i < map.size(); ++i) {
    if (mask[i] && (best.index < 0 || values[i] > best.score)) {
      best.score = values[i];
      best.index = i;
    }
  }
  if (best.index < 0) throw InputError("search mask is empty");
  best.location = map.voxel(best.index);
  return best;
}

template SearchResult search_score(const Volume&, const BinaryMask&);
template SearchResult search_score(const VolumeF&, const BinaryMask&);

double neighborhood_max(const Volume& map, const Voxel& center, const Dims& neighborhood) {
  const CropSpec spec{center, neighborhood};
  check_crop_bounds(map.dims(), spec);
  double best = -std::numeric_limits<double>::infinity();
  for (std::int64_t z = center.z - neighborhood.nz / 2; z <= center.z + neighborhood.nz / 2; ++z) {
    for (std::int64_t y = center.y - neighborhood.ny / 2; y <= center.y + neighborhood.ny / 2; ++y) {
      for (std::int64_t x = center.x - neighborhood.nx / 2; x <= center.x + neighborhood.nx / 2; ++x) {
        best = std::max(best, map(x, y, z));
      }
    }
  }
  return best;
}

LkePhantom prepare_lke(const Volume& map, const std::optional<Voxel>& signal_center, const BinaryMask& mask,
                       const Dims& neighborhood) {
  if (mask.dims() != map.dims()) throw InputError("mask dims differ from map dims");
  LkePhantom p;
  p.masked_values.reserve(static_cast<std::size_t>(mask.count()));
  for (std::int64_t i = 0; i < map.size(); ++i) {
    if (mask[i]) p.masked_values.push_back(map[i]);
  }
  if (signal_center) {
    p.signal_value = neighborhood_max(map, *signal_center, neighborhood);
    p.label = 1;
  }
  return p;
}

double lke_draw(const LkePhantom& phantom, std::int64_t n_locations, bool signal_extra, Rng& rng) {
  if (n_locations < 1) throw InputError("LKE needs at least one location");
  const auto m = static_cast<std::int64_t>(phantom.masked_values.size());
  if (n_locations > m) {
    throw InputError("N = " + std::to_string(n_locations) + " exceeds the " + std::to_string(m) + " masked voxels");
  }
  std::int64_t draws = n_locations;
  double best = -std::numeric_limits<double>::infinity();
  if (phantom.signal_value) {
    best = *phantom.signal_value;
    if (!signal_extra) draws -= 1;
  }
  // Partial Fisher-Yates over [0, m) with displaced entries kept sparsely.
  std::unordered_map<std::int64_t, std::int64_t> displaced;
  displaced.reserve(static_cast<std::size_t>(2 * draws));
  const auto at = [&](std::int64_t i) {
    const auto it = displaced.find(i);
    return it == displaced.end() ? i : it->second;
  };
  for (std::int64_t i = 0; i < draws; ++i) {
    const std::int64_t j = std::uniform_int_distribution<std::int64_t>(i, m - 1)(rng);
    const std::int64_t picked = at(j);
    displaced[j] = at(i);
    best = std::max(best, phantom.masked_values[static_cast<std::size_t>(picked)]);
  }
  return best;
}

double lke_score(const Volume& map, const std::optional<Voxel>& signal_center, const LkeConfig& cfg,
                 const BinaryMask& mask) {
  const LkePhantom p = prepare_lke(map, signal_center, mask, cfg.neighborhood);
  Rng rng(cfg.seed);
  return lke_draw(p, cfg.n_locations, cfg.signal_extra, rng);
}

std::vector<LkePoint> lke_curve(const std::vector<LkePhantom>& phantoms, const std::vector<std::int64_t>& ns,
                                const LkeConfig& cfg, int jobs) {
  if (cfg.iterations < 1) throw InputError("LKE iterations must be positive");
  const auto present = std::count_if(phantoms.begin(), phantoms.end(), [](const LkePhantom& p) { return p.label == 1; });
  if (present == 0 || present == static_cast<std::int64_t>(phantoms.size())) {
    throw InputError("LKE curve needs signal-present and signal-absent phantoms");
  }
  std::vector<LkePoint> curve;
  for (const std::int64_t n : ns) {
    std::vector<double> aucs(static_cast<std::size_t>(cfg.iterations));
    parallel_for(
        cfg.iterations,
        [&](std::int64_t it) {
          const std::uint64_t iteration_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(it));
          std::vector<double> sp;
          std::vector<double> sa;
          for (std::size_t p = 0; p < phantoms.size(); ++p) {
            Rng rng(derive_seed(iteration_seed, p));
            const double s = lke_draw(phantoms[p], n, cfg.signal_extra, rng);
            (phantoms[p].label == 1 ? sp : sa).push_back(s);
          }
          aucs[static_cast<std::size_t>(it)] = auc_empirical(sp, sa);
        },
        jobs);
    LkePoint point;
    point.n_locations = n;
    point.mean_auc = mean(aucs);
    std::sort(aucs.begin(), aucs.end());
    point.ci_low = percentile_sorted(aucs, 2.5);
    point.ci_high = percentile_sorted(aucs, 97.5);
    curve.push_back(point);
  }
  return curve;
}

std::vector<LkePoint> lke_curve(const std::vector<LkeCase>& cases, const StackKernel& kernel,
                                const std::vector<std::int64_t>& ns, const LkeConfig& cfg, int jobs) {
  std::vector<LkePhantom> prepared(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    if (!c.phantom || !c.mask) throw InputError("LKE case without phantom or mask");
    if ((c.label == 1) != c.signal_center.has_value()) throw InputError("LKE label and signal center disagree");
    const Volume map = response_map(*c.phantom, kernel, jobs);
    prepared[i] = prepare_lke(map, c.signal_center, *c.mask, cfg.neighborhood);
  }
  return lke_curve(prepared, ns, cfg, jobs);
}

}  // namespace mobs
