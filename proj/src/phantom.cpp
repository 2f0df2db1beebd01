#include "mobs/phantom.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mobs/csv.hpp"
#include "mobs/fft.hpp"
#include "mobs/parallel.hpp"
#include "mobs/random.hpp"

namespace mobs {

namespace fs = std::filesystem;

namespace {

// Signed frequency of DFT bin k on an axis of n samples spaced `step` mm apart.
double bin_frequency(std::int64_t k, std::int64_t n, double step) {
  const std::int64_t s = k <= n / 2 ? k : k - n;
  return static_cast<double>(s) / (static_cast<double>(n) * step);
}

struct Ellipsoid {
  std::array<double, 3> center_mm;
  std::array<double, 3> semi_axes_mm;
};

// Coverage of each voxel by the union of `shapes`, sampled at the 2x2x2
// sub-voxel centers, scaled so the maximum equals `amplitude`.
Volume rasterize(const std::vector<Ellipsoid>& shapes, const Spacing& spacing, double amplitude) {
  const std::array<double, 3> step{spacing.sx, spacing.sy, spacing.sz};
  std::array<std::int64_t, 3> half{0, 0, 0};
  for (const auto& e : shapes) {
    for (int a = 0; a < 3; ++a) {
      const double reach = std::abs(e.center_mm[a]) + e.semi_axes_mm[a];
      half[a] = std::max<std::int64_t>(half[a], static_cast<std::int64_t>(std::ceil(reach / step[a])));
    }
  }
  const Dims dims{2 * half[0] + 1, 2 * half[1] + 1, 2 * half[2] + 1};
  Volume out(dims, spacing);
  if (amplitude == 0.0) return out;

  constexpr std::array<double, 2> kSub{-0.25, 0.25};
  int peak = 0;
  std::vector<int> hits(static_cast<std::size_t>(dims.size()), 0);
  for (std::int64_t z = 0; z < dims.nz; ++z) {
    for (std::int64_t y = 0; y < dims.ny; ++y) {
      for (std::int64_t x = 0; x < dims.nx; ++x) {
        int count = 0;
        for (const double oz : kSub) {
          for (const double oy : kSub) {
            for (const double ox : kSub) {
              const std::array<double, 3> p{(static_cast<double>(x - half[0]) + ox) * step[0],
                                            (static_cast<double>(y - half[1]) + oy) * step[1],
                                            (static_cast<double>(z - half[2]) + oz) * step[2]};
              const bool inside = std::any_of(shapes.begin(), shapes.end(), [&](const Ellipsoid& e) {
                double r2 = 0.0;
                for (int a = 0; a < 3; ++a) {
                  const double u = (p[a] - e.center_mm[a]) / e.semi_axes_mm[a];
                  r2 += u * u;
                }
                return r2 <= 1.0;
              });
              count += inside ? 1 : 0;
            }
          }
        }
        hits[out.index(x, y, z)] = count;
        peak = std::max(peak, count);
      }
    }
  }
  if (peak == 0) throw NumericError("signal rasterized to an empty support");
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = hits[i] == peak ? amplitude : amplitude * hits[i] / peak;
  }
  return out;
}

}  // namespace

const char* to_string(SignalKind kind) { return kind == SignalKind::microcalc ? "microcalc" : "mass"; }

SignalKind parse_signal_kind(const std::string& s) {
  if (s == "microcalc" || s == "calc") return SignalKind::microcalc;
  if (s == "mass") return SignalKind::mass;
  throw InputError("unknown signal kind: " + s);
}

Volume synthesize_background(const BackgroundSpec& spec) {
  if (!(spec.std > 0.0)) throw InputError("background std must be positive");
  if (spec.power_law_beta < 0.0) throw InputError("power_law_beta must be non-negative");
  const Dims& d = spec.dims;
  Volume out(d, spec.spacing);
  if (d.size() < 2) throw InputError("background needs at least two voxels");

  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& plan = fft::real_plan(d);
  auto field = fft::alloc_real(d.size());
  auto spectrum = fft::alloc_complex(plan.spectrum_size());
  for (std::int64_t i = 0; i < d.size(); ++i) field[i] = normal(rng);
  plan.forward(field.get(), spectrum.get());

  const std::int64_t hx = d.nx / 2 + 1;
  const double half_beta = 0.5 * spec.power_law_beta;
  for (std::int64_t z = 0; z < d.nz; ++z) {
    const double fz = bin_frequency(z, d.nz, spec.spacing.sz);
    for (std::int64_t y = 0; y < d.ny; ++y) {
      const double fy = bin_frequency(y, d.ny, spec.spacing.sy);
      for (std::int64_t x = 0; x < hx; ++x) {
        const double fx = static_cast<double>(x) / (static_cast<double>(d.nx) * spec.spacing.sx);
        const double f2 = fx * fx + fy * fy + fz * fz;
        const std::int64_t k = x + hx * (y + d.ny * z);
        spectrum[k] *= f2 > 0.0 ? std::pow(f2, -0.5 * half_beta) : 0.0;
      }
    }
  }
  plan.inverse(spectrum.get(), field.get());

  const std::int64_t n = d.size();
  double mean = 0.0;
  for (std::int64_t i = 0; i < n; ++i) mean += field[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::int64_t i = 0; i < n; ++i) var += (field[i] - mean) * (field[i] - mean);
  var /= static_cast<double>(n);
  if (!(var > 0.0)) throw NumericError("synthesized background has zero variance");
  const double scale = spec.std / std::sqrt(var);
  for (std::int64_t i = 0; i < n; ++i) out[i] = spec.mean + (field[i] - mean) * scale;
  return out;
}

Volume render_signal(const SignalSpec& spec, const Spacing& spacing) {
  if (!(spacing.sx > 0.0 && spacing.sy > 0.0 && spacing.sz > 0.0)) throw InputError("spacing must be positive");
  if (!(spec.diameter_mm > 0.0)) throw InputError("signal diameter must be positive");
  if (spec.amplitude < 0.0) throw InputError("signal amplitude must be non-negative");
  const double voxel = std::max({spacing.sx, spacing.sy, spacing.sz});
  if (spec.diameter_mm < voxel) {
    throw InputError("signal diameter " + std::to_string(spec.diameter_mm) + " mm is smaller than one voxel (" +
                     std::to_string(voxel) + " mm)");
  }
  const double radius = 0.5 * spec.diameter_mm;
  std::vector<Ellipsoid> shapes;
  if (spec.kind == SignalKind::microcalc) {
    shapes.push_back({{0.0, 0.0, 0.0}, {radius, radius, radius}});
  } else {
    if (spec.n_ellipsoids < 1) throw InputError("mass needs at least one ellipsoid");
    if (spec.axis_jitter < 0.0 || spec.axis_jitter >= 1.0) throw InputError("axis_jitter must lie in [0, 1)");
    Rng rng(spec.seed);
    std::uniform_real_distribution<double> offset(-0.25 * spec.diameter_mm, 0.25 * spec.diameter_mm);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int e = 0; e < spec.n_ellipsoids; ++e) {
      Ellipsoid s{};
      for (int a = 0; a < 3; ++a) s.center_mm[a] = offset(rng);
      for (int a = 0; a < 3; ++a) s.semi_axes_mm[a] = radius * (1.0 + spec.axis_jitter * unit(rng));
      shapes.push_back(s);
    }
  }
  return rasterize(shapes, spacing, spec.amplitude);
}

Volume insert_signal(const Volume& bg, const Volume& sig, const Voxel& center) {
  const Dims& s = sig.dims();
  if (s.nx % 2 == 0 || s.ny % 2 == 0 || s.nz % 2 == 0) throw InputError("signal extents must be odd");
  check_crop_bounds(bg.dims(), CropSpec{center, s});
  Volume out = bg;
  const std::int64_t x0 = center.x - s.nx / 2;
  const std::int64_t y0 = center.y - s.ny / 2;
  const std::int64_t z0 = center.z - s.nz / 2;
  for (std::int64_t z = 0; z < s.nz; ++z) {
    for (std::int64_t y = 0; y < s.ny; ++y) {
      for (std::int64_t x = 0; x < s.nx; ++x) {
        out(x0 + x, y0 + y, z0 + z) += sig(x, y, z);
      }
    }
  }
  return out;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write manifest: " + path.string());
  out << "id,path,label,signal_kind,cx,cy,cz,seed\n";
  for (const auto& e : m.entries) {
    out << e.id << ',' << e.path << ',' << e.label << ',' << (e.signal_kind ? to_string(*e.signal_kind) : "none");
    if (e.center) {
      out << ',' << e.center->x << ',' << e.center->y << ',' << e.center->z;
    } else {
      out << ",,,";
    }
    out << ',' << e.seed << '\n';
  }
  if (!out) throw InputError("write failed: " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  const CsvTable table = read_csv(path, {"id", "path", "label", "signal_kind", "cx", "cy", "cz", "seed"});
  DatasetManifest m;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = path.string() + " row " + std::to_string(r + 2);
    ManifestEntry e;
    e.id = row[0];
    e.path = row[1];
    e.label = static_cast<int>(parse_int(row[2], where));
    if (e.label != 0 && e.label != 1) throw InputError(where + ": label must be 0 or 1");
    if (row[3] != "none" && !row[3].empty()) e.signal_kind = parse_signal_kind(row[3]);
    if (!row[4].empty()) {
      e.center = Voxel{parse_int(row[4], where), parse_int(row[5], where), parse_int(row[6], where)};
    }
    const auto [ptr, ec] = std::from_chars(row[7].data(), row[7].data() + row[7].size(), e.seed);
    if (ec != std::errc() || ptr != row[7].data() + row[7].size()) throw InputError(where + ": bad seed `" + row[7] + "`");
    if (e.label == 1 && !e.center) throw InputError(where + ": signal-present entry without a center");
    if (e.label == 0 && e.center) throw InputError(where + ": signal-absent entry with a center");
    m.entries.push_back(std::move(e));
  }
  std::vector<std::string> ids;
  for (const auto& e : m.entries) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw InputError(path.string() + ": duplicate ids");
  return m;
}

DatasetManifest generate_dataset(const DatasetConfig& config) {
  if (config.signal_present < 0 || config.signal_absent < 0 ||
      config.signal_present + config.signal_absent < 1) {
    throw InputError("dataset counts must be non-negative with at least one phantom");
  }
  fs::create_directories(config.output_dir);

  const int total = config.signal_present + config.signal_absent;
  DatasetManifest manifest;
  manifest.master_seed = config.master_seed;
  manifest.entries.resize(static_cast<std::size_t>(total));

  parallel_for(
      total,
      [&](std::int64_t i) {
        const bool present = i < config.signal_present;
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04lld", config.id_prefix.c_str(), static_cast<long long>(i));
        ManifestEntry entry;
        entry.id = name;
        entry.path = name;
        entry.label = present ? 1 : 0;
        entry.seed = derive_seed(config.master_seed, entry.id);

        BackgroundSpec bspec = config.background;
        bspec.seed = derive_seed(entry.seed, 1);
        Volume volume = synthesize_background(bspec);
        const BinaryMask interior = build_interior_mask(volume, config.erosion_voxels, config.intensity_floor);

        if (present) {
          SignalSpec sspec = config.signal;
          sspec.seed = derive_seed(entry.seed, 2);
          Volume sig = render_signal(sspec, bspec.spacing);
          if (volume.dims().is_2d() && sig.dims().nz > 1) sig = sig.slice(sig.dims().nz / 2);
          std::vector<std::int64_t> candidates;
          for (const std::int64_t idx : interior.true_indices()) {
            if (crop_fits(volume.dims(), CropSpec{volume.voxel(idx), sig.dims()})) candidates.push_back(idx);
          }
          if (candidates.empty()) {
            throw InputError("interior mask of " + entry.id + " leaves no room to place the signal");
          }
          Rng rng(derive_seed(entry.seed, 3));
          std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
          const Voxel c = volume.voxel(candidates[pick(rng)]);
          volume = insert_signal(volume, sig, c);
          entry.signal_kind = config.signal.kind;
          entry.center = c;
        }
        save_volume(volume, config.output_dir / entry.path, VolumeKind::image);
        save_mask(interior, config.output_dir / (entry.path + "_mask"), volume.spacing());
        manifest.entries[static_cast<std::size_t>(i)] = std::move(entry);
      },
      config.jobs);

  write_manifest(manifest, config.output_dir / "manifest.csv");
  return manifest;
}

}  // namespace mobs
