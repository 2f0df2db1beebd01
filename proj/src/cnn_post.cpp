#include "mobs/cnn_post.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mobs/parallel.hpp"
#include "mobs/random.hpp"
#include "mobs/stats.hpp"

namespace mobs {

namespace {

std::int32_t find_root(std::vector<std::int32_t>& parent, std::int32_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

}  // namespace

ProbabilityMap::ProbabilityMap(Volume values) : values_(std::move(values)) {
  for (const double v : values_.values()) {
    if (v < 0.0 || v > 1.0) throw InputError("probability map value outside [0, 1]: " + std::to_string(v));
  }
}

BinaryMask binarize(const ProbabilityMap& p, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InputError("threshold must lie in [0, 1]");
  BinaryMask m(p.dims());
  const auto v = p.values().values();
  for (std::int64_t i = 0; i < m.size(); ++i) m.set(i, v[i] > threshold);
  return m;
}

ComponentLabeling connected_components(const BinaryMask& m, int connectivity) {
  const Dims d = m.dims();
  if (connectivity == 8 && !d.is_2d()) throw InputError("8-connectivity needs a 2D mask");
  if (connectivity == 26 && d.is_2d()) throw InputError("26-connectivity needs a 3D mask");
  if (connectivity != 8 && connectivity != 26) throw InputError("connectivity must be 8 or 26");
  if (d.size() >= std::numeric_limits<std::int32_t>::max()) throw InputError("mask too large to label");

  // Neighbors already visited in raster order.
  struct Offset {
    int dx, dy, dz;
  };
  std::vector<Offset> back;
  for (int dz = -1; dz <= 0; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (connectivity == 8 && dz != 0) continue;
        const bool earlier = dz < 0 || (dz == 0 && dy < 0) || (dz == 0 && dy == 0 && dx < 0);
        if (earlier) back.push_back({dx, dy, dz});
      }
    }
  }

  const auto n = static_cast<std::int32_t>(d.size());
  std::vector<std::int32_t> parent(static_cast<std::size_t>(n), -1);
  for (std::int64_t z = 0; z < d.nz; ++z) {
    for (std::int64_t y = 0; y < d.ny; ++y) {
      for (std::int64_t x = 0; x < d.nx; ++x) {
        const auto i = static_cast<std::int32_t>(x + d.nx * (y + d.ny * z));
        if (!m[i]) continue;
        parent[i] = i;
        for (const auto& o : back) {
          const std::int64_t qx = x + o.dx;
          const std::int64_t qy = y + o.dy;
          const std::int64_t qz = z + o.dz;
          if (qx < 0 || qy < 0 || qz < 0 || qx >= d.nx || qy >= d.ny) continue;
          const auto q = static_cast<std::int32_t>(qx + d.nx * (qy + d.ny * qz));
          if (!m[q]) continue;
          const std::int32_t a = find_root(parent, i);
          const std::int32_t b = find_root(parent, q);
          if (a != b) parent[std::max(a, b)] = std::min(a, b);
        }
      }
    }
  }

  ComponentLabeling out;
  out.dims = d;
  out.connectivity = connectivity;
  out.labels.assign(static_cast<std::size_t>(n), 0);
  // Roots are the minimum index of their component, so they are met first.
  for (std::int32_t i = 0; i < n; ++i) {
    if (parent[i] < 0) continue;
    const std::int32_t r = find_root(parent, i);
    if (r == i) {
      out.sizes.push_back(0);
      out.labels[i] = static_cast<std::int32_t>(out.sizes.size());
    } else {
      out.labels[i] = out.labels[r];
    }
    ++out.sizes[static_cast<std::size_t>(out.labels[i] - 1)];
  }
  return out;
}

double largest_component_score(const ComponentLabeling& l) {
  if (l.sizes.empty()) return 0.0;
  return static_cast<double>(*std::max_element(l.sizes.begin(), l.sizes.end()));
}

double cnn_score(const ProbabilityMap& p, double threshold) {
  return largest_component_score(connected_components(binarize(p, threshold), p.dims().is_2d() ? 8 : 26));
}

std::vector<double> threshold_grid() {
  std::vector<double> grid;
  for (int k = 20; k >= 0; --k) grid.push_back(k / 20.0);
  return grid;
}

ThresholdCalibration calibrate_threshold(const std::vector<LabeledMap>& validation, int jobs) {
  const auto present = std::count_if(validation.begin(), validation.end(), [](const LabeledMap& m) { return m.label == 1; });
  if (present == 0 || present == static_cast<std::int64_t>(validation.size())) {
    throw InputError("threshold calibration needs signal-present and signal-absent maps");
  }
  ThresholdCalibration c;
  c.thresholds = threshold_grid();
  c.auc_by_threshold.resize(c.thresholds.size());
  std::vector<std::vector<double>> scores(c.thresholds.size(), std::vector<double>(validation.size()));
  parallel_for(
      static_cast<std::int64_t>(validation.size()),
      [&](std::int64_t m) {
        for (std::size_t t = 0; t < c.thresholds.size(); ++t) {
          scores[t][static_cast<std::size_t>(m)] = cnn_score(*validation[static_cast<std::size_t>(m)].map, c.thresholds[t]);
        }
      },
      jobs);
  double best = -1.0;
  for (std::size_t t = 0; t < c.thresholds.size(); ++t) {
    std::vector<double> sp;
    std::vector<double> sa;
    for (std::size_t m = 0; m < validation.size(); ++m) (validation[m].label == 1 ? sp : sa).push_back(scores[t][m]);
    c.auc_by_threshold[t] = auc_empirical(sp, sa);
    if (c.auc_by_threshold[t] > best) {
      best = c.auc_by_threshold[t];
      c.threshold = c.thresholds[t];
    }
  }
  return c;
}

nlohmann::json to_json(const ThresholdCalibration& c) {
  return {{"threshold", c.threshold}, {"thresholds", c.thresholds}, {"auc_by_threshold", c.auc_by_threshold}};
}

ProbabilityMap synthesize_probability_map(const Dims& dims, const Spacing& spacing,
                                          const std::optional<Voxel>& signal_center, const SyntheticProbSpec& spec) {
  Volume v(dims, spacing);
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = spec.floor_noise * unit(rng);
  const auto speckles = static_cast<std::int64_t>(std::llround(spec.speckle_density * static_cast<double>(v.size())));
  std::uniform_int_distribution<std::int64_t> where(0, v.size() - 1);
  for (std::int64_t s = 0; s < speckles; ++s) {
    const std::int64_t i = where(rng);
    v[i] = std::max(v[i], spec.speckle_peak * (0.5 + 0.5 * unit(rng)));
  }
  if (signal_center) {
    const auto r = static_cast<std::int64_t>(std::ceil(3.0 * spec.blob_radius_vox));
    const double two_r2 = 2.0 * spec.blob_radius_vox * spec.blob_radius_vox;
    for (std::int64_t dz = dims.is_2d() ? 0 : -r; dz <= (dims.is_2d() ? 0 : r); ++dz) {
      for (std::int64_t dy = -r; dy <= r; ++dy) {
        for (std::int64_t dx = -r; dx <= r; ++dx) {
          const Voxel q{signal_center->x + dx, signal_center->y + dy, signal_center->z + dz};
          if (!v.contains(q)) continue;
          const double p = spec.blob_peak * std::exp(-static_cast<double>(dx * dx + dy * dy + dz * dz) / two_r2);
          auto& cell = v(q.x, q.y, q.z);
          cell = std::max(cell, p);
        }
      }
    }
  }
  for (auto& x : v.values()) x = std::clamp(x, 0.0, 1.0);
  return ProbabilityMap(std::move(v));
}

}  // namespace mobs
