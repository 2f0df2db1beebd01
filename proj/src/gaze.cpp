#include "mobs/gaze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "mobs/csv.hpp"
#include "mobs/error.hpp"
#include "mobs/parallel.hpp"
#include "mobs/random.hpp"

namespace mobs {

namespace {

const std::vector<std::string> kFixationHeader{"reader_id", "phantom_id", "x", "y", "slice", "onset_ms", "duration_ms"};

std::vector<double> gaussian_taps(std::int64_t support) {
  if (support < 1 || support % 2 == 0) throw InputError("smoothing support must be odd and positive");
  const std::int64_t h = support / 2;
  std::vector<double> w(static_cast<std::size_t>(support), 1.0);
  if (support == 1) return w;
  const double sigma = static_cast<double>(support) / 6.0;
  for (std::int64_t k = -h; k <= h; ++k) {
    w[static_cast<std::size_t>(k + h)] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= total;
  return w;
}

// Zero-padded 1D correlation along one axis of a volume stored x-fastest.
void smooth_axis(std::vector<double>& data, const Dims& d, int axis, const std::vector<double>& w) {
  const std::int64_t len = axis == 0 ? d.nx : axis == 1 ? d.ny : d.nz;
  if (w.size() == 1 || len == 1) return;
  const std::int64_t stride = axis == 0 ? 1 : axis == 1 ? d.nx : d.nx * d.ny;
  const std::int64_t lines = d.size() / len;
  const auto h = static_cast<std::int64_t>(w.size() / 2);
  parallel_for(lines, [&](std::int64_t line) {
    // Offset of the line's first element.
    std::int64_t base = 0;
    if (axis == 0) {
      base = line * d.nx;
    } else if (axis == 1) {
      base = (line % d.nx) + (line / d.nx) * d.nx * d.ny;
    } else {
      base = line;
    }
    std::vector<double> in(static_cast<std::size_t>(len));
    for (std::int64_t i = 0; i < len; ++i) in[static_cast<std::size_t>(i)] = data[base + i * stride];
    for (std::int64_t i = 0; i < len; ++i) {
      double acc = 0.0;
      const std::int64_t lo = std::max<std::int64_t>(-h, -i);
      const std::int64_t hi = std::min<std::int64_t>(h, len - 1 - i);
      for (std::int64_t k = lo; k <= hi; ++k) acc += w[static_cast<std::size_t>(k + h)] * in[static_cast<std::size_t>(i + k)];
      data[base + i * stride] = acc;
    }
  });
}

}  // namespace

Voxel Fixation::voxel() const {
  return {static_cast<std::int64_t>(std::llround(x)), static_cast<std::int64_t>(std::llround(y)), slice};
}

FixationLog load_fixations(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, kFixationHeader);
  FixationLog log;
  log.records.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string where = path.string() + " row " + std::to_string(i + 2);
    Fixation f;
    f.reader_id = r[0];
    f.phantom_id = r[1];
    if (f.reader_id.empty() || f.phantom_id.empty()) throw InputError(where + ": empty reader or phantom id");
    f.x = parse_double(r[2], where);
    f.y = parse_double(r[3], where);
    f.slice = parse_int(r[4], where);
    f.onset_ms = parse_double(r[5], where);
    f.duration_ms = parse_double(r[6], where);
    if (!std::isfinite(f.x) || !std::isfinite(f.y)) throw InputError(where + ": non-finite coordinate");
    if (!(f.onset_ms >= 0.0)) throw InputError(where + ": negative onset");
    if (!(f.duration_ms > 0.0) || !std::isfinite(f.duration_ms)) {
      throw InputError(where + ": duration must be positive, got " + r[6]);
    }
    log.records.push_back(std::move(f));
  }
  return log;
}

void save_fixations(const FixationLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < kFixationHeader.size(); ++i) out << (i ? "," : "") << kFixationHeader[i];
  out << '\n';
  for (const auto& f : log.records) {
    out << f.reader_id << ',' << f.phantom_id << ',' << f.x << ',' << f.y << ',' << f.slice << ',' << f.onset_ms
        << ',' << f.duration_ms << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

FixationLog restrict_to_mask(const FixationLog& log, const std::string& phantom_id, const BinaryMask& interior) {
  const Dims& d = interior.dims();
  FixationLog out;
  for (const auto& f : log.records) {
    if (f.phantom_id != phantom_id) continue;
    const Voxel v = f.voxel();
    const bool inside = v.x >= 0 && v.y >= 0 && v.z >= 0 && v.x < d.nx && v.y < d.ny && v.z < d.nz && interior.at(v);
    if (inside) {
      out.records.push_back(f);
    } else {
      ++out.dropped;
    }
  }
  return out;
}

Volume gaussian_smooth(const Volume& v, const Dims& support) {
  const auto wx = gaussian_taps(support.nx);
  const auto wy = gaussian_taps(support.ny);
  const auto wz = gaussian_taps(support.nz);
  std::vector<double> data(v.values().begin(), v.values().end());
  smooth_axis(data, v.dims(), 0, wx);
  smooth_axis(data, v.dims(), 1, wy);
  smooth_axis(data, v.dims(), 2, wz);
  return Volume(v.dims(), v.spacing(), std::move(data));
}

Volume time_spent_map(const std::vector<Fixation>& fixations, const Dims& dims, const Spacing& spacing,
                      const Dims& support) {
  Volume impulses(dims, spacing);
  for (const auto& f : fixations) {
    const Voxel q = f.voxel();
    if (!impulses.contains(q)) continue;
    impulses(q.x, q.y, q.z) += f.duration_ms;
  }
  return gaussian_smooth(impulses, support);
}

BinaryMask top_fraction_mask(const Volume& map, double fraction, const BinaryMask& interior) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("fraction must lie in (0, 1]");
  if (map.dims() != interior.dims()) throw InputError("map and interior mask dims differ");
  std::vector<std::int64_t> idx = interior.true_indices();
  if (idx.empty()) throw InputError("interior mask is empty");
  for (const auto i : idx) {
    if (!std::isfinite(map[i])) throw NumericError("non-finite response inside the interior");
  }
  const auto n = static_cast<double>(idx.size());
  // The small slack keeps products like 0.07 * 100 from rounding up a voxel.
  auto k = static_cast<std::int64_t>(std::ceil(fraction * n - 1e-9 * n));
  k = std::clamp<std::int64_t>(k, 1, static_cast<std::int64_t>(idx.size()));
  const auto before = [&](std::int64_t a, std::int64_t b) { return map[a] > map[b] || (map[a] == map[b] && a < b); };
  std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), before);
  BinaryMask m(map.dims());
  for (std::int64_t j = 0; j < k; ++j) m.set(idx[static_cast<std::size_t>(j)], true);
  return m;
}

double overlap_percentage(const Volume& t, const BinaryMask& m, const BinaryMask& interior) {
  if (t.dims() != m.dims() || t.dims() != interior.dims()) throw InputError("time map and masks differ in dims");
  double inside = 0.0;
  double total = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) {
    if (!interior[i]) continue;
    total += t[i];
    if (m[i]) inside += t[i];
  }
  if (!(total > 0.0)) throw InputError("no fixation time inside the interior");
  return std::clamp(100.0 * inside / total, 0.0, 100.0);
}

std::vector<double> fraction_grid() {
  std::vector<double> g{0.01};
  for (int k = 1; k <= 9; ++k) g.push_back(k / 20.0);
  return g;
}

std::vector<double> pooled_overlaps(const GazeTable& t, bool observer_a) {
  std::vector<double> out;
  for (std::size_t p = 0; p < t.cells.size(); ++p) {
    double in = 0.0;
    double total = 0.0;
    for (const auto& c : t.cells[p]) {
      in += observer_a ? c.in_a : c.in_b;
      total += c.total;
    }
    if (!(total > 0.0)) throw InputError("phantom " + t.phantoms[p] + " has no viewing time");
    out.push_back(100.0 * in / total);
  }
  return out;
}

BootstrapResult bootstrap_time_spent(const GazeTable& t, int iterations, std::uint64_t seed, int jobs) {
  const std::size_t np = t.cells.size();
  if (np == 0) throw InputError("time-spent bootstrap needs signal-absent phantoms");
  const std::size_t nr = t.readers.size();
  for (const auto& row : t.cells) {
    if (row.size() != nr) throw InputError("time-spent table is ragged");
  }
  if (nr == 0) throw InputError("time-spent bootstrap needs readers");
  const auto oa = pooled_overlaps(t, true);
  const auto ob = pooled_overlaps(t, false);
  const double observed = mean(oa) - mean(ob);

  const auto attempt = [&](std::int64_t k) -> std::optional<double> {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::uniform_int_distribution<std::size_t> pick_p(0, np - 1);
    std::uniform_int_distribution<std::size_t> pick_r(0, nr - 1);
    std::vector<std::size_t> ps(np);
    std::vector<std::size_t> rs(nr);
    for (auto& p : ps) p = pick_p(rng);
    for (auto& r : rs) r = pick_r(rng);
    double sum = 0.0;
    for (const std::size_t p : ps) {
      double in_a = 0.0;
      double in_b = 0.0;
      double total = 0.0;
      for (const std::size_t r : rs) {
        const GazeCell& c = t.cells[p][r];
        in_a += c.in_a;
        in_b += c.in_b;
        total += c.total;
      }
      if (!(total > 0.0)) return std::nullopt;
      sum += 100.0 * in_a / total - 100.0 * in_b / total;
    }
    return sum / static_cast<double>(np);
  };
  return run_bootstrap(observed, iterations, attempt, jobs);
}

BootstrapResult bootstrap_time_spent(const std::vector<double>& overlap_a, const std::vector<double>& overlap_b,
                                     int iterations, std::uint64_t seed, int jobs) {
  if (overlap_a.size() != overlap_b.size()) throw InputError("overlap vectors differ in length");
  GazeTable t;
  t.readers = {"pooled"};
  for (std::size_t p = 0; p < overlap_a.size(); ++p) {
    t.phantoms.push_back(std::to_string(p));
    t.cells.push_back({GazeCell{overlap_a[p], overlap_b[p], 100.0}});
  }
  return bootstrap_time_spent(t, iterations, seed, jobs);
}

FixationLog synthesize_fixations(const std::string& phantom_id, const std::vector<Voxel>& hot_spots,
                                 const BinaryMask& interior, const SyntheticFixationSpec& spec) {
  const auto inside = interior.true_indices();
  if (inside.empty()) throw InputError("interior mask is empty");
  const Dims& d = interior.dims();
  FixationLog log;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, spec.jitter_vox);
  std::uniform_int_distribution<std::size_t> pick_inside(0, inside.size() - 1);
  for (int r = 0; r < spec.readers; ++r) {
    const std::string reader = "r" + std::to_string(r + 1);
    Rng rng(derive_seed(derive_seed(spec.seed, phantom_id), static_cast<std::uint64_t>(r)));
    double onset = 0.0;
    for (int i = 0; i < spec.fixations_per_reader; ++i) {
      Fixation f;
      f.reader_id = reader;
      f.phantom_id = phantom_id;
      if (!hot_spots.empty() && unit(rng) < spec.hotspot_share) {
        std::uniform_int_distribution<std::size_t> pick(0, hot_spots.size() - 1);
        const Voxel& h = hot_spots[pick(rng)];
        f.x = std::clamp(static_cast<double>(h.x) + jitter(rng), 0.0, static_cast<double>(d.nx - 1));
        f.y = std::clamp(static_cast<double>(h.y) + jitter(rng), 0.0, static_cast<double>(d.ny - 1));
        f.slice = h.z;
      } else {
        const std::int64_t i_lin = inside[pick_inside(rng)];
        f.x = static_cast<double>(i_lin % d.nx);
        f.y = static_cast<double>((i_lin / d.nx) % d.ny);
        f.slice = i_lin / (d.nx * d.ny);
      }
      f.onset_ms = onset;
      f.duration_ms = spec.mean_duration_ms * (0.5 + unit(rng));
      onset += f.duration_ms + 30.0;
      log.records.push_back(std::move(f));
    }
  }
  return log;
}

}  // namespace mobs
