#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mobs/stats.hpp"
#include "mobs/volume.hpp"

namespace mobs {

struct Fixation {
  std::string reader_id;
  std::string phantom_id;
  double x = 0.0;  // voxel units
  double y = 0.0;
  std::int64_t slice = 0;
  double onset_ms = 0.0;
  double duration_ms = 0.0;

  /// Nearest voxel.
  Voxel voxel() const;
};

struct FixationLog {
  std::vector<Fixation> records;
  std::int64_t dropped = 0;  // fixations removed by masking
};

/// `reader_id,phantom_id,x,y,slice,onset_ms,duration_ms`. Non-positive
/// durations, negative onsets and unparsable fields raise InputError.
FixationLog load_fixations(const std::filesystem::path& path);
void save_fixations(const FixationLog& log, const std::filesystem::path& path);

/// Fixations of `phantom_id` whose voxel lies inside `interior`; the rest of
/// that phantom's fixations are counted in `dropped`.
FixationLog restrict_to_mask(const FixationLog& log, const std::string& phantom_id, const BinaryMask& interior);

/// Default smoothing support; 2D analyses use a depth of 1.
inline constexpr Dims kGazeKernel{45, 45, 3};

/// Separable unit-mass Gaussian with sigma = support / 6 per axis. Outside
/// the volume counts as zero, so mass is lost only at borders.
Volume gaussian_smooth(const Volume& v, const Dims& support = kGazeKernel);

/// Durations deposited at fixation voxels, then smoothed. Fixations outside
/// `dims` are ignored.
Volume time_spent_map(const std::vector<Fixation>& fixations, const Dims& dims, const Spacing& spacing = {},
                      const Dims& support = kGazeKernel);

/// The ceil(fraction * |interior|) highest interior voxels of `map`; ties
/// resolved toward the lower linear index.
BinaryMask top_fraction_mask(const Volume& map, double fraction, const BinaryMask& interior);

/// 100 * sum(t over m) / sum(t over interior).
double overlap_percentage(const Volume& t, const BinaryMask& m, const BinaryMask& interior);

/// 1%, 5%, 10%, ..., 45%.
std::vector<double> fraction_grid();

/// Time of each reader on each signal-absent phantom, split by where it fell.
/// Since smoothing is linear the pooled map of any reader multiset is the sum
/// of per-reader maps, so overlap of a resampled panel needs only these sums.
struct GazeCell {
  double in_a = 0.0;   // time inside observer A's top-fraction mask
  double in_b = 0.0;   // time inside observer B's mask
  double total = 0.0;  // time inside the interior; 0 when not viewed
};

struct GazeTable {
  std::vector<std::string> phantoms;
  std::vector<std::string> readers;
  std::vector<std::vector<GazeCell>> cells;  // [phantom][reader]
};

/// Per-phantom overlap (percent) of the pooled panel for observer A or B.
std::vector<double> pooled_overlaps(const GazeTable& t, bool observer_a);

/// Resamples phantoms and readers with replacement and records
/// mean overlap(A) - mean overlap(B). Draws where some resampled phantom has
/// no viewing time are redrawn (up to 100x iterations attempts).
BootstrapResult bootstrap_time_spent(const GazeTable& t, int iterations, std::uint64_t seed, int jobs = 0);

/// Phantom-only resampling of two per-phantom overlap vectors.
BootstrapResult bootstrap_time_spent(const std::vector<double>& overlap_a, const std::vector<double>& overlap_b,
                                     int iterations, std::uint64_t seed, int jobs = 0);

struct SyntheticFixationSpec {
  int readers = 4;
  int fixations_per_reader = 30;
  double hotspot_share = 0.8;  // remaining fixations land uniformly in the interior
  double jitter_vox = 2.0;
  double mean_duration_ms = 250.0;
  std::uint64_t seed = 0;
};

/// Stand-in eye-tracking data: fixations near `hot_spots` plus uniform noise,
/// readers named `r1`, `r2`, ...
FixationLog synthesize_fixations(const std::string& phantom_id, const std::vector<Voxel>& hot_spots,
                                 const BinaryMask& interior, const SyntheticFixationSpec& spec);

}  // namespace mobs
