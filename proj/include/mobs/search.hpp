#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mobs/observer.hpp"
#include "mobs/random.hpp"
#include "mobs/volume.hpp"

namespace mobs {

/// A template as a stack of 2D kernels with one weight per slice. Slice s of
/// the stack is applied at depth offset s - (n - 1) / 2.
struct StackKernel {
  std::vector<Volume> slices;
  std::vector<double> weights;

  int depth() const { return static_cast<int>(slices.size()); }
};

/// Each z-slice of a (2D or 3D) kernel volume with unit weight.
StackKernel as_stack(const Volume& kernel);
StackKernel as_stack(const LinearTemplate& t);
StackKernel as_stack(const LinearTemplate3D& t);
StackKernel as_stack(const AnyTemplate& t);

/// Circular cross-correlation: map(v) = sum_s w_s sum_{i,j} K_s(i,j) P(v + (i-cx, j-cy, s-cz)),
/// indices wrapping at the borders. Computed slice by slice with real FFTs.
Volume response_map(const Volume& phantom, const StackKernel& kernel, int jobs = 0);
VolumeF response_map(const VolumeF& phantom, const StackKernel& kernel, int jobs = 0);
/// Consumes the phantom and writes the map into its storage.
VolumeF response_map(VolumeF&& phantom, const StackKernel& kernel, int jobs = 0);

inline Volume response_map(const Volume& phantom, const Volume& kernel, int jobs = 0) {
  return response_map(phantom, as_stack(kernel), jobs);
}

struct SearchResult {
  double score = 0.0;
  Voxel location;
  std::int64_t index = -1;
};

/// Masked maximum; ties go to the lowest linear index.
template <typename T>
SearchResult search_score(const BasicVolume<T>& map, const BinaryMask& mask);

struct LkeConfig {
  std::int64_t n_locations = 1;
  Dims neighborhood{51, 51, 1};
  int iterations = 10000;
  std::uint64_t seed = 0;
  /// Signal-present: draw N distractors in addition to the signal value
  /// instead of N - 1.
  bool signal_extra = false;
};

/// Per-phantom data the LKE resampler needs: masked map values in linear
/// index order and, for signal-present phantoms, the neighborhood maximum.
struct LkePhantom {
  std::vector<double> masked_values;
  std::optional<double> signal_value;
  int label = 0;
};

/// Max of the response map over the odd `neighborhood` centered on `center`.
double neighborhood_max(const Volume& map, const Voxel& center, const Dims& neighborhood);

LkePhantom prepare_lke(const Volume& map, const std::optional<Voxel>& signal_center, const BinaryMask& mask,
                       const Dims& neighborhood);

/// One LKE draw: max of the signal value (if any) and random masked values
/// sampled without replacement by a partial Fisher-Yates shuffle.
double lke_draw(const LkePhantom& phantom, std::int64_t n_locations, bool signal_extra, Rng& rng);

/// Single LKE score with an rng seeded from cfg.seed.
double lke_score(const Volume& map, const std::optional<Voxel>& signal_center, const LkeConfig& cfg,
                 const BinaryMask& mask);

struct LkePoint {
  std::int64_t n_locations = 0;
  double mean_auc = 0.0;
  double ci_low = 0.0;   // 2.5th percentile over iterations
  double ci_high = 0.0;  // 97.5th percentile
};

/// AUC versus N. Iteration i of every N uses the same per-(iteration,
/// phantom) random stream, so results are independent of worker count.
std::vector<LkePoint> lke_curve(const std::vector<LkePhantom>& phantoms, const std::vector<std::int64_t>& ns,
                                const LkeConfig& cfg, int jobs = 0);

struct LkeCase {
  const Volume* phantom = nullptr;
  const BinaryMask* mask = nullptr;
  std::optional<Voxel> signal_center;
  int label = 0;
};

/// Computes each response map once, then runs the resampling curve.
std::vector<LkePoint> lke_curve(const std::vector<LkeCase>& cases, const StackKernel& kernel,
                                const std::vector<std::int64_t>& ns, const LkeConfig& cfg, int jobs = 0);

}  // namespace mobs
