#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "mobs/volume.hpp"

namespace mobs {

/// Per-voxel lesion probabilities in [0, 1].
class ProbabilityMap {
 public:
  explicit ProbabilityMap(Volume values);
  const Volume& values() const { return values_; }
  const Dims& dims() const { return values_.dims(); }

 private:
  Volume values_;
};

/// True where p > threshold.
BinaryMask binarize(const ProbabilityMap& p, double threshold);

struct ComponentLabeling {
  Dims dims;
  std::vector<std::int32_t> labels;  // 0 background, components 1..n in raster order of first voxel
  std::vector<std::int64_t> sizes;   // sizes[k - 1] is the voxel count of label k
  int connectivity = 8;

  std::size_t component_count() const { return sizes.size(); }
};

/// Union-find labeling. connectivity 8 needs a 2D mask, 26 a 3D one.
ComponentLabeling connected_components(const BinaryMask& m, int connectivity);

/// Voxel count of the largest component (0 when there is none).
double largest_component_score(const ComponentLabeling& l);

/// binarize -> connected_components -> largest_component_score; 8-connectivity
/// for 2D maps, 26 for 3D.
double cnn_score(const ProbabilityMap& p, double threshold);

struct LabeledMap {
  const ProbabilityMap* map = nullptr;
  int label = 0;
};

struct ThresholdCalibration {
  double threshold = 1.0;
  std::vector<double> thresholds;        // 1.00, 0.95, ..., 0.00
  std::vector<double> auc_by_threshold;  // same order
};

/// The 21 sweep thresholds, descending from 1 to 0 in steps of 0.05.
std::vector<double> threshold_grid();

/// Picks the sweep threshold maximizing empirical AUC of cnn_score; ties go
/// to the largest threshold.
ThresholdCalibration calibrate_threshold(const std::vector<LabeledMap>& validation, int jobs = 0);

nlohmann::json to_json(const ThresholdCalibration& c);

struct SyntheticProbSpec {
  double blob_radius_vox = 2.0;
  double blob_peak = 0.9;
  double speckle_density = 0.002;  // fraction of voxels seeding speckle
  double speckle_peak = 0.6;
  double floor_noise = 0.05;
  std::uint64_t seed = 0;
};

/// Fabricated network output: a Gaussian blob at the signal (if any) plus
/// random isolated speckle and low-level noise, clipped to [0, 1].
ProbabilityMap synthesize_probability_map(const Dims& dims, const Spacing& spacing,
                                          const std::optional<Voxel>& signal_center, const SyntheticProbSpec& spec);

}  // namespace mobs
