#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mobs/volume.hpp"

namespace mobs {

/// Gaussian noise shaped to an isotropic 1/f^beta power spectrum.
struct BackgroundSpec {
  Dims dims{64, 64, 64};
  Spacing spacing{0.1, 0.1, 0.1};
  double power_law_beta = 3.0;
  double mean = 0.0;
  double std = 1.0;
  std::uint64_t seed = 0;
};

enum class SignalKind { microcalc, mass };

const char* to_string(SignalKind kind);
SignalKind parse_signal_kind(const std::string& s);

struct SignalSpec {
  SignalKind kind = SignalKind::microcalc;
  double diameter_mm = 0.3;
  double amplitude = 1.0;
  int n_ellipsoids = 5;       // mass only
  double axis_jitter = 0.25;  // mass only, in [0, 1)
  std::uint64_t seed = 0;
};

Volume synthesize_background(const BackgroundSpec& spec);

/// Compact signal with odd extents and its peak at the center voxel region.
Volume render_signal(const SignalSpec& spec, const Spacing& spacing);

/// bg + sig with the center voxel of `sig` placed at `center`.
Volume insert_signal(const Volume& bg, const Volume& sig, const Voxel& center);

struct ManifestEntry {
  std::string id;
  std::string path;  // volume stem, relative to the manifest directory
  int label = 0;     // 1 signal present, 0 absent
  std::optional<SignalKind> signal_kind;
  std::optional<Voxel> center;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t master_seed = 0;
};

/// CSV with header `id,path,label,signal_kind,cx,cy,cz,seed`.
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct DatasetConfig {
  std::filesystem::path output_dir;
  std::string id_prefix = "ph";
  int signal_present = 1;
  int signal_absent = 1;
  BackgroundSpec background;  // seed field ignored; derived per phantom
  SignalSpec signal;          // seed field ignored; derived per phantom
  /// Border band excluded from signal placement (and from the saved interior mask).
  int erosion_voxels = 8;
  double intensity_floor = -1e300;
  std::uint64_t master_seed = 0;
  int jobs = 0;
};

/// Writes `<id>.f32/.json` and `<id>_mask.f32/.json` per phantom and
/// `manifest.csv` under output_dir. Reproducible from master_seed.
DatasetManifest generate_dataset(const DatasetConfig& config);

}  // namespace mobs
