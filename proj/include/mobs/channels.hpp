#pragma once

#include <filesystem>
#include <vector>

#include "mobs/volume.hpp"

namespace mobs {

/// Gabor channel geometry. Frequencies are in cycles/pixel; the
/// pixels-per-cycle list they were derived from is kept for provenance.
struct GaborParams {
  std::vector<double> orientations;  // radians in [0, pi)
  std::vector<double> phases;        // radians
  std::vector<double> frequencies;   // cycles/pixel, each < 0.5
  std::vector<double> pixels_per_cycle;
  double envelope_octaves = 1.0;
  int kernel_extent = 101;

  /// 8 orientations k*pi/8, phases {0, pi/2}, 4..64 pixels per cycle.
  static GaborParams standard(int kernel_extent = 101);
  /// Evenly spaced orientations in [0, pi), frequencies = 1/ppc.
  static GaborParams make(int n_orientations, std::vector<double> phases, std::vector<double> pixels_per_cycle,
                          int kernel_extent, double envelope_octaves = 1.0);

  std::size_t channel_count() const { return orientations.size() * phases.size() * frequencies.size(); }
};

/// Gaussian envelope sigma (pixels) for a Gabor of `frequency` cycles/pixel
/// whose half-amplitude bandwidth is `octaves` octaves.
double gabor_envelope_sigma(double frequency, double octaves);

enum class ChannelProvenance { gabor, fco };

const char* to_string(ChannelProvenance p);

struct ChannelBank {
  std::vector<Volume> kernels;  // identical 2D extents
  ChannelProvenance provenance = ChannelProvenance::gabor;
  GaborParams params;

  std::size_t size() const { return kernels.size(); }
  const Dims& kernel_dims() const { return kernels.front().dims(); }
};

/// Kernel index for orientation k, frequency l, phase p (k-major, then l, then p).
std::size_t gabor_index(const GaborParams& params, std::size_t k, std::size_t l, std::size_t p);

ChannelBank gabor_bank(const GaborParams& params);

/// Mean signal-present crop minus mean signal-absent crop.
Volume mean_signal(const std::vector<Volume>& sp_crops, const std::vector<Volume>& sa_crops);

/// Gabor channels reshaped by the mean-signal spectrum and L2-normalized.
ChannelBank fco_bank(const ChannelBank& gabor, const Volume& signal);

/// `<dir>/kernel_###.f32` per channel plus `<dir>/index.json`.
void export_bank(const ChannelBank& bank, const std::filesystem::path& dir);
ChannelBank import_bank(const std::filesystem::path& dir);

}  // namespace mobs
