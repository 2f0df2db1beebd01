#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mobs/channels.hpp"
#include "mobs/volume.hpp"

namespace mobs {

/// channels x samples; entry (c, s) is the dot product of kernel c with crop s.
using ResponseMatrix = Eigen::MatrixXd;

ResponseMatrix channel_responses(const ChannelBank& bank, const std::vector<Volume>& crops, int jobs = 0);

/// Singular values below this fraction of the largest are treated as zero.
inline constexpr double kPinvTolerance = 1e-10;

/// Moore-Penrose inverse of a symmetric matrix; `rank` receives the retained rank.
Eigen::MatrixXd symmetric_pinv(const Eigen::MatrixXd& m, double rel_tol = kPinvTolerance, Eigen::Index* rank = nullptr);

/// Hotelling statistics of two response sets (features x samples).
struct HotellingFit {
  Eigen::VectorXd mean_difference;   // mean(present) - mean(absent)
  Eigen::MatrixXd covariance;        // (K_present + K_absent) / 2, exactly symmetric
  Eigen::MatrixXd present_covariance;
  Eigen::MatrixXd absent_covariance;
  Eigen::VectorXd weights;           // pinv(K + ridge I) * mean_difference
  double dprime = 0.0;               // sqrt(dS' pinv(K) dS)
  Eigen::Index rank = 0;
};

HotellingFit fit_hotelling(const Eigen::MatrixXd& present, const Eigen::MatrixXd& absent, double ridge);

struct LinearTemplate {
  ChannelProvenance provenance = ChannelProvenance::gabor;
  Eigen::VectorXd weights;
  Eigen::VectorXd mean_channel_signal;
  Eigen::MatrixXd covariance;
  double dprime = 0.0;
  double ridge = 0.0;
  Eigen::Index rank = 0;
  Volume spatial_kernel;  // sum_c weights[c] * kernel_c
};

struct LinearTemplate3D {
  std::vector<LinearTemplate> slice_templates;  // odd count, centered on the signal slice
  Eigen::VectorXd slice_weights;                // unit L2 norm
  Eigen::VectorXd mean_feature;
  Eigen::MatrixXd feature_covariance;
  double dprime = 0.0;

  int n_slices() const { return static_cast<int>(slice_templates.size()); }
};

/// Channelized Hotelling template. Requires at least two crops per class.
LinearTemplate train_template(const ChannelBank& bank, const std::vector<Volume>& sp_crops,
                              const std::vector<Volume>& sa_crops, double ridge = 0.0, int jobs = 0);

/// Two-stage 3D template: a 2D template per slice, then Hotelling slice
/// weights over the per-slice template outputs. Stacks are ext x ext x n_slices.
LinearTemplate3D train_template_3d(const ChannelBank& bank, const std::vector<Volume>& sp_stacks,
                                   const std::vector<Volume>& sa_stacks, int n_slices, double ridge = 0.0,
                                   int jobs = 0);

Volume spatial_kernel(const ChannelBank& bank, const Eigen::VectorXd& weights);
inline const Volume& spatial_kernel(const LinearTemplate& t) { return t.spatial_kernel; }

/// Template output on a crop of the kernel's size.
double score(const LinearTemplate& t, const Volume& crop);
/// Weighted sum of per-slice template outputs on an ext x ext x n_slices stack.
double score(const LinearTemplate3D& t, const Volume& stack);

using AnyTemplate = std::variant<LinearTemplate, LinearTemplate3D>;

/// `<stem>.json` plus `<stem>_kernel` (2D) or `<stem>_slice_##` (3D) volume pairs.
void save_template(const LinearTemplate& t, const std::filesystem::path& stem);
void save_template(const LinearTemplate3D& t, const std::filesystem::path& stem);
AnyTemplate load_template(const std::filesystem::path& stem);

}  // namespace mobs
