#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mobs/channels.hpp"
#include "mobs/cnn_post.hpp"
#include "mobs/gaze.hpp"
#include "mobs/phantom.hpp"
#include "mobs/stats.hpp"

namespace mobs {

inline constexpr int kSchemaVersion = 1;

struct SplitCounts {
  int signal_present = 0;
  int signal_absent = 0;
};

struct DatasetSpec {
  std::optional<std::filesystem::path> path;  // existing `<path>/{train,test}/manifest.csv`
  BackgroundSpec background;
  SignalSpec signal;
  SplitCounts train{4, 4};
  SplitCounts test{6, 6};
  int erosion_voxels = 8;
  double intensity_floor = -1e300;
};

enum class ObserverType { cho, fco, cnn_post };

struct ObserverSpec {
  std::string name;
  ObserverType type = ObserverType::cho;
  GaborParams channels;
  double ridge = 0.0;
  int sa_crops_per_phantom = 10;
  int n_slices = 1;
  // cnn_post
  std::optional<std::filesystem::path> prob_maps;  // `<dir>/<phantom_id>_prob`
  SyntheticProbSpec synthetic;

  bool linear() const { return type != ObserverType::cnn_post; }
};

struct LkeSpec {
  std::vector<std::int64_t> n{1, 10, 100, 1000};
  int iterations = 10000;
  Dims neighborhood{51, 51, 1};
  bool signal_extra = false;
};

struct StatsSpec {
  int iterations = 20000;
  int min_per_class = 6;
  AucMethod auc = AucMethod::parametric;
  std::vector<std::pair<std::string, std::string>> compare;
  std::optional<std::filesystem::path> reader_ratings;
};

struct GazeSpec {
  bool enabled = false;
  std::pair<std::string, std::string> compare;
  Dims kernel = kGazeKernel;
  std::vector<double> fractions = fraction_grid();
  std::optional<std::filesystem::path> fixations;
  SyntheticFixationSpec synthetic;
  int iterations = 20000;
};

struct RunConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  int jobs = 0;
  DatasetSpec dataset;
  std::vector<ObserverSpec> observers;
  bool search = true;
  std::optional<LkeSpec> lke;
  StatsSpec stats;
  GazeSpec gaze;

  const ObserverSpec& observer(const std::string& name) const;
};

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
  std::optional<int> jobs;
};

/// Parses and validates a JSON run config. Input paths inside the config are
/// resolved against the config file's directory; output_dir against the
/// working directory.
RunConfig load_run_config(const std::filesystem::path& path, const RunOverrides& overrides = {});
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                           const RunOverrides& overrides = {});

/// A failure tagged with the pipeline stage it happened in.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, int exit_code, const std::string& message);
  const std::string& stage() const { return stage_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string stage_;
  int exit_code_;
};

void stage_generate(const RunConfig& cfg);
/// Trains every observer, or only `only` when given.
void stage_train(const RunConfig& cfg, const std::optional<std::string>& only = std::nullopt);
void stage_score(const RunConfig& cfg);
void stage_lke(const RunConfig& cfg, const std::optional<std::vector<std::int64_t>>& ns = std::nullopt);
void stage_stats(const RunConfig& cfg,
                 const std::optional<std::vector<std::pair<std::string, std::string>>>& compare = std::nullopt);
void stage_gaze(const RunConfig& cfg);

/// Collects figures of merit from the artifacts on disk into summary.json.
nlohmann::json write_summary(const RunConfig& cfg);

/// Every stage in order, then the summary.
void run_all(const RunConfig& cfg);

}  // namespace mobs
