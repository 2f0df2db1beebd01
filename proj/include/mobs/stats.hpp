#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mobs {

double normal_cdf(double x);
double mean(std::span<const double> v);
/// Unbiased (n - 1) variance.
double variance(std::span<const double> v);

/// Linear-interpolated percentile (pct in [0, 100]) of ascending data.
double percentile_sorted(std::span<const double> sorted, double pct);

/// Percentage of values below `v`, counting ties as half.
double percentile_of(std::span<const double> values, double v);

/// Wilcoxon-Mann-Whitney AUC: P(sp > sa) + P(sp == sa) / 2.
double auc_empirical(std::span<const double> sp, std::span<const double> sa);

/// Binormal AUC: Phi((mean_sp - mean_sa) / sqrt(var_sp + var_sa)).
/// With both variances zero the result is 1, 0.5 or 0 by mean comparison
/// and a warning is emitted unless `quiet`.
double auc_parametric(std::span<const double> sp, std::span<const double> sa, bool quiet = false);

enum class AucMethod { parametric, empirical };

AucMethod parse_auc_method(const std::string& s);
double auc(AucMethod method, std::span<const double> sp, std::span<const double> sa);

struct ScoreRow {
  std::string phantom_id;
  int label = 0;
  double score = 0.0;
  std::string observer;
  std::string condition;  // e.g. "2d_calc"; empty when unused
  std::string reader;     // empty for model observers
};

struct ScoreTable {
  std::vector<ScoreRow> rows;
};

/// `phantom_id,label,score,observer,N`; N is written as `n_locations`
/// (0 denotes the search task).
void write_score_csv(const ScoreTable& table, const std::filesystem::path& path, std::int64_t n_locations = 0);
ScoreTable read_score_csv(const std::filesystem::path& path, const std::string& condition = "");

struct PhantomRef {
  std::string id;
  int label = 0;
};

/// `reader_id,phantom_id,condition,rating`; labels are taken from `pool`.
ScoreTable read_reader_ratings(const std::filesystem::path& path, const std::vector<PhantomRef>& pool,
                               const std::string& observer = "radiologists");

struct BootstrapConfig {
  int iterations = 20000;
  int min_per_class = 6;
  std::uint64_t seed = 0;
  std::string observer_a;
  std::string observer_b;
  std::string condition;  // empty: every row
  AucMethod auc = AucMethod::parametric;
  /// Both observers see the same resampled phantoms and readers. When false,
  /// observer B is resampled from an independent stream.
  bool paired = true;
  int jobs = 0;
};

struct BootstrapResult {
  double observed_delta = 0.0;
  double mean_delta = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double percentile_of_zero = 50.0;
  double p_value = 1.0;
  std::int64_t iterations = 0;
  std::int64_t discarded = 0;
  std::vector<double> deltas;  // ascending
};

/// Percentile of zero, two-sided p = 2 min(pct, 100 - pct) / 100 floored at
/// 1 / (n + 1), and the central 95% interval of `deltas`.
BootstrapResult summarize_deltas(double observed_delta, std::vector<double> deltas, std::int64_t discarded);

/// Evaluates attempt(0), attempt(1), ... (in parallel batches) until
/// `iterations` attempts return a value, keeping them in attempt order.
/// Gives up with InputError after 100x iterations attempts.
BootstrapResult run_bootstrap(double observed_delta, int iterations,
                              const std::function<std::optional<double>(std::int64_t)>& attempt, int jobs = 0);

/// Reader-and-case bootstrap of AUC(observer_a) - AUC(observer_b). Signal-
/// present and signal-absent phantoms are resampled separately; reader panels
/// (rows with a reader id) are resampled too, each reader keeping only the
/// phantoms it scored. Draws leaving any reader (or model) with fewer than
/// min_per_class phantoms of a class are redrawn, up to 100x iterations attempts.
BootstrapResult bootstrap_compare(const ScoreTable& table, const BootstrapConfig& cfg,
                                  const std::vector<PhantomRef>& pool);

nlohmann::json to_json(const BootstrapResult& r);
void write_delta_histogram(const BootstrapResult& r, const std::filesystem::path& path, int bins = 50);

}  // namespace mobs
