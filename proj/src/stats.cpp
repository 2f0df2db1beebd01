#include "mobs/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <unordered_map>

#include "mobs/csv.hpp"
#include "mobs/error.hpp"
#include "mobs/parallel.hpp"
#include "mobs/random.hpp"

namespace mobs {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double mean(std::span<const double> v) {
  if (v.empty()) throw InputError("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance(std::span<const double> v) {
  if (v.size() < 2) throw InputError("variance needs at least two values");
  const double m = mean(v);
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double percentile_sorted(std::span<const double> sorted, double pct) {
  if (sorted.empty()) throw InputError("percentile of an empty sample");
  const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double percentile_of(std::span<const double> values, double v) {
  if (values.empty()) throw InputError("percentile of an empty sample");
  double below = 0.0;
  for (const double x : values) {
    if (x < v) {
      below += 1.0;
    } else if (x == v) {
      below += 0.5;
    }
  }
  return 100.0 * below / static_cast<double>(values.size());
}

double auc_empirical(std::span<const double> sp, std::span<const double> sa) {
  if (sp.empty() || sa.empty()) throw InputError("AUC needs non-empty signal-present and signal-absent samples");
  std::vector<double> sorted(sa.begin(), sa.end());
  std::sort(sorted.begin(), sorted.end());
  // Twice the Mann-Whitney U, kept integral so auc(a, b) + auc(b, a) == 1 exactly.
  std::int64_t twice_u = 0;
  for (const double v : sp) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), v);
    const auto hi = std::upper_bound(lo, sorted.end(), v);
    twice_u += 2 * (lo - sorted.begin()) + (hi - lo);
  }
  const std::int64_t total = 2 * static_cast<std::int64_t>(sp.size()) * static_cast<std::int64_t>(sa.size());
  const std::int64_t complement = total - twice_u;
  if (twice_u > complement) return 1.0 - static_cast<double>(complement) / static_cast<double>(total);
  return static_cast<double>(twice_u) / static_cast<double>(total);
}

double auc_parametric(std::span<const double> sp, std::span<const double> sa, bool quiet) {
  if (sp.size() < 2 || sa.size() < 2) throw InputError("parametric AUC needs at least two values per class");
  const double dm = mean(sp) - mean(sa);
  const double v = variance(sp) + variance(sa);
  if (!(v > 0.0)) {
    if (!quiet) warn("parametric AUC with zero variance in both classes");
    return dm > 0.0 ? 1.0 : dm < 0.0 ? 0.0 : 0.5;
  }
  return normal_cdf(dm / std::sqrt(v));
}

AucMethod parse_auc_method(const std::string& s) {
  if (s == "parametric") return AucMethod::parametric;
  if (s == "empirical") return AucMethod::empirical;
  throw InputError("unknown AUC method: " + s);
}

double auc(AucMethod method, std::span<const double> sp, std::span<const double> sa) {
  return method == AucMethod::parametric ? auc_parametric(sp, sa, true) : auc_empirical(sp, sa);
}

void write_score_csv(const ScoreTable& table, const std::filesystem::path& path, std::int64_t n_locations) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write score table: " + path.string());
  out.precision(17);
  out << "phantom_id,label,score,observer,N\n";
  for (const auto& r : table.rows) {
    out << r.phantom_id << ',' << r.label << ',' << r.score << ',' << r.observer << ',' << n_locations << '\n';
  }
  if (!out) throw InputError("write failed: " + path.string());
}

ScoreTable read_score_csv(const std::filesystem::path& path, const std::string& condition) {
  const CsvTable csv = read_csv(path, {"phantom_id", "label", "score", "observer", "N"});
  ScoreTable t;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& row = csv.rows[i];
    const std::string where = path.string() + " row " + std::to_string(i + 2);
    ScoreRow r;
    r.phantom_id = row[0];
    r.label = static_cast<int>(parse_int(row[1], where));
    r.score = parse_double(row[2], where);
    r.observer = row[3];
    r.condition = condition;
    t.rows.push_back(std::move(r));
  }
  return t;
}

ScoreTable read_reader_ratings(const std::filesystem::path& path, const std::vector<PhantomRef>& pool,
                               const std::string& observer) {
  std::unordered_map<std::string, int> labels;
  for (const auto& p : pool) labels[p.id] = p.label;
  const CsvTable csv = read_csv(path, {"reader_id", "phantom_id", "condition", "rating"});
  ScoreTable t;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& row = csv.rows[i];
    const std::string where = path.string() + " row " + std::to_string(i + 2);
    const auto it = labels.find(row[1]);
    if (it == labels.end()) throw InputError(where + ": phantom `" + row[1] + "` is not in the phantom pool");
    t.rows.push_back({row[1], it->second, parse_double(row[3], where), observer, row[2], row[0]});
  }
  return t;
}

namespace {

// Scores of one observer indexed by pool position; panels hold one score
// vector per reader.
struct ObserverData {
  bool panel = false;
  std::vector<std::string> reader_ids;                      // ascending
  std::vector<std::vector<std::optional<double>>> readers;  // a single entry for models
};

ObserverData collect(const ScoreTable& table, const std::string& observer, const std::string& condition,
                     const std::unordered_map<std::string, std::size_t>& index, std::size_t pool_size) {
  ObserverData d;
  std::unordered_map<std::string, std::size_t> reader_slot;
  bool any = false;
  for (const auto& r : table.rows) {
    if (r.observer != observer || (!condition.empty() && r.condition != condition)) continue;
    const auto it = index.find(r.phantom_id);
    if (it == index.end()) throw InputError("phantom `" + r.phantom_id + "` of " + observer + " is not in the pool");
    if (!std::isfinite(r.score)) throw InputError("non-finite score for " + observer);
    if (!any) d.panel = !r.reader.empty();
    any = true;
    if (d.panel != !r.reader.empty()) throw InputError("observer " + observer + " mixes reader and model rows");
    auto [slot, inserted] = reader_slot.try_emplace(r.reader, d.readers.size());
    if (inserted) d.readers.emplace_back(pool_size);
    auto& cell = d.readers[slot->second][it->second];
    if (cell) throw InputError("duplicate score for " + observer + " on phantom " + r.phantom_id);
    cell = r.score;
  }
  if (!any) throw InputError("observer `" + observer + "` has no scores in the table");
  if (d.panel) {
    std::vector<std::pair<std::string, std::size_t>> order(reader_slot.begin(), reader_slot.end());
    std::sort(order.begin(), order.end());
    std::vector<std::vector<std::optional<double>>> sorted;
    for (const auto& [id, slot] : order) {
      d.reader_ids.push_back(id);
      sorted.push_back(std::move(d.readers[slot]));
    }
    d.readers = std::move(sorted);
  } else {
    for (std::size_t p = 0; p < pool_size; ++p) {
      if (!d.readers[0][p]) throw InputError("model observer " + observer + " lacks a score for a pool phantom");
    }
  }
  return d;
}

struct Draw {
  std::vector<std::size_t> sp;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> readers;
};

Draw draw_sample(const std::vector<std::size_t>& sp_pool, const std::vector<std::size_t>& sa_pool,
                 std::size_t reader_count, Rng& rng) {
  Draw d;
  std::uniform_int_distribution<std::size_t> sp_pick(0, sp_pool.size() - 1);
  std::uniform_int_distribution<std::size_t> sa_pick(0, sa_pool.size() - 1);
  for (std::size_t i = 0; i < sp_pool.size(); ++i) d.sp.push_back(sp_pool[sp_pick(rng)]);
  for (std::size_t i = 0; i < sa_pool.size(); ++i) d.sa.push_back(sa_pool[sa_pick(rng)]);
  if (reader_count > 0) {
    std::uniform_int_distribution<std::size_t> reader_pick(0, reader_count - 1);
    for (std::size_t i = 0; i < reader_count; ++i) d.readers.push_back(reader_pick(rng));
  }
  return d;
}

// AUC of an observer on a draw, or nullopt when the validity rule fails.
std::optional<double> observer_auc(const ObserverData& o, const std::vector<std::size_t>& sp,
                                   const std::vector<std::size_t>& sa, const std::vector<std::size_t>& readers,
                                   int min_per_class, AucMethod method) {
  const auto one = [&](const std::vector<std::optional<double>>& scores) -> std::optional<double> {
    std::vector<double> a;
    std::vector<double> b;
    for (const std::size_t p : sp) {
      if (scores[p]) a.push_back(*scores[p]);
    }
    for (const std::size_t p : sa) {
      if (scores[p]) b.push_back(*scores[p]);
    }
    const auto floor = static_cast<std::size_t>(std::max(min_per_class, method == AucMethod::parametric ? 2 : 1));
    if (a.size() < floor || b.size() < floor) return std::nullopt;
    return auc(method, a, b);
  };
  if (!o.panel) return one(o.readers[0]);
  double total = 0.0;
  for (const std::size_t r : readers) {
    const auto v = one(o.readers[r]);
    if (!v) return std::nullopt;
    total += *v;
  }
  return total / static_cast<double>(readers.size());
}

std::vector<std::size_t> all_readers(const ObserverData& o) {
  std::vector<std::size_t> r(o.panel ? o.readers.size() : 0);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

}  // namespace

BootstrapResult summarize_deltas(double observed_delta, std::vector<double> deltas, std::int64_t discarded) {
  if (deltas.empty()) throw InputError("no bootstrap draws to summarize");
  std::sort(deltas.begin(), deltas.end());
  BootstrapResult r;
  r.observed_delta = observed_delta;
  r.iterations = static_cast<std::int64_t>(deltas.size());
  r.discarded = discarded;
  r.mean_delta = mean(deltas);
  r.ci_low = percentile_sorted(deltas, 2.5);
  r.ci_high = percentile_sorted(deltas, 97.5);
  r.percentile_of_zero = percentile_of(deltas, 0.0);
  const double p = 2.0 * std::min(r.percentile_of_zero, 100.0 - r.percentile_of_zero) / 100.0;
  r.p_value = std::clamp(p, 1.0 / static_cast<double>(r.iterations + 1), 1.0);
  r.deltas = std::move(deltas);
  return r;
}

BootstrapResult run_bootstrap(double observed_delta, int iterations,
                              const std::function<std::optional<double>(std::int64_t)>& attempt, int jobs) {
  if (iterations < 1) throw InputError("bootstrap iterations must be positive");
  const std::int64_t max_attempts = 100 * static_cast<std::int64_t>(iterations);
  constexpr std::int64_t kBatch = 1024;
  std::vector<double> deltas;
  deltas.reserve(static_cast<std::size_t>(iterations));
  std::int64_t next = 0;
  std::int64_t discarded = 0;
  std::vector<std::optional<double>> batch(kBatch);
  while (static_cast<int>(deltas.size()) < iterations && next < max_attempts) {
    const std::int64_t count = std::min(kBatch, max_attempts - next);
    parallel_for(count, [&](std::int64_t i) { batch[static_cast<std::size_t>(i)] = attempt(next + i); }, jobs);
    for (std::int64_t i = 0; i < count && static_cast<int>(deltas.size()) < iterations; ++i) {
      if (batch[static_cast<std::size_t>(i)]) {
        deltas.push_back(*batch[static_cast<std::size_t>(i)]);
      } else {
        ++discarded;
      }
    }
    next += count;
  }
  if (static_cast<int>(deltas.size()) < iterations) {
    const double rate = static_cast<double>(discarded) / static_cast<double>(discarded + deltas.size());
    throw InputError("bootstrap validity rule is infeasible: " + std::to_string(discarded) + " of " +
                     std::to_string(discarded + static_cast<std::int64_t>(deltas.size())) + " draws discarded (" +
                     std::to_string(100.0 * rate) + "%)");
  }
  return summarize_deltas(observed_delta, std::move(deltas), discarded);
}

BootstrapResult bootstrap_compare(const ScoreTable& table, const BootstrapConfig& cfg,
                                  const std::vector<PhantomRef>& pool) {
  if (cfg.iterations < 1) throw InputError("bootstrap iterations must be positive");
  if (cfg.min_per_class < 1) throw InputError("min_per_class must be positive");
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::size_t> sp_pool;
  std::vector<std::size_t> sa_pool;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!index.emplace(pool[i].id, i).second) throw InputError("duplicate phantom id in pool: " + pool[i].id);
    (pool[i].label == 1 ? sp_pool : sa_pool).push_back(i);
  }
  if (sp_pool.empty() || sa_pool.empty()) throw InputError("phantom pool needs both signal-present and absent phantoms");

  const ObserverData a = collect(table, cfg.observer_a, cfg.condition, index, pool.size());
  const ObserverData b = collect(table, cfg.observer_b, cfg.condition, index, pool.size());

  const auto observed_a = observer_auc(a, sp_pool, sa_pool, all_readers(a), 1, cfg.auc);
  const auto observed_b = observer_auc(b, sp_pool, sa_pool, all_readers(b), 1, cfg.auc);
  if (!observed_a || !observed_b) throw InputError("observers lack scores for one class");
  const double observed = *observed_a - *observed_b;

  const std::size_t readers_a = a.panel ? a.readers.size() : 0;
  const std::size_t readers_b = b.panel ? b.readers.size() : 0;
  // Attempt k uses its own stream; valid attempts are kept in attempt order.
  const auto attempt = [&](std::int64_t k) -> std::optional<double> {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
    const Draw da = draw_sample(sp_pool, sa_pool, readers_a, rng);
    const auto va = observer_auc(a, da.sp, da.sa, da.readers, cfg.min_per_class, cfg.auc);
    std::optional<double> vb;
    if (cfg.paired) {
      // Panels with the same readers share the reader draw.
      std::vector<std::size_t> rb = da.readers;
      if (!b.panel) {
        rb.clear();
      } else if (!a.panel || a.reader_ids != b.reader_ids) {
        std::uniform_int_distribution<std::size_t> pick(0, readers_b - 1);
        rb.clear();
        for (std::size_t i = 0; i < readers_b; ++i) rb.push_back(pick(rng));
      }
      vb = observer_auc(b, da.sp, da.sa, rb, cfg.min_per_class, cfg.auc);
    } else {
      Rng other(derive_seed(~cfg.seed, static_cast<std::uint64_t>(k)));
      const Draw db = draw_sample(sp_pool, sa_pool, readers_b, other);
      vb = observer_auc(b, db.sp, db.sa, db.readers, cfg.min_per_class, cfg.auc);
    }
    if (!va || !vb) return std::nullopt;
    return *va - *vb;
  };

  return run_bootstrap(observed, cfg.iterations, attempt, cfg.jobs);
}

nlohmann::json to_json(const BootstrapResult& r) {
  return {{"observed_delta", r.observed_delta},
          {"mean_delta", r.mean_delta},
          {"ci95", {r.ci_low, r.ci_high}},
          {"percentile_of_zero", r.percentile_of_zero},
          {"p_value", r.p_value},
          {"iterations", r.iterations},
          {"discarded", r.discarded}};
}

void write_delta_histogram(const BootstrapResult& r, const std::filesystem::path& path, int bins) {
  if (bins < 1) throw InputError("histogram needs at least one bin");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write histogram: " + path.string());
  out.precision(17);
  out << "bin_low,bin_high,count\n";
  if (r.deltas.empty()) return;
  double lo = r.deltas.front();
  double hi = r.deltas.back();
  if (hi <= lo) {
    out << lo << ',' << hi << ',' << r.deltas.size() << '\n';
    return;
  }
  std::vector<std::int64_t> counts(static_cast<std::size_t>(bins), 0);
  const double width = (hi - lo) / bins;
  for (const double d : r.deltas) {
    const auto b = std::min<std::size_t>(static_cast<std::size_t>((d - lo) / width), static_cast<std::size_t>(bins - 1));
    ++counts[b];
  }
  for (int b = 0; b < bins; ++b) out << lo + b * width << ',' << lo + (b + 1) * width << ',' << counts[static_cast<std::size_t>(b)] << '\n';
}

}  // namespace mobs
