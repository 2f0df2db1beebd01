#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mobs/csv.hpp"
#include "mobs/error.hpp"
#include "mobs/parallel.hpp"
#include "mobs/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "run config (JSON)")->required();
  sub->add_option("--jobs", c.jobs, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
  sub->add_option("--seed", c.seed, "override the master seed");
  sub->add_option("--out", c.out, "override the output directory");
}

std::vector<std::int64_t> parse_n_list(const std::string& s) {
  std::vector<std::int64_t> out;
  for (const auto& f : mobs::split_fields(s)) out.push_back(mobs::parse_int(f, "--n"));
  return out;
}

std::pair<std::string, std::string> parse_compare(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) {
    throw mobs::InputError("--compare expects a:b, got `" + s + "`");
  }
  return {s.substr(0, colon), s.substr(colon + 1)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-observer evaluation pipeline"};
  app.require_subcommand(1);
  Common common;

  auto* run = app.add_subcommand("run", "every stage, then summary.json");
  auto* generate = app.add_subcommand("generate", "synthesize train/test phantoms");
  auto* train = app.add_subcommand("train", "train templates and CNN thresholds");
  auto* score = app.add_subcommand("score", "search-task scores on the test set");
  auto* lke = app.add_subcommand("lke", "AUC versus number of candidate locations");
  auto* stats = app.add_subcommand("stats", "bootstrap observer comparisons");
  auto* gaze = app.add_subcommand("gaze", "time-spent overlap with model response maps");
  for (auto* s : {run, generate, train, score, lke, stats, gaze}) add_common(s, common);

  std::optional<std::string> observer;
  train->add_option("--observer", observer, "train only this observer");
  std::optional<std::string> n_list;
  lke->add_option("--n", n_list, "comma-separated location counts");
  std::vector<std::string> compare;
  stats->add_option("--compare", compare, "observer pairs a:b");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage problems are input errors.
    return app.exit(e) == 0 ? 0 : 1;
  }

  std::string stage = "config";
  try {
    mobs::RunOverrides ov;
    ov.seed = common.seed;
    if (common.out) ov.output_dir = *common.out;
    ov.jobs = common.jobs;
    const mobs::RunConfig cfg = mobs::load_run_config(common.config, ov);
    if (cfg.jobs > 0) mobs::set_default_jobs(cfg.jobs);

    if (run->parsed()) {
      mobs::run_all(cfg);
    } else if (generate->parsed()) {
      mobs::stage_generate(cfg);
    } else if (train->parsed()) {
      mobs::stage_train(cfg, observer);
    } else if (score->parsed()) {
      mobs::stage_score(cfg);
    } else if (lke->parsed()) {
      stage = "lke";
      std::optional<std::vector<std::int64_t>> ns;
      if (n_list) ns = parse_n_list(*n_list);
      mobs::stage_lke(cfg, ns);
    } else if (stats->parsed()) {
      stage = "stats";
      std::optional<std::vector<std::pair<std::string, std::string>>> pairs;
      if (!compare.empty()) {
        pairs.emplace();
        for (const auto& c : compare) pairs->push_back(parse_compare(c));
      }
      mobs::stage_stats(cfg, pairs);
    } else if (gaze->parsed()) {
      mobs::stage_gaze(cfg);
    }
    if (!run->parsed()) mobs::write_summary(cfg);
  } catch (const mobs::StageError& e) {
    std::cerr << "mobs: error [" << e.stage() << "]: " << e.what() << '\n';
    return e.exit_code();
  } catch (const mobs::InputError& e) {
    std::cerr << "mobs: error [" << stage << "]: " << e.what() << '\n';
    return 1;
  } catch (const mobs::NumericError& e) {
    std::cerr << "mobs: error [" << stage << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mobs: error [" << stage << "]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
