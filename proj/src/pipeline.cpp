#include "mobs/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "mobs/csv.hpp"
#include "mobs/error.hpp"
#include "mobs/observer.hpp"
#include "mobs/parallel.hpp"
#include "mobs/random.hpp"
#include "mobs/search.hpp"

namespace mobs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- config

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError("config field " + where + "." + key + " has the wrong type");
  }
}

Dims get_dims(const json& j, const char* key, Dims fallback, const std::string& where) {
  const auto v = get_or<std::vector<std::int64_t>>(j, key, {}, where);
  if (v.empty()) return fallback;
  if (v.size() < 2 || v.size() > 3 || std::any_of(v.begin(), v.end(), [](std::int64_t x) { return x < 1; })) {
    throw InputError("config field " + where + "." + key + " must be 2 or 3 positive integers");
  }
  return {v[0], v[1], v.size() == 3 ? v[2] : 1};
}

std::optional<fs::path> get_path(const json& j, const char* key, const fs::path& base, const std::string& where) {
  const auto s = get_or<std::string>(j, key, "", where);
  if (s.empty()) return std::nullopt;
  fs::path p(s);
  return p.is_absolute() ? p : base / p;
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key) || j.at(key).is_null()) return empty;
  if (!j.at(key).is_object()) throw InputError(std::string("config section `") + key + "` must be an object");
  return j.at(key);
}

std::pair<std::string, std::string> parse_pair(const json& j, const std::string& where) {
  if (j.is_array() && j.size() == 2) return {j[0].get<std::string>(), j[1].get<std::string>()};
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    const auto colon = s.find(':');
    if (colon != std::string::npos) return {s.substr(0, colon), s.substr(colon + 1)};
  }
  throw InputError("config field " + where + " must be [a, b] or \"a:b\"");
}

GaborParams parse_channels(const json& j, const std::string& where) {
  const int extent = get_or<int>(j, "kernel_extent", 101, where);
  if (!j.contains("orientations") && !j.contains("pixels_per_cycle") && !j.contains("phases_deg")) {
    auto p = GaborParams::standard(extent);
    p.envelope_octaves = get_or<double>(j, "envelope_octaves", 1.0, where);
    return p;
  }
  std::vector<double> phases;
  for (const double d : get_or<std::vector<double>>(j, "phases_deg", {0.0, 90.0}, where)) {
    phases.push_back(d * std::numbers::pi / 180.0);
  }
  return GaborParams::make(get_or<int>(j, "orientations", 8, where), phases,
                           get_or<std::vector<double>>(j, "pixels_per_cycle", {4, 8, 16, 32, 64}, where), extent,
                           get_or<double>(j, "envelope_octaves", 1.0, where));
}

ObserverSpec parse_observer(const json& j, const fs::path& base) {
  if (!j.is_object()) throw InputError("each observer must be an object");
  ObserverSpec o;
  o.name = get_or<std::string>(j, "name", "", "observers[]");
  if (o.name.empty() || o.name.find_first_of(",:/ ") != std::string::npos) {
    throw InputError("observer names must be non-empty without commas, colons, slashes or spaces");
  }
  const std::string where = "observers." + o.name;
  const std::string type = get_or<std::string>(j, "type", "", where);
  if (type == "cho") {
    o.type = ObserverType::cho;
  } else if (type == "fco") {
    o.type = ObserverType::fco;
  } else if (type == "cnn_post") {
    o.type = ObserverType::cnn_post;
  } else {
    throw InputError(where + ".type must be cho, fco or cnn_post");
  }
  if (o.linear()) {
    o.channels = parse_channels(section(j, "channels"), where + ".channels");
    o.ridge = get_or<double>(j, "ridge", 0.0, where);
    o.sa_crops_per_phantom = get_or<int>(j, "sa_crops_per_phantom", 10, where);
    o.n_slices = get_or<int>(j, "n_slices", 1, where);
    if (o.ridge < 0.0) throw InputError(where + ".ridge must be >= 0");
    if (o.sa_crops_per_phantom < 1) throw InputError(where + ".sa_crops_per_phantom must be >= 1");
    if (o.n_slices < 1 || o.n_slices % 2 == 0) throw InputError(where + ".n_slices must be odd and positive");
  } else {
    o.prob_maps = get_path(j, "prob_maps", base, where);
    const json& s = section(j, "synthetic");
    o.synthetic.blob_radius_vox = get_or<double>(s, "blob_radius_vox", o.synthetic.blob_radius_vox, where);
    o.synthetic.blob_peak = get_or<double>(s, "blob_peak", o.synthetic.blob_peak, where);
    o.synthetic.speckle_density = get_or<double>(s, "speckle_density", o.synthetic.speckle_density, where);
    o.synthetic.speckle_peak = get_or<double>(s, "speckle_peak", o.synthetic.speckle_peak, where);
    o.synthetic.floor_noise = get_or<double>(s, "floor_noise", o.synthetic.floor_noise, where);
  }
  return o;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, x);
  return buf;
}

// ---------------------------------------------------------------- stage plumbing

template <typename F>
auto in_stage(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const InputError& e) {
    throw StageError(stage, 1, e.what());
  } catch (const NumericError& e) {
    throw StageError(stage, 2, e.what());
  } catch (const fs::filesystem_error& e) {
    throw StageError(stage, 1, e.what());
  } catch (const json::exception& e) {
    throw StageError(stage, 1, e.what());
  }
}

fs::path data_dir(const RunConfig& cfg, const std::string& split) {
  if (cfg.dataset.path) return *cfg.dataset.path / split;
  return cfg.output_dir / "data" / split;
}

struct Split {
  fs::path dir;
  DatasetManifest manifest;
};

Split open_split(const RunConfig& cfg, const std::string& split) {
  return in_stage("dataset", [&] {
    const fs::path dir = data_dir(cfg, split);
    const fs::path manifest = dir / "manifest.csv";
    if (!fs::exists(manifest)) {
      throw InputError("dataset manifest not found: " + manifest.string() +
                       (cfg.dataset.path ? "" : " (run `generate` first)"));
    }
    return Split{dir, read_manifest(manifest)};
  });
}

Volume load_phantom(const Split& s, const ManifestEntry& e) { return load_volume(s.dir / e.path); }
BinaryMask load_interior(const Split& s, const ManifestEntry& e) { return load_mask(s.dir / (e.path + "_mask")); }

fs::path template_stem(const RunConfig& cfg, const std::string& name) { return cfg.output_dir / "templates" / name; }
fs::path search_csv(const RunConfig& cfg, const std::string& name) {
  return cfg.output_dir / "scores" / (name + "_search.csv");
}
fs::path lke_csv(const RunConfig& cfg, const std::string& name) {
  return cfg.output_dir / "lke" / (name + "_curve.csv");
}

// ---------------------------------------------------------------- training

std::vector<std::int64_t> crop_centers(const BinaryMask& interior, const Dims& extent, const Dims& dims) {
  std::vector<std::int64_t> out;
  for (const std::int64_t i : interior.true_indices()) {
    const Voxel v{i % dims.nx, (i / dims.nx) % dims.ny, i / (dims.nx * dims.ny)};
    if (crop_fits(dims, CropSpec{v, extent})) out.push_back(i);
  }
  return out;
}

struct TrainingCrops {
  std::vector<Volume> sp;
  std::vector<Volume> sa;
};

TrainingCrops collect_crops(const RunConfig& cfg, const Split& split, const ObserverSpec& o) {
  const auto ext = static_cast<std::int64_t>(o.channels.kernel_extent);
  const Dims extent{ext, ext, o.n_slices};
  const auto& entries = split.manifest.entries;
  std::vector<std::vector<Volume>> sp(entries.size());
  std::vector<std::vector<Volume>> sa(entries.size());
  parallel_for(
      static_cast<std::int64_t>(entries.size()),
      [&](std::int64_t k) {
        const auto& e = entries[static_cast<std::size_t>(k)];
        const Volume v = load_phantom(split, e);
        if (e.label == 1) {
          if (!e.center) throw InputError("signal-present phantom " + e.id + " has no center");
          const CropSpec spec{*e.center, extent};
          if (!crop_fits(v.dims(), spec)) {
            warn("training crop around the signal of " + e.id + " leaves the volume; phantom skipped");
            return;
          }
          sp[static_cast<std::size_t>(k)].push_back(crop(v, spec));
          return;
        }
        const BinaryMask interior = load_interior(split, e);
        const auto centers = crop_centers(interior, extent, v.dims());
        if (centers.empty()) throw InputError("no interior location of " + e.id + " fits a training crop");
        Rng rng(derive_seed(cfg.seed, "crops:" + o.name + ":" + e.id));
        std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
        for (int c = 0; c < o.sa_crops_per_phantom; ++c) {
          sa[static_cast<std::size_t>(k)].push_back(crop(v, CropSpec{v.voxel(centers[pick(rng)]), extent}));
        }
      },
      cfg.jobs);
  TrainingCrops out;
  for (auto& c : sp) std::move(c.begin(), c.end(), std::back_inserter(out.sp));
  for (auto& c : sa) std::move(c.begin(), c.end(), std::back_inserter(out.sa));
  if (out.sp.size() < 2 || out.sa.size() < 2) {
    throw InputError("observer " + o.name + " needs at least two training crops per class, got " +
                     std::to_string(out.sp.size()) + " present and " + std::to_string(out.sa.size()) + " absent");
  }
  return out;
}

Volume central_slice(const Volume& v) { return v.dims().nz == 1 ? v : v.slice(v.dims().nz / 2); }

void train_linear(const RunConfig& cfg, const Split& split, const ObserverSpec& o) {
  const TrainingCrops crops = collect_crops(cfg, split, o);
  ChannelBank bank = gabor_bank(o.channels);
  if (o.type == ObserverType::fco) {
    std::vector<Volume> sp2;
    std::vector<Volume> sa2;
    for (const auto& c : crops.sp) sp2.push_back(central_slice(c));
    for (const auto& c : crops.sa) sa2.push_back(central_slice(c));
    bank = fco_bank(bank, mean_signal(sp2, sa2));
  }
  fs::create_directories(template_stem(cfg, o.name).parent_path());
  if (o.n_slices == 1) {
    save_template(train_template(bank, crops.sp, crops.sa, o.ridge, cfg.jobs), template_stem(cfg, o.name));
  } else {
    save_template(train_template_3d(bank, crops.sp, crops.sa, o.n_slices, o.ridge, cfg.jobs),
                  template_stem(cfg, o.name));
  }
}

ProbabilityMap probability_map(const RunConfig& cfg, const ObserverSpec& o, const Split& split,
                               const ManifestEntry& e) {
  if (o.prob_maps) {
    const fs::path p = *o.prob_maps / (e.id + "_prob");
    if (!fs::exists(payload_path(p))) throw InputError("probability map not found: " + payload_path(p).string());
    return ProbabilityMap(load_volume(p));
  }
  const VolumeHeader h = read_header(split.dir / e.path);
  SyntheticProbSpec spec = o.synthetic;
  spec.seed = derive_seed(cfg.seed, "prob:" + o.name + ":" + e.id);
  return synthesize_probability_map(h.dims, h.spacing, e.label == 1 ? e.center : std::nullopt, spec);
}

void train_cnn(const RunConfig& cfg, const Split& split, const ObserverSpec& o) {
  std::vector<ProbabilityMap> maps;
  for (const auto& e : split.manifest.entries) maps.push_back(probability_map(cfg, o, split, e));
  std::vector<LabeledMap> labeled;
  for (std::size_t i = 0; i < maps.size(); ++i) labeled.push_back({&maps[i], split.manifest.entries[i].label});
  const ThresholdCalibration c = calibrate_threshold(labeled, cfg.jobs);
  json j = to_json(c);
  j["type"] = "cnn_post";
  const fs::path stem = template_stem(cfg, o.name);
  fs::create_directories(stem.parent_path());
  std::ofstream(fs::path(stem.string() + ".json")) << j.dump(2) << '\n';
}

double load_threshold(const RunConfig& cfg, const std::string& name) {
  const fs::path p = template_stem(cfg, name).string() + ".json";
  std::ifstream in(p);
  if (!in) throw InputError("calibration not found: " + p.string() + " (run `train` first)");
  return json::parse(in).at("threshold").get<double>();
}

// ---------------------------------------------------------------- response maps

AnyTemplate load_trained(const RunConfig& cfg, const std::string& name) {
  const fs::path json_path = template_stem(cfg, name).string() + ".json";
  if (!fs::exists(json_path)) throw InputError("template not found: " + json_path.string() + " (run `train` first)");
  return load_template(template_stem(cfg, name));
}

std::uint64_t hash_doubles(std::span<const double> v, std::uint64_t h) {
  return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(v.data()), v.size_bytes()), h);
}

std::uint64_t kernel_hash(const StackKernel& k) {
  std::uint64_t h = fnv1a64("stack");
  for (std::size_t s = 0; s < k.slices.size(); ++s) {
    const Dims& d = k.slices[s].dims();
    const std::int64_t dims[3] = {d.nx, d.ny, d.nz};
    h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(dims), sizeof(dims)), h);
    h = hash_doubles(k.slices[s].values(), h);
    h = hash_doubles(std::span(&k.weights[s], 1), h);
  }
  return h;
}

// Maps are stored as binary32, so fresh results are rounded the same way
// before use; a cache hit and a miss give identical numbers.
Volume cached_response_map(const RunConfig& cfg, const Volume& phantom, const StackKernel& kernel,
                           std::uint64_t khash) {
  const Dims& d = phantom.dims();
  const std::int64_t dims[3] = {d.nx, d.ny, d.nz};
  std::uint64_t h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(dims), sizeof(dims)), khash);
  h = hash_doubles(phantom.values(), h);
  const fs::path stem = cfg.output_dir / "cache" / hex64(h);
  if (fs::exists(payload_path(stem)) && fs::exists(sidecar_path(stem))) {
    Volume m = load_volume(stem);
    if (m.dims() == d) return m;
  }
  const VolumeF map = response_map(phantom.cast<float>(), kernel, 1);
  fs::create_directories(stem.parent_path());
  const fs::path tmp = stem.string() + ".tmp";
  save_volume(map, tmp, VolumeKind::response);
  fs::rename(payload_path(tmp), payload_path(stem));
  fs::rename(sidecar_path(tmp), sidecar_path(stem));
  return map.cast<double>();
}

std::vector<PhantomRef> pool_of(const Split& s) {
  std::vector<PhantomRef> pool;
  for (const auto& e : s.manifest.entries) pool.push_back({e.id, e.label});
  return pool;
}

void write_curve(const std::vector<LkePoint>& curve, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out.precision(17);
  out << "n_locations,mean_auc,ci_low,ci_high\n";
  for (const auto& p : curve) out << p.n_locations << ',' << p.mean_auc << ',' << p.ci_low << ',' << p.ci_high << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<LkePoint> read_curve(const fs::path& path) {
  const CsvTable t = read_csv(path, {"n_locations", "mean_auc", "ci_low", "ci_high"});
  std::vector<LkePoint> out;
  for (const auto& r : t.rows) {
    out.push_back({parse_int(r[0], path.string()), parse_double(r[1], path.string()), parse_double(r[2], path.string()),
                   parse_double(r[3], path.string())});
  }
  return out;
}

std::string pair_name(const std::pair<std::string, std::string>& p) { return p.first + "_vs_" + p.second; }

}  // namespace

// ---------------------------------------------------------------- public

StageError::StageError(std::string stage, int exit_code, const std::string& message)
    : std::runtime_error(message), stage_(std::move(stage)), exit_code_(exit_code) {}

const ObserverSpec& RunConfig::observer(const std::string& name) const {
  for (const auto& o : observers) {
    if (o.name == name) return o;
  }
  throw InputError("unknown observer `" + name + "`");
}

RunConfig parse_run_config(const json& j, const fs::path& base, const RunOverrides& overrides) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  const int version = get_or<int>(j, "schema_version", 0, "config");
  if (version != kSchemaVersion) {
    throw InputError("config schema_version must be " + std::to_string(kSchemaVersion) + ", got " +
                     std::to_string(version));
  }
  RunConfig c;
  c.experiment = get_or<std::string>(j, "experiment", "experiment", "config");
  if (!j.contains("seed") && !overrides.seed) throw InputError("config needs a `seed`");
  c.seed = overrides.seed ? *overrides.seed : get_or<std::uint64_t>(j, "seed", 0, "config");
  c.output_dir = overrides.output_dir ? *overrides.output_dir
                                      : fs::path(get_or<std::string>(j, "output_dir", "out/" + c.experiment, "config"));
  c.jobs = overrides.jobs ? *overrides.jobs : get_or<int>(j, "jobs", 0, "config");

  const json& d = section(j, "dataset");
  c.dataset.path = get_path(d, "path", base, "dataset");
  c.dataset.background.dims = get_dims(d, "dims", {64, 64, 64}, "dataset");
  const auto sp = get_or<std::vector<double>>(d, "spacing_mm", {0.1, 0.1, 0.1}, "dataset");
  if (sp.size() != 3 || std::any_of(sp.begin(), sp.end(), [](double x) { return !(x > 0.0); })) {
    throw InputError("dataset.spacing_mm must be three positive numbers");
  }
  c.dataset.background.spacing = {sp[0], sp[1], sp[2]};
  const json& bg = section(d, "background");
  c.dataset.background.power_law_beta = get_or<double>(bg, "beta", 3.0, "dataset.background");
  c.dataset.background.mean = get_or<double>(bg, "mean", 0.0, "dataset.background");
  c.dataset.background.std = get_or<double>(bg, "std", 1.0, "dataset.background");
  const json& sg = section(d, "signal");
  c.dataset.signal.kind = parse_signal_kind(get_or<std::string>(sg, "kind", "microcalc", "dataset.signal"));
  c.dataset.signal.diameter_mm = get_or<double>(sg, "diameter_mm", 0.3, "dataset.signal");
  c.dataset.signal.amplitude = get_or<double>(sg, "amplitude", 1.0, "dataset.signal");
  c.dataset.signal.n_ellipsoids = get_or<int>(sg, "n_ellipsoids", 5, "dataset.signal");
  c.dataset.signal.axis_jitter = get_or<double>(sg, "axis_jitter", 0.25, "dataset.signal");
  const auto counts = [&](const char* key, SplitCounts fallback) {
    const json& s = section(d, key);
    SplitCounts out{get_or<int>(s, "signal_present", fallback.signal_present, std::string("dataset.") + key),
                    get_or<int>(s, "signal_absent", fallback.signal_absent, std::string("dataset.") + key)};
    if (out.signal_present < 1 || out.signal_absent < 1) {
      throw InputError(std::string("dataset.") + key + " needs at least one phantom per class");
    }
    return out;
  };
  c.dataset.train = counts("train", c.dataset.train);
  c.dataset.test = counts("test", c.dataset.test);
  c.dataset.erosion_voxels = get_or<int>(d, "erosion_voxels", 8, "dataset");
  c.dataset.intensity_floor = get_or<double>(d, "intensity_floor", -1e300, "dataset");

  if (!j.contains("observers") || !j.at("observers").is_array() || j.at("observers").empty()) {
    throw InputError("config needs a non-empty `observers` array");
  }
  std::set<std::string> names;
  for (const auto& o : j.at("observers")) {
    c.observers.push_back(parse_observer(o, base));
    if (!names.insert(c.observers.back().name).second) {
      throw InputError("duplicate observer name `" + c.observers.back().name + "`");
    }
  }

  const json& task = section(j, "task");
  c.search = get_or<bool>(task, "search", true, "task");
  if (task.contains("lke") && !task.at("lke").is_null()) {
    const json& l = section(task, "lke");
    LkeSpec s;
    s.n = get_or<std::vector<std::int64_t>>(l, "n", s.n, "task.lke");
    s.iterations = get_or<int>(l, "iterations", s.iterations, "task.lke");
    s.neighborhood = get_dims(l, "neighborhood", s.neighborhood, "task.lke");
    s.signal_extra = get_or<bool>(l, "signal_extra", false, "task.lke");
    if (s.n.empty() || std::any_of(s.n.begin(), s.n.end(), [](std::int64_t n) { return n < 1; })) {
      throw InputError("task.lke.n must list positive location counts");
    }
    if (s.iterations < 1) throw InputError("task.lke.iterations must be positive");
    c.lke = s;
  }

  const json& st = section(j, "stats");
  c.stats.iterations = get_or<int>(st, "iterations", 20000, "stats");
  c.stats.min_per_class = get_or<int>(st, "min_per_class", 6, "stats");
  c.stats.auc = parse_auc_method(get_or<std::string>(st, "auc", "parametric", "stats"));
  if (st.contains("compare")) {
    for (const auto& p : st.at("compare")) c.stats.compare.push_back(parse_pair(p, "stats.compare[]"));
  }
  c.stats.reader_ratings = get_path(st, "reader_ratings", base, "stats");

  const json& g = section(j, "gaze");
  c.gaze.enabled = get_or<bool>(g, "enabled", !g.empty(), "gaze");
  if (c.gaze.enabled) {
    if (!g.contains("compare")) throw InputError("gaze.compare must name two observers");
    c.gaze.compare = parse_pair(g.at("compare"), "gaze.compare");
    c.gaze.kernel = get_dims(g, "kernel", kGazeKernel, "gaze");
    c.gaze.fractions = get_or<std::vector<double>>(g, "fractions", fraction_grid(), "gaze");
    c.gaze.fixations = get_path(g, "fixations", base, "gaze");
    c.gaze.iterations = get_or<int>(g, "iterations", 20000, "gaze");
    const json& s = section(g, "synthetic");
    c.gaze.synthetic.readers = get_or<int>(s, "readers", c.gaze.synthetic.readers, "gaze.synthetic");
    c.gaze.synthetic.fixations_per_reader =
        get_or<int>(s, "fixations_per_reader", c.gaze.synthetic.fixations_per_reader, "gaze.synthetic");
    c.gaze.synthetic.hotspot_share = get_or<double>(s, "hotspot_share", c.gaze.synthetic.hotspot_share, "gaze.synthetic");
    c.gaze.synthetic.jitter_vox = get_or<double>(s, "jitter_vox", c.gaze.synthetic.jitter_vox, "gaze.synthetic");
  }

  // Cross references.
  for (const auto& [a, b] : c.stats.compare) {
    c.observer(a);
    c.observer(b);
  }
  if (c.gaze.enabled) {
    if (!c.observer(c.gaze.compare.first).linear() || !c.observer(c.gaze.compare.second).linear()) {
      throw InputError("gaze.compare needs two linear observers");
    }
  }
  for (const auto& p : {c.dataset.path, c.stats.reader_ratings, c.gaze.fixations}) {
    if (p && !fs::exists(*p)) throw InputError("referenced path does not exist: " + p->string());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path, const RunOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, fs::absolute(path).parent_path(), overrides);
}

void stage_generate(const RunConfig& cfg) {
  in_stage("generate", [&] {
    if (cfg.dataset.path) {
      open_split(cfg, "train");
      open_split(cfg, "test");
      return;
    }
    for (const std::string split : {"train", "test"}) {
      const SplitCounts n = split == "train" ? cfg.dataset.train : cfg.dataset.test;
      DatasetConfig d;
      d.output_dir = data_dir(cfg, split);
      d.id_prefix = split;
      d.signal_present = n.signal_present;
      d.signal_absent = n.signal_absent;
      d.background = cfg.dataset.background;
      d.signal = cfg.dataset.signal;
      d.erosion_voxels = cfg.dataset.erosion_voxels;
      d.intensity_floor = cfg.dataset.intensity_floor;
      d.master_seed = derive_seed(cfg.seed, split);
      d.jobs = cfg.jobs;
      generate_dataset(d);
    }
  });
}

void stage_train(const RunConfig& cfg, const std::optional<std::string>& only) {
  const Split split = open_split(cfg, "train");
  in_stage("train", [&] {
    if (only) cfg.observer(*only);
    for (const auto& o : cfg.observers) {
      if (only && o.name != *only) continue;
      if (o.linear()) {
        train_linear(cfg, split, o);
      } else {
        train_cnn(cfg, split, o);
      }
    }
  });
}

void stage_score(const RunConfig& cfg) {
  const Split split = open_split(cfg, "test");
  in_stage("score", [&] {
    if (!cfg.search) return;
    const auto& entries = split.manifest.entries;
    for (const auto& o : cfg.observers) {
      ScoreTable table;
      table.rows.resize(entries.size());
      if (o.linear()) {
        const StackKernel kernel = as_stack(load_trained(cfg, o.name));
        const std::uint64_t khash = kernel_hash(kernel);
        parallel_for(
            static_cast<std::int64_t>(entries.size()),
            [&](std::int64_t k) {
              const auto& e = entries[static_cast<std::size_t>(k)];
              const Volume map = cached_response_map(cfg, load_phantom(split, e), kernel, khash);
              const double s = search_score(map, load_interior(split, e)).score;
              table.rows[static_cast<std::size_t>(k)] = ScoreRow{e.id, e.label, s, o.name, "", ""};
            },
            cfg.jobs);
      } else {
        const double threshold = load_threshold(cfg, o.name);
        parallel_for(
            static_cast<std::int64_t>(entries.size()),
            [&](std::int64_t k) {
              const auto& e = entries[static_cast<std::size_t>(k)];
              const double s = cnn_score(probability_map(cfg, o, split, e), threshold);
              table.rows[static_cast<std::size_t>(k)] = ScoreRow{e.id, e.label, s, o.name, "", ""};
            },
            cfg.jobs);
      }
      fs::create_directories(search_csv(cfg, o.name).parent_path());
      write_score_csv(table, search_csv(cfg, o.name), 0);
    }
  });
}

void stage_lke(const RunConfig& cfg, const std::optional<std::vector<std::int64_t>>& ns) {
  if (!cfg.lke && !ns) return;
  const Split split = open_split(cfg, "test");
  in_stage("lke", [&] {
    const LkeSpec spec = cfg.lke.value_or(LkeSpec{});
    const std::vector<std::int64_t> grid = ns.value_or(spec.n);
    const auto& entries = split.manifest.entries;
    for (const auto& o : cfg.observers) {
      if (!o.linear()) continue;
      const StackKernel kernel = as_stack(load_trained(cfg, o.name));
      const std::uint64_t khash = kernel_hash(kernel);
      std::vector<LkePhantom> prepared(entries.size());
      parallel_for(
          static_cast<std::int64_t>(entries.size()),
          [&](std::int64_t k) {
            const auto& e = entries[static_cast<std::size_t>(k)];
            const Volume map = cached_response_map(cfg, load_phantom(split, e), kernel, khash);
            prepared[static_cast<std::size_t>(k)] =
                prepare_lke(map, e.label == 1 ? e.center : std::nullopt, load_interior(split, e), spec.neighborhood);
          },
          cfg.jobs);
      LkeConfig lc;
      lc.neighborhood = spec.neighborhood;
      lc.iterations = spec.iterations;
      lc.seed = derive_seed(cfg.seed, "lke:" + o.name);
      lc.signal_extra = spec.signal_extra;
      write_curve(lke_curve(prepared, grid, lc, cfg.jobs), lke_csv(cfg, o.name));
    }
  });
}

void stage_stats(const RunConfig& cfg, const std::optional<std::vector<std::pair<std::string, std::string>>>& compare) {
  const Split split = open_split(cfg, "test");
  in_stage("stats", [&] {
    const auto pairs = compare.value_or(cfg.stats.compare);
    if (pairs.empty()) return;
    const auto pool = pool_of(split);
    ScoreTable table;
    std::set<std::string> loaded;
    for (const auto& [a, b] : pairs) {
      for (const auto& name : {a, b}) {
        if (loaded.count(name)) continue;
        const fs::path p = search_csv(cfg, name);
        if (fs::exists(p)) {
          const ScoreTable t = read_score_csv(p);
          table.rows.insert(table.rows.end(), t.rows.begin(), t.rows.end());
          loaded.insert(name);
        }
      }
    }
    if (cfg.stats.reader_ratings) {
      const ScoreTable t = read_reader_ratings(*cfg.stats.reader_ratings, pool);
      table.rows.insert(table.rows.end(), t.rows.begin(), t.rows.end());
    }
    fs::create_directories(cfg.output_dir / "stats");
    for (const auto& pr : pairs) {
      BootstrapConfig bc;
      bc.iterations = cfg.stats.iterations;
      bc.min_per_class = cfg.stats.min_per_class;
      bc.seed = derive_seed(cfg.seed, "stats:" + pair_name(pr));
      bc.observer_a = pr.first;
      bc.observer_b = pr.second;
      bc.auc = cfg.stats.auc;
      bc.jobs = cfg.jobs;
      const BootstrapResult r = bootstrap_compare(table, bc, pool);
      json j = to_json(r);
      j["observer_a"] = pr.first;
      j["observer_b"] = pr.second;
      const fs::path stem = cfg.output_dir / "stats" / pair_name(pr);
      std::ofstream(fs::path(stem.string() + ".json")) << j.dump(2) << '\n';
      write_delta_histogram(r, stem.string() + "_hist.csv");
    }
  });
}

void stage_gaze(const RunConfig& cfg) {
  if (!cfg.gaze.enabled) return;
  const Split split = open_split(cfg, "test");
  in_stage("gaze", [&] {
    const GazeSpec& g = cfg.gaze;
    const std::array<std::string, 2> names{g.compare.first, g.compare.second};
    std::array<StackKernel, 2> kernels;
    std::array<std::uint64_t, 2> hashes{};
    for (int i = 0; i < 2; ++i) {
      kernels[i] = as_stack(load_trained(cfg, names[i]));
      hashes[i] = kernel_hash(kernels[i]);
    }
    std::vector<const ManifestEntry*> sa;
    for (const auto& e : split.manifest.entries) {
      if (e.label == 0) sa.push_back(&e);
    }
    if (sa.empty()) throw InputError("gaze analysis needs signal-absent test phantoms");

    std::optional<FixationLog> recorded;
    if (g.fixations) recorded = load_fixations(*g.fixations);

    // cells[phantom][reader][fraction]
    std::vector<std::map<std::string, std::vector<GazeCell>>> cells(sa.size());
    std::int64_t dropped = 0;
    std::vector<std::int64_t> dropped_by(sa.size(), 0);
    parallel_for(
        static_cast<std::int64_t>(sa.size()),
        [&](std::int64_t k) {
          const ManifestEntry& e = *sa[static_cast<std::size_t>(k)];
          const Volume phantom = load_phantom(split, e);
          const BinaryMask interior = load_interior(split, e);
          const Dims kernel = phantom.dims().is_2d() ? Dims{g.kernel.nx, g.kernel.ny, 1} : g.kernel;
          std::array<std::vector<BinaryMask>, 2> masks;
          std::vector<Voxel> hot;
          for (int i = 0; i < 2; ++i) {
            const Volume smooth = gaussian_smooth(cached_response_map(cfg, phantom, kernels[i], hashes[i]), kernel);
            for (const double f : g.fractions) masks[i].push_back(top_fraction_mask(smooth, f, interior));
            hot.push_back(search_score(smooth, interior).location);
          }
          FixationLog log;
          if (recorded) {
            log = restrict_to_mask(*recorded, e.id, interior);
          } else {
            SyntheticFixationSpec s = g.synthetic;
            s.seed = derive_seed(cfg.seed, "gaze");
            log = restrict_to_mask(synthesize_fixations(e.id, hot, interior, s), e.id, interior);
          }
          dropped_by[static_cast<std::size_t>(k)] = log.dropped;
          std::map<std::string, std::vector<Fixation>> by_reader;
          for (const auto& f : log.records) by_reader[f.reader_id].push_back(f);
          for (const auto& [reader, fx] : by_reader) {
            const Volume t = time_spent_map(fx, phantom.dims(), phantom.spacing(), kernel);
            double total = 0.0;
            for (std::int64_t i = 0; i < t.size(); ++i) {
              if (interior[i]) total += t[i];
            }
            auto& row = cells[static_cast<std::size_t>(k)][reader];
            for (std::size_t fi = 0; fi < g.fractions.size(); ++fi) {
              GazeCell c;
              c.total = total;
              for (std::int64_t i = 0; i < t.size(); ++i) {
                if (masks[0][fi][i]) c.in_a += t[i];
                if (masks[1][fi][i]) c.in_b += t[i];
              }
              row.push_back(c);
            }
          }
        },
        cfg.jobs);
    for (const auto d : dropped_by) dropped += d;
    if (dropped > 0) warn(std::to_string(dropped) + " fixations outside the interior masks were dropped");

    std::set<std::string> reader_set;
    for (const auto& m : cells) {
      for (const auto& [r, _] : m) reader_set.insert(r);
    }
    const std::vector<std::string> readers(reader_set.begin(), reader_set.end());
    if (readers.empty()) throw InputError("no fixations fall on the signal-absent test phantoms");

    fs::create_directories(cfg.output_dir / "gaze");
    const fs::path out_path = cfg.output_dir / "gaze" / (pair_name(g.compare) + ".csv");
    std::ofstream out(out_path);
    out.precision(17);
    out << "fraction,mean_overlap_a,mean_overlap_b,observed_delta,ci_low,ci_high,percentile_of_zero,p_value\n";
    for (std::size_t fi = 0; fi < g.fractions.size(); ++fi) {
      GazeTable t;
      t.readers = readers;
      for (std::size_t k = 0; k < sa.size(); ++k) {
        t.phantoms.push_back(sa[k]->id);
        std::vector<GazeCell> row;
        for (const auto& r : readers) {
          const auto it = cells[k].find(r);
          row.push_back(it == cells[k].end() ? GazeCell{} : it->second[fi]);
        }
        t.cells.push_back(std::move(row));
      }
      const BootstrapResult r =
          bootstrap_time_spent(t, g.iterations, derive_seed(cfg.seed, "gaze-bootstrap:" + std::to_string(fi)), cfg.jobs);
      out << g.fractions[fi] << ',' << mean(pooled_overlaps(t, true)) << ',' << mean(pooled_overlaps(t, false)) << ','
          << r.observed_delta << ',' << r.ci_low << ',' << r.ci_high << ',' << r.percentile_of_zero << ','
          << r.p_value << '\n';
    }
    if (!out) throw InputError("failed writing " + out_path.string());
  });
}

json write_summary(const RunConfig& cfg) {
  return in_stage("summary", [&] {
    json s;
    s["experiment"] = cfg.experiment;
    s["seed"] = cfg.seed;
    json observers = json::object();
    for (const auto& o : cfg.observers) {
      json e;
      const fs::path tj = template_stem(cfg, o.name).string() + ".json";
      if (fs::exists(tj)) {
        std::ifstream in(tj);
        const json t = json::parse(in);
        if (o.linear()) {
          e["dprime_ch"] = t.at("dprime_ch");
          e["dprime_auc"] = normal_cdf(t.at("dprime_ch").get<double>() / std::numbers::sqrt2);
        } else {
          e["threshold"] = t.at("threshold");
        }
      }
      if (fs::exists(search_csv(cfg, o.name))) {
        const ScoreTable t = read_score_csv(search_csv(cfg, o.name));
        std::vector<double> sp;
        std::vector<double> sa;
        for (const auto& r : t.rows) (r.label == 1 ? sp : sa).push_back(r.score);
        if (!sp.empty() && !sa.empty()) {
          e["search_auc_empirical"] = auc_empirical(sp, sa);
          if (sp.size() > 1 && sa.size() > 1) e["search_auc_parametric"] = auc_parametric(sp, sa, true);
        }
      }
      if (fs::exists(lke_csv(cfg, o.name))) {
        json curve = json::array();
        for (const auto& p : read_curve(lke_csv(cfg, o.name))) {
          curve.push_back({{"n_locations", p.n_locations}, {"mean_auc", p.mean_auc}, {"ci_low", p.ci_low},
                           {"ci_high", p.ci_high}});
        }
        e["lke"] = curve;
      }
      observers[o.name] = e;
    }
    s["observers"] = observers;
    json comparisons = json::array();
    for (const auto& pr : cfg.stats.compare) {
      const fs::path p = cfg.output_dir / "stats" / (pair_name(pr) + ".json");
      if (!fs::exists(p)) continue;
      std::ifstream in(p);
      comparisons.push_back(json::parse(in));
    }
    s["comparisons"] = comparisons;
    if (cfg.gaze.enabled) {
      const fs::path p = cfg.output_dir / "gaze" / (pair_name(cfg.gaze.compare) + ".csv");
      if (fs::exists(p)) {
        const CsvTable t = read_csv(p);
        json rows = json::array();
        for (const auto& r : t.rows) {
          json row;
          for (std::size_t i = 0; i < t.header.size(); ++i) row[t.header[i]] = parse_double(r[i], p.string());
          rows.push_back(row);
        }
        s["gaze"] = {{"observer_a", cfg.gaze.compare.first}, {"observer_b", cfg.gaze.compare.second}, {"rows", rows}};
      }
    }
    fs::create_directories(cfg.output_dir);
    std::ofstream(cfg.output_dir / "summary.json") << s.dump(2) << '\n';
    return s;
  });
}

void run_all(const RunConfig& cfg) {
  stage_generate(cfg);
  stage_train(cfg);
  stage_score(cfg);
  stage_lke(cfg);
  stage_stats(cfg);
  stage_gaze(cfg);
  write_summary(cfg);
}

}  // namespace mobs
