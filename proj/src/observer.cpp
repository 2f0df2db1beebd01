#include "mobs/observer.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mobs/parallel.hpp"

namespace mobs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Pairwise (tree) sum over columns [begin, end): the reduction order depends
// only on the sample count.
Eigen::VectorXd pairwise_column_sum(const Eigen::MatrixXd& m, Eigen::Index begin, Eigen::Index end) {
  const Eigen::Index n = end - begin;
  if (n <= 8) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(m.rows());
    for (Eigen::Index c = begin; c < end; ++c) s += m.col(c);
    return s;
  }
  const Eigen::Index mid = begin + n / 2;
  return pairwise_column_sum(m, begin, mid) + pairwise_column_sum(m, mid, end);
}

Eigen::VectorXd column_mean(const Eigen::MatrixXd& m) {
  return pairwise_column_sum(m, 0, m.cols()) / static_cast<double>(m.cols());
}

// Unbiased covariance of the columns of m around `mean`.
Eigen::MatrixXd covariance(const Eigen::MatrixXd& m, const Eigen::VectorXd& mean) {
  const Eigen::MatrixXd centered = m.colwise() - mean;
  Eigen::MatrixXd k = (centered * centered.transpose()) / static_cast<double>(m.cols() - 1);
  return 0.5 * (k + k.transpose());
}

std::vector<Volume> slice_of(const std::vector<Volume>& stacks, std::int64_t z) {
  std::vector<Volume> out;
  out.reserve(stacks.size());
  for (const auto& s : stacks) out.push_back(s.slice(z));
  return out;
}

double dot(const Volume& a, const Volume& b) {
  if (a.dims() != b.dims()) throw InputError("dims mismatch: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  const auto x = a.values();
  const auto y = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

json template_json(const LinearTemplate& t) {
  return {{"provenance", to_string(t.provenance)},
          {"weights", vector_json(t.weights)},
          {"mean_channel_signal", vector_json(t.mean_channel_signal)},
          {"covariance", matrix_json(t.covariance)},
          {"dprime_ch", t.dprime},
          {"ridge", t.ridge},
          {"rank", t.rank}};
}

LinearTemplate template_from(const json& j, Volume kernel) {
  LinearTemplate t;
  t.provenance = j.at("provenance").get<std::string>() == "fco" ? ChannelProvenance::fco : ChannelProvenance::gabor;
  t.weights = vector_from(j.at("weights"));
  t.mean_channel_signal = vector_from(j.at("mean_channel_signal"));
  t.covariance = matrix_from(j.at("covariance"));
  t.dprime = j.at("dprime_ch").get<double>();
  t.ridge = j.value("ridge", 0.0);
  t.rank = j.value("rank", Eigen::Index{0});
  t.spatial_kernel = std::move(kernel);
  return t;
}

fs::path with_suffix(const fs::path& stem, const std::string& suffix) {
  fs::path p = stem;
  p += suffix;
  return p;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

ResponseMatrix channel_responses(const ChannelBank& bank, const std::vector<Volume>& crops, int jobs) {
  if (bank.kernels.empty()) throw InputError("empty channel bank");
  const Dims dims = bank.kernel_dims();
  const Eigen::Index pixels = dims.size();
  const auto channels = static_cast<Eigen::Index>(bank.size());
  Eigen::MatrixXd kernels(pixels, channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const auto& k = bank.kernels[static_cast<std::size_t>(c)];
    kernels.col(c) = Eigen::Map<const Eigen::VectorXd>(k.values().data(), pixels);
  }
  for (const auto& crop : crops) {
    if (crop.dims() != dims) {
      throw InputError("crop dims " + to_string(crop.dims()) + " differ from kernel dims " + to_string(dims));
    }
  }
  ResponseMatrix out(channels, static_cast<Eigen::Index>(crops.size()));
  parallel_for(
      static_cast<std::int64_t>(crops.size()),
      [&](std::int64_t s) {
        const Eigen::Map<const Eigen::VectorXd> crop(crops[static_cast<std::size_t>(s)].values().data(), pixels);
        out.col(s).noalias() = kernels.transpose() * crop;
      },
      jobs);
  return out;
}

Eigen::MatrixXd symmetric_pinv(const Eigen::MatrixXd& m, double rel_tol, Eigen::Index* rank) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double largest = values.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(values.size());
  Eigen::Index kept = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (largest > 0.0 && std::abs(values[i]) > rel_tol * largest) {
      inv[i] = 1.0 / values[i];
      ++kept;
    }
  }
  if (rank) *rank = kept;
  const Eigen::MatrixXd& v = eig.eigenvectors();
  Eigen::MatrixXd p = v * inv.asDiagonal() * v.transpose();
  return 0.5 * (p + p.transpose());
}

HotellingFit fit_hotelling(const Eigen::MatrixXd& present, const Eigen::MatrixXd& absent, double ridge) {
  if (present.cols() < 2 || absent.cols() < 2) {
    throw InputError("training needs at least two samples per class (got " + std::to_string(present.cols()) +
                     " present, " + std::to_string(absent.cols()) + " absent)");
  }
  if (present.rows() != absent.rows()) throw InputError("feature count mismatch between classes");
  if (ridge < 0.0) throw InputError("ridge must be non-negative");
  HotellingFit fit;
  const Eigen::VectorXd mean_p = column_mean(present);
  const Eigen::VectorXd mean_a = column_mean(absent);
  fit.mean_difference = mean_p - mean_a;
  fit.present_covariance = covariance(present, mean_p);
  fit.absent_covariance = covariance(absent, mean_a);
  fit.covariance = 0.5 * (fit.present_covariance + fit.absent_covariance);

  Eigen::Index rank = 0;
  const Eigen::MatrixXd pinv = symmetric_pinv(fit.covariance, kPinvTolerance, &rank);
  fit.rank = rank;
  const double quad = fit.mean_difference.dot(pinv * fit.mean_difference);
  fit.dprime = std::sqrt(std::max(quad, 0.0));
  if (ridge > 0.0) {
    const Eigen::Index n = fit.covariance.rows();
    const Eigen::MatrixXd regularized = fit.covariance + ridge * Eigen::MatrixXd::Identity(n, n);
    fit.weights = symmetric_pinv(regularized) * fit.mean_difference;
  } else {
    if (rank < fit.covariance.rows()) {
      warn("covariance is rank deficient (" + std::to_string(rank) + " of " + std::to_string(fit.covariance.rows()) +
           "); using the pseudo-inverse");
    }
    fit.weights = pinv * fit.mean_difference;
  }
  return fit;
}

Volume spatial_kernel(const ChannelBank& bank, const Eigen::VectorXd& weights) {
  if (static_cast<std::size_t>(weights.size()) != bank.size()) throw InputError("weight count differs from channel count");
  Volume out(bank.kernel_dims(), bank.kernels.front().spacing());
  auto dst = out.values();
  for (std::size_t c = 0; c < bank.size(); ++c) {
    const double w = weights[static_cast<Eigen::Index>(c)];
    const auto src = bank.kernels[c].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
  }
  return out;
}

LinearTemplate train_template(const ChannelBank& bank, const std::vector<Volume>& sp_crops,
                              const std::vector<Volume>& sa_crops, double ridge, int jobs) {
  if (sp_crops.size() < 2 || sa_crops.size() < 2) {
    throw InputError("train_template needs at least two crops per class");
  }
  const ResponseMatrix vp = channel_responses(bank, sp_crops, jobs);
  const ResponseMatrix va = channel_responses(bank, sa_crops, jobs);
  HotellingFit fit = fit_hotelling(vp, va, ridge);
  LinearTemplate t;
  t.provenance = bank.provenance;
  t.weights = std::move(fit.weights);
  t.mean_channel_signal = std::move(fit.mean_difference);
  t.covariance = std::move(fit.covariance);
  t.dprime = fit.dprime;
  t.ridge = ridge;
  t.rank = fit.rank;
  t.spatial_kernel = spatial_kernel(bank, t.weights);
  return t;
}

LinearTemplate3D train_template_3d(const ChannelBank& bank, const std::vector<Volume>& sp_stacks,
                                   const std::vector<Volume>& sa_stacks, int n_slices, double ridge, int jobs) {
  if (n_slices < 1 || n_slices % 2 == 0) throw InputError("n_slices must be odd and positive");
  for (const auto* stacks : {&sp_stacks, &sa_stacks}) {
    for (const auto& s : *stacks) {
      if (s.dims().nz != n_slices) {
        throw InputError("crop stack has " + std::to_string(s.dims().nz) + " slices, expected " +
                         std::to_string(n_slices));
      }
    }
  }
  LinearTemplate3D out;
  out.slice_templates.reserve(static_cast<std::size_t>(n_slices));
  for (int z = 0; z < n_slices; ++z) {
    out.slice_templates.push_back(train_template(bank, slice_of(sp_stacks, z), slice_of(sa_stacks, z), ridge, jobs));
  }

  const auto features = [&](const std::vector<Volume>& stacks) {
    Eigen::MatrixXd f(n_slices, static_cast<Eigen::Index>(stacks.size()));
    parallel_for(
        static_cast<std::int64_t>(stacks.size()),
        [&](std::int64_t s) {
          const Volume& stack = stacks[static_cast<std::size_t>(s)];
          for (int z = 0; z < n_slices; ++z) f(z, s) = score(out.slice_templates[static_cast<std::size_t>(z)], stack.slice(z));
        },
        jobs);
    return f;
  };
  HotellingFit fit = fit_hotelling(features(sp_stacks), features(sa_stacks), ridge);
  const double norm = fit.weights.norm();
  if (!(norm > 0.0)) throw NumericError("slice weights vanished (no class separation in template outputs)");
  out.slice_weights = fit.weights / norm;
  out.mean_feature = std::move(fit.mean_difference);
  out.feature_covariance = std::move(fit.covariance);
  out.dprime = fit.dprime;
  return out;
}

double score(const LinearTemplate& t, const Volume& crop) { return dot(t.spatial_kernel, crop); }

double score(const LinearTemplate3D& t, const Volume& stack) {
  if (stack.dims().nz != t.n_slices()) throw InputError("stack depth differs from template slice count");
  double s = 0.0;
  for (int z = 0; z < t.n_slices(); ++z) {
    s += t.slice_weights[z] * score(t.slice_templates[static_cast<std::size_t>(z)], stack.slice(z));
  }
  return s;
}

void save_template(const LinearTemplate& t, const fs::path& stem) {
  json j = template_json(t);
  j["type"] = "linear2d";
  j["kernel"] = with_suffix(stem, "_kernel").filename().string();
  save_volume(t.spatial_kernel, with_suffix(stem, "_kernel"), VolumeKind::image);
  write_json(j, with_suffix(stem, ".json"));
}

void save_template(const LinearTemplate3D& t, const fs::path& stem) {
  json j;
  j["type"] = "linear3d";
  j["n_slices"] = t.n_slices();
  j["slice_weights"] = vector_json(t.slice_weights);
  j["mean_feature"] = vector_json(t.mean_feature);
  j["feature_covariance"] = matrix_json(t.feature_covariance);
  j["dprime_ch"] = t.dprime;
  json slices = json::array();
  for (int z = 0; z < t.n_slices(); ++z) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_slice_%02d", z);
    json sj = template_json(t.slice_templates[static_cast<std::size_t>(z)]);
    sj["kernel"] = with_suffix(stem, suffix).filename().string();
    save_volume(t.slice_templates[static_cast<std::size_t>(z)].spatial_kernel, with_suffix(stem, suffix),
                VolumeKind::image);
    slices.push_back(sj);
  }
  j["slices"] = slices;
  write_json(j, with_suffix(stem, ".json"));
}

AnyTemplate load_template(const fs::path& stem) {
  const fs::path path = with_suffix(stem, ".json");
  std::ifstream in(path);
  if (!in) throw InputError("missing template file: " + path.string());
  const fs::path dir = path.parent_path();
  try {
    json j;
    in >> j;
    const std::string type = j.at("type").get<std::string>();
    if (type == "linear2d") {
      return template_from(j, load_volume(dir / j.at("kernel").get<std::string>()));
    }
    if (type == "linear3d") {
      LinearTemplate3D t;
      for (const auto& sj : j.at("slices")) {
        t.slice_templates.push_back(template_from(sj, load_volume(dir / sj.at("kernel").get<std::string>())));
      }
      t.slice_weights = vector_from(j.at("slice_weights"));
      t.mean_feature = vector_from(j.at("mean_feature"));
      t.feature_covariance = matrix_from(j.at("feature_covariance"));
      t.dprime = j.at("dprime_ch").get<double>();
      return t;
    }
    throw InputError("unknown template type `" + type + "` in " + path.string());
  } catch (const json::exception& e) {
    throw InputError("malformed template " + path.string() + ": " + e.what());
  }
}

}  // namespace mobs
