#include "mobs/channels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "mobs/fft.hpp"

namespace mobs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// cos/sin of a phase, exact at multiples of pi/2 so quadrature carriers have
// true zero crossings.
std::pair<double, double> phase_cos_sin(double phase) {
  const double quarter = phase / (0.5 * std::numbers::pi);
  const double nearest = std::round(quarter);
  if (std::abs(quarter - nearest) < 1e-12) {
    switch (((static_cast<long long>(nearest) % 4) + 4) % 4) {
      case 0: return {1.0, 0.0};
      case 1: return {0.0, 1.0};
      case 2: return {-1.0, 0.0};
      default: return {0.0, -1.0};
    }
  }
  return {std::cos(phase), std::sin(phase)};
}

Volume gabor_kernel(int extent, double theta, double frequency, double phase, double sigma) {
  Volume k(Dims{extent, extent, 1});
  const double c = 0.5 * (extent - 1);
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const auto [cb, sb] = phase_cos_sin(phase);
  const double two_sigma2 = 2.0 * sigma * sigma;
  for (int y = 0; y < extent; ++y) {
    const double j = y - c;
    for (int x = 0; x < extent; ++x) {
      const double i = x - c;
      const double rotated = i * ct + j * st;
      const double a = 2.0 * std::numbers::pi * frequency * rotated;
      const double envelope = std::exp(-(i * i + j * j) / two_sigma2);
      k(x, y) = envelope * (std::cos(a) * cb - std::sin(a) * sb);
    }
  }
  return k;
}

json params_to_json(const GaborParams& p) {
  return {{"orientations", p.orientations},     {"phases", p.phases},
          {"frequencies", p.frequencies},       {"pixels_per_cycle", p.pixels_per_cycle},
          {"envelope_octaves", p.envelope_octaves}, {"kernel_extent", p.kernel_extent}};
}

GaborParams params_from_json(const json& j) {
  GaborParams p;
  p.orientations = j.at("orientations").get<std::vector<double>>();
  p.phases = j.at("phases").get<std::vector<double>>();
  p.frequencies = j.at("frequencies").get<std::vector<double>>();
  p.pixels_per_cycle = j.value("pixels_per_cycle", std::vector<double>{});
  p.envelope_octaves = j.at("envelope_octaves").get<double>();
  p.kernel_extent = j.at("kernel_extent").get<int>();
  return p;
}

}  // namespace

GaborParams GaborParams::make(int n_orientations, std::vector<double> phases, std::vector<double> pixels_per_cycle,
                              int kernel_extent, double envelope_octaves) {
  if (n_orientations < 1) throw InputError("need at least one orientation");
  GaborParams p;
  for (int k = 0; k < n_orientations; ++k) p.orientations.push_back(k * std::numbers::pi / n_orientations);
  p.phases = std::move(phases);
  for (const double ppc : pixels_per_cycle) {
    if (!(ppc > 0.0)) throw InputError("pixels per cycle must be positive");
    p.frequencies.push_back(1.0 / ppc);
  }
  p.pixels_per_cycle = std::move(pixels_per_cycle);
  p.kernel_extent = kernel_extent;
  p.envelope_octaves = envelope_octaves;
  return p;
}

GaborParams GaborParams::standard(int kernel_extent) {
  return make(8, {0.0, 0.5 * std::numbers::pi}, {4.0, 8.0, 16.0, 32.0, 64.0}, kernel_extent, 1.0);
}

double gabor_envelope_sigma(double frequency, double octaves) {
  const double b = std::exp2(octaves);
  return std::sqrt(std::log(2.0) / 2.0) / (std::numbers::pi * frequency) * (b + 1.0) / (b - 1.0);
}

const char* to_string(ChannelProvenance p) { return p == ChannelProvenance::gabor ? "gabor" : "fco"; }

std::size_t gabor_index(const GaborParams& params, std::size_t k, std::size_t l, std::size_t p) {
  return (k * params.frequencies.size() + l) * params.phases.size() + p;
}

ChannelBank gabor_bank(const GaborParams& params) {
  if (params.kernel_extent < 1 || params.kernel_extent % 2 == 0) {
    throw InputError("kernel_extent must be odd and positive");
  }
  if (params.channel_count() == 0) throw InputError("Gabor bank needs at least one orientation, phase and frequency");
  if (!(params.envelope_octaves > 0.0)) throw InputError("envelope_octaves must be positive");
  for (const double f : params.frequencies) {
    if (!(f > 0.0) || f >= 0.5) {
      throw InputError("Gabor frequency " + std::to_string(f) + " cycles/pixel is not below Nyquist (0.5)");
    }
  }
  ChannelBank bank;
  bank.provenance = ChannelProvenance::gabor;
  bank.params = params;
  bank.kernels.reserve(params.channel_count());
  for (const double theta : params.orientations) {
    for (const double f : params.frequencies) {
      const double sigma = gabor_envelope_sigma(f, params.envelope_octaves);
      for (const double phase : params.phases) {
        bank.kernels.push_back(gabor_kernel(params.kernel_extent, theta, f, phase, sigma));
      }
    }
  }
  return bank;
}

Volume mean_signal(const std::vector<Volume>& sp_crops, const std::vector<Volume>& sa_crops) {
  if (sp_crops.empty() || sa_crops.empty()) throw InputError("mean_signal needs non-empty crop stacks");
  const Dims dims = sp_crops.front().dims();
  const auto check = [&](const Volume& v) {
    if (v.dims() != dims) throw InputError("crop dims mismatch: " + to_string(v.dims()) + " vs " + to_string(dims));
  };
  std::vector<double> sp(static_cast<std::size_t>(dims.size()), 0.0);
  std::vector<double> sa(sp.size(), 0.0);
  for (const auto& c : sp_crops) {
    check(c);
    for (std::size_t i = 0; i < sp.size(); ++i) sp[i] += c[static_cast<std::int64_t>(i)];
  }
  for (const auto& c : sa_crops) {
    check(c);
    for (std::size_t i = 0; i < sa.size(); ++i) sa[i] += c[static_cast<std::int64_t>(i)];
  }
  Volume out(dims, sp_crops.front().spacing());
  const double np = static_cast<double>(sp_crops.size());
  const double na = static_cast<double>(sa_crops.size());
  for (std::size_t i = 0; i < sp.size(); ++i) out[static_cast<std::int64_t>(i)] = sp[i] / np - sa[i] / na;
  return out;
}

ChannelBank fco_bank(const ChannelBank& gabor, const Volume& signal) {
  if (gabor.kernels.empty()) throw InputError("empty channel bank");
  const Dims dims = gabor.kernel_dims();
  if (signal.dims() != dims) {
    throw InputError("mean signal dims " + to_string(signal.dims()) + " differ from kernel dims " + to_string(dims));
  }
  if (std::all_of(signal.values().begin(), signal.values().end(), [](double v) { return v == 0.0; })) {
    throw NumericError("mean signal is identically zero; FCO channels are degenerate");
  }
  const std::int64_t n = dims.size();
  const double nxy = static_cast<double>(n);
  const std::vector<fft::Complex> signal_fft =
      fft::dft(dims, std::vector<fft::Complex>(signal.values().begin(), signal.values().end()), -1);

  ChannelBank out;
  out.provenance = ChannelProvenance::fco;
  out.params = gabor.params;
  out.kernels.reserve(gabor.size());
  for (std::size_t c = 0; c < gabor.size(); ++c) {
    const auto& kernel = gabor.kernels[c];
    std::vector<fft::Complex> spectrum =
        fft::dft(dims, std::vector<fft::Complex>(kernel.values().begin(), kernel.values().end()), -1);
    for (std::int64_t i = 0; i < n; ++i) {
      const double psd = std::norm(spectrum[i]) / nxy;
      spectrum[i] = psd * signal_fft[i];
    }
    const std::vector<fft::Complex> spatial = fft::dft(dims, spectrum, +1);
    double max_real = 0.0;
    double max_imag = 0.0;
    for (const auto& z : spatial) {
      max_real = std::max(max_real, std::abs(z.real()));
      max_imag = std::max(max_imag, std::abs(z.imag()));
    }
    if (max_imag > 1e-9 * std::max(max_real, 1e-300)) {
      throw NumericError("FCO channel " + std::to_string(c) + " has a non-negligible imaginary part");
    }
    Volume k(dims, kernel.spacing());
    double norm2 = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      k[i] = spatial[i].real() / nxy;
      norm2 += k[i] * k[i];
    }
    if (!(norm2 > 0.0)) throw NumericError("FCO channel " + std::to_string(c) + " vanished");
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::int64_t i = 0; i < n; ++i) k[i] *= inv;
    out.kernels.push_back(std::move(k));
  }
  return out;
}

void export_bank(const ChannelBank& bank, const fs::path& dir) {
  fs::create_directories(dir);
  json index;
  index["provenance"] = to_string(bank.provenance);
  index["params"] = params_to_json(bank.params);
  index["ordering"] = "orientation-major, then frequency, then phase";
  json files = json::array();
  for (std::size_t c = 0; c < bank.size(); ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "kernel_%03zu", c);
    save_volume(bank.kernels[c], dir / name, VolumeKind::image);
    files.push_back(std::string(name) + ".f32");
  }
  index["kernels"] = files;
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw InputError("cannot write " + (dir / "index.json").string());
  out << index.dump(2) << '\n';
}

ChannelBank import_bank(const fs::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw InputError("missing bank index: " + (dir / "index.json").string());
  try {
    json index;
    in >> index;
    ChannelBank bank;
    bank.provenance =
        index.at("provenance").get<std::string>() == "fco" ? ChannelProvenance::fco : ChannelProvenance::gabor;
    bank.params = params_from_json(index.at("params"));
    for (const auto& f : index.at("kernels")) bank.kernels.push_back(load_volume(dir / f.get<std::string>()));
    return bank;
  } catch (const json::exception& e) {
    throw InputError("malformed bank index in " + dir.string() + ": " + e.what());
  }
}

}  // namespace mobs
