#include "mobs/volume.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mobs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::mutex g_warn_mutex;
WarningSink g_warning_sink;

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void validate_dims(const Dims& d) {
  if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0) {
    throw InputError("volume dims must be positive, got " + to_string(d));
  }
}

void validate_spacing(const Spacing& s) {
  if (!(s.sx > 0.0) || !(s.sy > 0.0) || !(s.sz > 0.0) || !std::isfinite(s.sx) ||
      !std::isfinite(s.sy) || !std::isfinite(s.sz)) {
    throw InputError("volume spacing must be strictly positive");
  }
}

std::vector<float> read_payload(const fs::path& path, const VolumeHeader& header) {
  const fs::path payload = payload_path(path);
  std::ifstream in(payload, std::ios::binary);
  if (!in) throw InputError("cannot open volume payload: " + payload.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::int64_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  const std::int64_t expected = header.dims.size() * static_cast<std::int64_t>(sizeof(float));
  if (bytes != expected) {
    std::ostringstream os;
    os << "dims mismatch in " << payload.string() << ": sidecar declares " << to_string(header.dims)
       << " (" << header.dims.size() << " scalars) but payload holds " << bytes / 4.0 << " scalars";
    throw InputError(os.str());
  }
  std::vector<float> data(static_cast<std::size_t>(header.dims.size()));
  in.read(reinterpret_cast<char*>(data.data()), expected);
  if (!in) throw InputError("short read on " + payload.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : data) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u = byteswap32(u);
      std::memcpy(&f, &u, 4);
    }
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw InputError("non-finite value at index " + std::to_string(i) + " in " + payload.string());
    }
  }
  return data;
}

template <typename T>
void write_pair(std::span<const T> values, const Dims& dims, const Spacing& spacing, VolumeKind kind,
                const fs::path& path) {
  const fs::path payload = payload_path(path);
  const fs::path sidecar = sidecar_path(path);
  std::ofstream out(payload, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write volume payload: " + payload.string());
  std::vector<float> buffer(values.size());
  std::transform(values.begin(), values.end(), buffer.begin(), [](T v) { return static_cast<float>(v); });
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : buffer) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u = byteswap32(u);
      std::memcpy(&f, &u, 4);
    }
  }
  out.write(reinterpret_cast<const char*>(buffer.data()),
            static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  if (!out) throw InputError("write failed: " + payload.string());

  json meta;
  meta["dims"] = {dims.nx, dims.ny, dims.nz};
  meta["spacing_mm"] = {spacing.sx, spacing.sy, spacing.sz};
  meta["kind"] = to_string(kind);
  std::ofstream side(sidecar, std::ios::trunc);
  if (!side) throw InputError("cannot write volume sidecar: " + sidecar.string());
  side << meta.dump(2) << '\n';
  if (!side) throw InputError("write failed: " + sidecar.string());
}

// Box erosion along one axis: keeps voxel i iff every voxel in [i-r, i+r] on
// that line is set; positions outside the line count as unset.
void erode_axis(std::vector<std::uint8_t>& data, const Dims& d, int axis, int r) {
  const std::int64_t n = axis == 0 ? d.nx : axis == 1 ? d.ny : d.nz;
  if (n <= 1 || r <= 0) return;
  const std::int64_t stride = axis == 0 ? 1 : axis == 1 ? d.nx : d.nx * d.ny;
  const std::int64_t lines = d.size() / n;
  std::vector<std::int64_t> prefix(static_cast<std::size_t>(n + 1));
  std::vector<std::uint8_t> line(static_cast<std::size_t>(n));
  for (std::int64_t l = 0; l < lines; ++l) {
    std::int64_t base;
    if (axis == 0) {
      base = l * d.nx;
    } else if (axis == 1) {
      base = (l % d.nx) + (l / d.nx) * d.nx * d.ny;
    } else {
      base = l;
    }
    prefix[0] = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      line[i] = data[base + i * stride];
      prefix[i + 1] = prefix[i] + (line[i] ? 0 : 1);
    }
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t lo = i - r;
      const std::int64_t hi = i + r;
      bool keep = line[i] && lo >= 0 && hi < n;
      if (keep) keep = (prefix[hi + 1] - prefix[lo]) == 0;
      data[base + i * stride] = keep ? 1 : 0;
    }
  }
}

}  // namespace

void warn(const std::string& message) {
  std::lock_guard lock(g_warn_mutex);
  if (g_warning_sink) {
    g_warning_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_warn_mutex);
  std::swap(g_warning_sink, sink);
  return sink;
}

std::string to_string(const Dims& d) {
  return "[" + std::to_string(d.nx) + "," + std::to_string(d.ny) + "," + std::to_string(d.nz) + "]";
}

template <typename T>
BasicVolume<T>::BasicVolume(Dims dims, Spacing spacing)
    : dims_(dims), spacing_(spacing) {
  validate_dims(dims_);
  validate_spacing(spacing_);
  data_.assign(static_cast<std::size_t>(dims_.size()), T{0});
}

template <typename T>
BasicVolume<T>::BasicVolume(Dims dims, Spacing spacing, std::vector<T> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  validate_dims(dims_);
  validate_spacing(spacing_);
  if (static_cast<std::int64_t>(data_.size()) != dims_.size()) {
    throw InputError("volume data length " + std::to_string(data_.size()) + " does not match dims " +
                     to_string(dims_));
  }
  for (const T v : data_) {
    if (!std::isfinite(v)) throw InputError("volume contains non-finite values");
  }
}

template <typename T>
BasicVolume<T> BasicVolume<T>::slice(std::int64_t z) const {
  if (z < 0 || z >= dims_.nz) throw InputError("slice index out of range: " + std::to_string(z));
  const std::int64_t plane = dims_.nx * dims_.ny;
  BasicVolume out(Dims{dims_.nx, dims_.ny, 1}, spacing_);
  std::copy_n(data_.begin() + z * plane, plane, out.data_.begin());
  return out;
}

template class BasicVolume<double>;
template class BasicVolume<float>;

BinaryMask::BinaryMask(Dims dims, bool value) : dims_(dims) {
  validate_dims(dims_);
  data_.assign(static_cast<std::size_t>(dims_.size()), value ? 1 : 0);
}

BinaryMask::BinaryMask(Dims dims, std::vector<std::uint8_t> data) : dims_(dims), data_(std::move(data)) {
  validate_dims(dims_);
  if (static_cast<std::int64_t>(data_.size()) != dims_.size()) {
    throw InputError("mask data length does not match dims " + to_string(dims_));
  }
  for (auto& b : data_) b = b ? 1 : 0;
}

std::int64_t BinaryMask::count() const {
  return std::count(data_.begin(), data_.end(), std::uint8_t{1});
}

std::vector<std::int64_t> BinaryMask::true_indices() const {
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(count()));
  for (std::int64_t i = 0; i < size(); ++i) {
    if (data_[i]) out.push_back(i);
  }
  return out;
}

const char* to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::image: return "image";
    case VolumeKind::prob: return "prob";
    case VolumeKind::mask: return "mask";
    case VolumeKind::response: return "response";
  }
  return "image";
}

VolumeKind parse_volume_kind(const std::string& s) {
  if (s == "image") return VolumeKind::image;
  if (s == "prob") return VolumeKind::prob;
  if (s == "mask") return VolumeKind::mask;
  if (s == "response") return VolumeKind::response;
  throw InputError("unknown volume kind: " + s);
}

fs::path payload_path(const fs::path& path) {
  fs::path p = path;
  if (p.extension() == ".f32" || p.extension() == ".json") p.replace_extension();
  p += ".f32";
  return p;
}

fs::path sidecar_path(const fs::path& path) {
  fs::path p = path;
  if (p.extension() == ".f32" || p.extension() == ".json") p.replace_extension();
  p += ".json";
  return p;
}

VolumeHeader read_header(const fs::path& path) {
  const fs::path sidecar = sidecar_path(path);
  std::ifstream in(sidecar);
  if (!in) throw InputError("missing volume sidecar: " + sidecar.string());
  json meta;
  try {
    in >> meta;
    VolumeHeader h;
    const auto dims = meta.at("dims").get<std::vector<std::int64_t>>();
    const auto spacing = meta.at("spacing_mm").get<std::vector<double>>();
    if (dims.size() != 3 || spacing.size() != 3) throw InputError("dims and spacing_mm need 3 entries");
    h.dims = {dims[0], dims[1], dims[2]};
    h.spacing = {spacing[0], spacing[1], spacing[2]};
    h.kind = parse_volume_kind(meta.value("kind", std::string("image")));
    validate_dims(h.dims);
    validate_spacing(h.spacing);
    return h;
  } catch (const json::exception& e) {
    throw InputError("malformed sidecar " + sidecar.string() + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(sidecar.string() + ": " + e.what());
  }
}

Volume load_volume(const fs::path& path) {
  const VolumeHeader h = read_header(path);
  std::vector<float> raw = read_payload(path, h);
  return Volume(h.dims, h.spacing, std::vector<double>(raw.begin(), raw.end()));
}

VolumeF load_volume_f32(const fs::path& path) {
  const VolumeHeader h = read_header(path);
  return VolumeF(h.dims, h.spacing, read_payload(path, h));
}

BinaryMask load_mask(const fs::path& path) {
  const VolumeHeader h = read_header(path);
  const std::vector<float> raw = read_payload(path, h);
  std::vector<std::uint8_t> bits(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) bits[i] = raw[i] != 0.0f ? 1 : 0;
  return BinaryMask(h.dims, std::move(bits));
}

void save_volume(const Volume& v, const fs::path& path, VolumeKind kind) {
  write_pair<double>(v.values(), v.dims(), v.spacing(), kind, path);
}

void save_volume(const VolumeF& v, const fs::path& path, VolumeKind kind) {
  write_pair<float>(v.values(), v.dims(), v.spacing(), kind, path);
}

void save_mask(const BinaryMask& m, const fs::path& path, Spacing spacing) {
  std::vector<float> values(m.values().begin(), m.values().end());
  write_pair<float>(values, m.dims(), spacing, VolumeKind::mask, path);
}

bool crop_fits(const Dims& dims, const CropSpec& spec) {
  const auto axis_ok = [](std::int64_t c, std::int64_t e, std::int64_t n) {
    const std::int64_t h = e / 2;
    return c - h >= 0 && c + h < n;
  };
  return axis_ok(spec.center.x, spec.extent.nx, dims.nx) && axis_ok(spec.center.y, spec.extent.ny, dims.ny) &&
         axis_ok(spec.center.z, spec.extent.nz, dims.nz);
}

void check_crop_bounds(const Dims& dims, const CropSpec& spec) {
  const Dims& e = spec.extent;
  if (e.nx <= 0 || e.ny <= 0 || e.nz <= 0 || e.nx % 2 == 0 || e.ny % 2 == 0 || e.nz % 2 == 0) {
    throw InputError("crop extent must be odd and positive, got " + to_string(e));
  }
  if (!crop_fits(dims, spec)) {
    std::ostringstream os;
    os << "crop window " << to_string(e) << " at (" << spec.center.x << "," << spec.center.y << ","
       << spec.center.z << ") exceeds volume bounds " << to_string(dims);
    throw InputError(os.str());
  }
}

template <typename T>
BasicVolume<T> crop(const BasicVolume<T>& v, const CropSpec& spec) {
  check_crop_bounds(v.dims(), spec);
  const Dims& e = spec.extent;
  const std::int64_t x0 = spec.center.x - e.nx / 2;
  const std::int64_t y0 = spec.center.y - e.ny / 2;
  const std::int64_t z0 = spec.center.z - e.nz / 2;
  BasicVolume<T> out(e, v.spacing());
  auto dst = out.values().begin();
  const auto src = v.values();
  for (std::int64_t z = 0; z < e.nz; ++z) {
    for (std::int64_t y = 0; y < e.ny; ++y) {
      const auto row = src.begin() + v.index(x0, y0 + y, z0 + z);
      dst = std::copy(row, row + e.nx, dst);
    }
  }
  return out;
}

template Volume crop(const Volume&, const CropSpec&);
template VolumeF crop(const VolumeF&, const CropSpec&);

BinaryMask erode(const BinaryMask& m, int radius) {
  if (radius < 0) throw InputError("erosion radius must be non-negative");
  std::vector<std::uint8_t> data(m.values().begin(), m.values().end());
  for (int axis = 0; axis < 3; ++axis) erode_axis(data, m.dims(), axis, radius);
  return BinaryMask(m.dims(), std::move(data));
}

BinaryMask build_interior_mask(const Volume& v, int erosion_voxels, double intensity_floor) {
  if (erosion_voxels < 0) throw InputError("erosion_voxels must be non-negative");
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(v.size()));
  const auto values = v.values();
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = values[i] > intensity_floor ? 1 : 0;
  BinaryMask mask = erode(BinaryMask(v.dims(), std::move(bits)), erosion_voxels);
  if (mask.count() == 0) warn("interior mask is empty");
  return mask;
}

}  // namespace mobs
