#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mobs/error.hpp"

namespace mobs {

struct Dims {
  std::int64_t nx = 1;
  std::int64_t ny = 1;
  std::int64_t nz = 1;

  std::int64_t size() const { return nx * ny * nz; }
  bool is_2d() const { return nz == 1; }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  bool operator==(const Spacing&) const = default;
};

/// Integer voxel coordinate.
struct Voxel {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  bool operator==(const Voxel&) const = default;
};

/// Dense scalar field, x-fastest. Double for analysis, float for bulk data.
template <typename T>
class BasicVolume {
 public:
  using value_type = T;

  BasicVolume() = default;
  explicit BasicVolume(Dims dims, Spacing spacing = {});
  /// Validates length and finiteness of `data`.
  BasicVolume(Dims dims, Spacing spacing, std::vector<T> data);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::int64_t size() const { return dims_.size(); }
  bool empty() const { return data_.empty(); }

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z = 0) const {
    return x + dims_.nx * (y + dims_.ny * z);
  }
  Voxel voxel(std::int64_t linear) const {
    return {linear % dims_.nx, (linear / dims_.nx) % dims_.ny, linear / (dims_.nx * dims_.ny)};
  }
  bool contains(const Voxel& v) const {
    return v.x >= 0 && v.y >= 0 && v.z >= 0 && v.x < dims_.nx && v.y < dims_.ny && v.z < dims_.nz;
  }

  T& operator()(std::int64_t x, std::int64_t y, std::int64_t z = 0) { return data_[index(x, y, z)]; }
  T operator()(std::int64_t x, std::int64_t y, std::int64_t z = 0) const { return data_[index(x, y, z)]; }
  T& operator[](std::int64_t i) { return data_[i]; }
  T operator[](std::int64_t i) const { return data_[i]; }
  T at(const Voxel& v) const { return data_[index(v.x, v.y, v.z)]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  /// One z-slice as a 2D volume.
  BasicVolume slice(std::int64_t z) const;

  template <typename U>
  BasicVolume<U> cast() const {
    return BasicVolume<U>(dims_, spacing_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  Dims dims_{0, 0, 0};
  Spacing spacing_{};
  std::vector<T> data_;
};

using Volume = BasicVolume<double>;
using VolumeF = BasicVolume<float>;

extern template class BasicVolume<double>;
extern template class BasicVolume<float>;

class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(Dims dims, bool value = false);
  BinaryMask(Dims dims, std::vector<std::uint8_t> data);

  const Dims& dims() const { return dims_; }
  std::int64_t size() const { return dims_.size(); }
  std::int64_t count() const;

  bool operator[](std::int64_t i) const { return data_[i] != 0; }
  void set(std::int64_t i, bool v) { data_[i] = v ? 1 : 0; }
  bool operator()(std::int64_t x, std::int64_t y, std::int64_t z = 0) const {
    return data_[x + dims_.nx * (y + dims_.ny * z)] != 0;
  }
  void set(std::int64_t x, std::int64_t y, std::int64_t z, bool v) {
    data_[x + dims_.nx * (y + dims_.ny * z)] = v ? 1 : 0;
  }
  bool at(const Voxel& v) const { return (*this)(v.x, v.y, v.z); }

  std::span<const std::uint8_t> values() const { return data_; }
  /// Linear indices of true voxels in increasing order.
  std::vector<std::int64_t> true_indices() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  Dims dims_{0, 0, 0};
  std::vector<std::uint8_t> data_;
};

/// Axis-aligned window with odd extents centered on `center`.
struct CropSpec {
  Voxel center;
  Dims extent{1, 1, 1};
};

enum class VolumeKind { image, prob, mask, response };

const char* to_string(VolumeKind kind);
VolumeKind parse_volume_kind(const std::string& s);

struct VolumeHeader {
  Dims dims;
  Spacing spacing;
  VolumeKind kind = VolumeKind::image;
};

// Volume file pair: `<name>.f32` (raw little-endian binary32, x-fastest) plus
// `<name>.json` sidecar. `path` may name either file or the common stem.
std::filesystem::path payload_path(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

VolumeHeader read_header(const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);
VolumeF load_volume_f32(const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);

/// Writes binary32; doubles are rounded to the nearest float.
void save_volume(const Volume& v, const std::filesystem::path& path, VolumeKind kind = VolumeKind::image);
void save_volume(const VolumeF& v, const std::filesystem::path& path, VolumeKind kind = VolumeKind::image);
void save_mask(const BinaryMask& m, const std::filesystem::path& path, Spacing spacing = {});

template <typename T>
BasicVolume<T> crop(const BasicVolume<T>& v, const CropSpec& spec);

/// Throws InputError unless the window of `spec` lies inside `dims`.
void check_crop_bounds(const Dims& dims, const CropSpec& spec);
bool crop_fits(const Dims& dims, const CropSpec& spec);

/// Box erosion of radius `radius` along every axis longer than one voxel.
/// Voxels beyond the volume border count as false.
BinaryMask erode(const BinaryMask& m, int radius);

/// True where v > intensity_floor, then eroded by `erosion_voxels`.
BinaryMask build_interior_mask(const Volume& v, int erosion_voxels, double intensity_floor);

}  // namespace mobs
