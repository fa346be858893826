#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>

#include "cfseg/error.hpp"

namespace cfseg {

using Index = std::ptrdiff_t;

/// Voxel counts along x (fastest), y, z.
struct Dims {
  Index x = 1;
  Index y = 1;
  Index z = 1;

  Index count() const { return x * y * z; }
  Index operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  Index& operator[](int axis) { return axis == 0 ? x : axis == 1 ? y : z; }
  bool operator==(const Dims&) const = default;
};

/// Integer voxel coordinate; may lie outside a volume (patch origins do).
struct Voxel {
  Index x = 0;
  Index y = 0;
  Index z = 0;

  Index operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  Index& operator[](int axis) { return axis == 0 ? x : axis == 1 ? y : z; }
  bool operator==(const Voxel&) const = default;
};

/// Millimetres per voxel.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  double& operator[](int axis) { return axis == 0 ? x : axis == 1 ? y : z; }
  bool operator==(const Spacing&) const = default;
  bool valid() const { return x > 0.0 && y > 0.0 && z > 0.0; }
};

/// Dense 3D grid with x fastest, z slowest.
template <typename T>
struct Volume {
  using Scalar = T;
  using Voxels = Eigen::Array<T, Eigen::Dynamic, 1>;

  Dims dims;
  Spacing spacing;
  Voxels voxels;

  Volume() : voxels(Voxels::Zero(1)) {}
  Volume(Dims d, Spacing s, T fill = T{0})
      : dims(d), spacing(s), voxels(Voxels::Constant(d.count(), fill)) {
    if (d.x < 1 || d.y < 1 || d.z < 1)
      fail(ErrorCode::kInvalidArgument, "volume dims must be >= 1");
  }

  Index index(Index x, Index y, Index z) const { return x + dims.x * (y + dims.y * z); }
  bool contains(Index x, Index y, Index z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims.x && y < dims.y && z < dims.z;
  }
  T& at(Index x, Index y, Index z) { return voxels[index(x, y, z)]; }
  T at(Index x, Index y, Index z) const { return voxels[index(x, y, z)]; }

  bool operator==(const Volume& o) const {
    return dims == o.dims && spacing == o.spacing && (voxels == o.voxels).all();
  }
};

using ImageVolume = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

inline constexpr int kNumOrgans = 13;
inline constexpr int kNumClasses = kNumOrgans + 1;

/// Abdominal organ label 1..13.
class OrganId {
 public:
  explicit constexpr OrganId(int id) : id_(id) {
    if (id < 1 || id > kNumOrgans) fail(ErrorCode::kInvalidArgument, "organ id out of range");
  }
  constexpr int value() const { return id_; }
  std::string_view name() const;
  static OrganId from_name(std::string_view name);
  bool operator==(const OrganId&) const = default;
  auto operator<=>(const OrganId&) const = default;

 private:
  int id_;
};

/// Throws kLabelOutOfRange unless every voxel is in 0..13.
void validate_labels(const LabelVolume& labels);

/// Per-axis record of a centred pad/crop, enough to undo it exactly.
struct CropPadRecord {
  struct Axis {
    Index crop_lo = 0;
    Index crop_hi = 0;
    Index pad_lo = 0;
    Index pad_hi = 0;
    bool operator==(const Axis&) const = default;
  };
  std::array<Axis, 3> axes;
  Dims source;
  Dims target;

  bool consistent() const;
  bool operator==(const CropPadRecord&) const = default;
};

enum class Interp { kTrilinear, kNearest };

/// Output dims for resampling: ceil(dim * old / new) per axis.
Dims resampled_dims(Dims dims, Spacing from, Spacing to);

/// Resample onto an explicit grid anchored at the same physical corner.
/// Voxel centres map through physical coordinates; samples clamp to the border.
ImageVolume resample_to_grid(const ImageVolume& vol, Spacing spacing, Dims dims, Interp mode);
LabelVolume resample_to_grid(const LabelVolume& vol, Spacing spacing, Dims dims);

ImageVolume resample(const ImageVolume& vol, Spacing target, Interp mode = Interp::kTrilinear);
/// Labels are always resampled nearest-neighbour; requesting trilinear throws.
LabelVolume resample(const LabelVolume& vol, Spacing target, Interp mode = Interp::kNearest);

template <typename T>
std::pair<Volume<T>, CropPadRecord> pad_crop(const Volume<T>& vol, Dims target, T fill);

/// Inverse of pad_crop: returns a volume of `record.source` dims; cropped-away
/// regions are filled with `fill`.
template <typename T>
Volume<T> undo_pad_crop(const Volume<T>& vol, const CropPadRecord& record, T fill);

/// Undo pad/crop, then nearest-neighbour resample onto the native grid.
LabelVolume restore_native(const LabelVolume& coarse, const CropPadRecord& record,
                           Spacing native_spacing, Dims native_dims);

/// Clamp to [lo, hi] and map affinely onto [0, 1].
ImageVolume normalize_intensity(const ImageVolume& vol, double window_lo, double window_hi);

/// Reinterpret labels as intensities.
ImageVolume to_image(const LabelVolume& labels);

}  // namespace cfseg
