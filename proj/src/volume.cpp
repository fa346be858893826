#include "cfseg/volume.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace cfseg {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kMalformedHeader: return "malformed_header";
    case ErrorCode::kUnsupportedDatatype: return "unsupported_datatype";
    case ErrorCode::kLabelOutOfRange: return "label_out_of_range";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kOrganMissing: return "organ_missing";
    case ErrorCode::kPlacementFailed: return "placement_failed";
    case ErrorCode::kMissingTrace: return "missing_trace";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kUnmatchedCase: return "unmatched_case";
    case ErrorCode::kCheckpointMismatch: return "checkpoint_mismatch";
  }
  return "unknown";
}

namespace {

constexpr std::array<std::string_view, kNumOrgans> kOrganNames = {
    "spleen",          "right_kidney",         "left_kidney",
    "gall_bladder",    "esophagus",            "liver",
    "stomach",         "aorta",                "inferior_vena_cava",
    "portal_splenic_vein", "pancreas",         "right_adrenal_gland",
    "left_adrenal_gland",
};

}  // namespace

std::string_view OrganId::name() const { return kOrganNames[static_cast<std::size_t>(id_ - 1)]; }

OrganId OrganId::from_name(std::string_view name) {
  for (int i = 0; i < kNumOrgans; ++i)
    if (kOrganNames[static_cast<std::size_t>(i)] == name) return OrganId(i + 1);
  fail(ErrorCode::kInvalidArgument, "unknown organ name: " + std::string(name));
}

void validate_labels(const LabelVolume& labels) {
  if ((labels.voxels > static_cast<std::uint8_t>(kNumOrgans)).any())
    fail(ErrorCode::kLabelOutOfRange, "label value outside 0..13");
}

bool CropPadRecord::consistent() const {
  for (int a = 0; a < 3; ++a) {
    const Axis& ax = axes[static_cast<std::size_t>(a)];
    if (ax.crop_lo < 0 || ax.crop_hi < 0 || ax.pad_lo < 0 || ax.pad_hi < 0) return false;
    if (source[a] - ax.crop_lo - ax.crop_hi + ax.pad_lo + ax.pad_hi != target[a]) return false;
    if ((ax.crop_lo && ax.pad_lo) || (ax.crop_hi && ax.pad_hi)) return false;
  }
  return true;
}

Dims resampled_dims(Dims dims, Spacing from, Spacing to) {
  if (!from.valid() || !to.valid())
    fail(ErrorCode::kInvalidArgument, "spacing must be positive");
  Dims out;
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(dims[a]) * from[a] / to[a];
    // Guard against representation noise such as 47.000000000001.
    out[a] = std::max<Index>(1, static_cast<Index>(std::ceil(extent - 1e-9)));
  }
  return out;
}

namespace {

void check_grid(const Spacing& spacing, const Dims& dims) {
  if (!spacing.valid()) fail(ErrorCode::kInvalidArgument, "spacing must be positive");
  if (dims.x < 1 || dims.y < 1 || dims.z < 1)
    fail(ErrorCode::kInvalidArgument, "dims must be >= 1");
}

// Continuous source index of each output voxel centre along one axis.
std::vector<double> source_positions(Index out_dim, double out_spacing, double in_spacing) {
  const double ratio = out_spacing / in_spacing;
  std::vector<double> pos(static_cast<std::size_t>(out_dim));
  for (Index i = 0; i < out_dim; ++i)
    pos[static_cast<std::size_t>(i)] = (static_cast<double>(i) + 0.5) * ratio - 0.5;
  return pos;
}

struct LinearTap {
  Index lo;
  Index hi;
  double w_hi;
};

std::vector<LinearTap> linear_taps(const std::vector<double>& pos, Index in_dim) {
  std::vector<LinearTap> taps;
  taps.reserve(pos.size());
  for (double p : pos) {
    const double c = std::clamp(p, 0.0, static_cast<double>(in_dim - 1));
    const Index lo = static_cast<Index>(std::floor(c));
    const Index hi = std::min(lo + 1, in_dim - 1);
    taps.push_back({lo, hi, c - static_cast<double>(lo)});
  }
  return taps;
}

std::vector<Index> nearest_taps(const std::vector<double>& pos, Index in_dim) {
  std::vector<Index> taps;
  taps.reserve(pos.size());
  for (double p : pos)
    taps.push_back(std::clamp<Index>(static_cast<Index>(std::floor(p + 0.5)), 0, in_dim - 1));
  return taps;
}

template <typename T>
Volume<T> resample_nearest(const Volume<T>& vol, Spacing spacing, Dims dims) {
  Volume<T> out(dims, spacing);
  std::array<std::vector<Index>, 3> taps;
  for (int a = 0; a < 3; ++a)
    taps[static_cast<std::size_t>(a)] =
        nearest_taps(source_positions(dims[a], spacing[a], vol.spacing[a]), vol.dims[a]);
  Index o = 0;
  for (Index z = 0; z < dims.z; ++z)
    for (Index y = 0; y < dims.y; ++y)
      for (Index x = 0; x < dims.x; ++x)
        out.voxels[o++] = vol.at(taps[0][static_cast<std::size_t>(x)],
                                 taps[1][static_cast<std::size_t>(y)],
                                 taps[2][static_cast<std::size_t>(z)]);
  return out;
}

ImageVolume resample_trilinear(const ImageVolume& vol, Spacing spacing, Dims dims) {
  ImageVolume out(dims, spacing);
  std::array<std::vector<LinearTap>, 3> taps;
  for (int a = 0; a < 3; ++a)
    taps[static_cast<std::size_t>(a)] =
        linear_taps(source_positions(dims[a], spacing[a], vol.spacing[a]), vol.dims[a]);
  Index o = 0;
  for (Index z = 0; z < dims.z; ++z) {
    const LinearTap& tz = taps[2][static_cast<std::size_t>(z)];
    for (Index y = 0; y < dims.y; ++y) {
      const LinearTap& ty = taps[1][static_cast<std::size_t>(y)];
      for (Index x = 0; x < dims.x; ++x) {
        const LinearTap& tx = taps[0][static_cast<std::size_t>(x)];
        auto lerp_x = [&](Index yy, Index zz) {
          const double a = vol.at(tx.lo, yy, zz);
          const double b = vol.at(tx.hi, yy, zz);
          return a + tx.w_hi * (b - a);
        };
        auto lerp_xy = [&](Index zz) {
          const double a = lerp_x(ty.lo, zz);
          const double b = lerp_x(ty.hi, zz);
          return a + ty.w_hi * (b - a);
        };
        const double a = lerp_xy(tz.lo);
        const double b = lerp_xy(tz.hi);
        out.voxels[o++] = static_cast<float>(a + tz.w_hi * (b - a));
      }
    }
  }
  return out;
}

}  // namespace

ImageVolume resample_to_grid(const ImageVolume& vol, Spacing spacing, Dims dims, Interp mode) {
  check_grid(spacing, dims);
  check_grid(vol.spacing, vol.dims);
  return mode == Interp::kTrilinear ? resample_trilinear(vol, spacing, dims)
                                    : resample_nearest(vol, spacing, dims);
}

LabelVolume resample_to_grid(const LabelVolume& vol, Spacing spacing, Dims dims) {
  check_grid(spacing, dims);
  check_grid(vol.spacing, vol.dims);
  return resample_nearest(vol, spacing, dims);
}

ImageVolume resample(const ImageVolume& vol, Spacing target, Interp mode) {
  return resample_to_grid(vol, target, resampled_dims(vol.dims, vol.spacing, target), mode);
}

LabelVolume resample(const LabelVolume& vol, Spacing target, Interp mode) {
  if (mode != Interp::kNearest)
    fail(ErrorCode::kInvalidArgument, "label volumes only support nearest-neighbour resampling");
  return resample_to_grid(vol, target, resampled_dims(vol.dims, vol.spacing, target));
}

template <typename T>
std::pair<Volume<T>, CropPadRecord> pad_crop(const Volume<T>& vol, Dims target, T fill) {
  CropPadRecord rec;
  rec.source = vol.dims;
  rec.target = target;
  for (int a = 0; a < 3; ++a) {
    auto& ax = rec.axes[static_cast<std::size_t>(a)];
    const Index diff = target[a] - vol.dims[a];
    if (diff >= 0) {
      ax.pad_lo = diff / 2;
      ax.pad_hi = diff - ax.pad_lo;
    } else {
      ax.crop_lo = -diff / 2;
      ax.crop_hi = -diff - ax.crop_lo;
    }
  }
  Volume<T> out(target, vol.spacing, fill);
  // Target voxel t maps to source voxel t - pad_lo + crop_lo.
  std::array<Index, 3> shift{};
  for (int a = 0; a < 3; ++a) {
    const auto& ax = rec.axes[static_cast<std::size_t>(a)];
    shift[static_cast<std::size_t>(a)] = ax.crop_lo - ax.pad_lo;
  }
  for (Index z = 0; z < target.z; ++z) {
    const Index sz = z + shift[2];
    if (sz < 0 || sz >= vol.dims.z) continue;
    for (Index y = 0; y < target.y; ++y) {
      const Index sy = y + shift[1];
      if (sy < 0 || sy >= vol.dims.y) continue;
      for (Index x = 0; x < target.x; ++x) {
        const Index sx = x + shift[0];
        if (sx < 0 || sx >= vol.dims.x) continue;
        out.at(x, y, z) = vol.at(sx, sy, sz);
      }
    }
  }
  return {std::move(out), rec};
}

template <typename T>
Volume<T> undo_pad_crop(const Volume<T>& vol, const CropPadRecord& record, T fill) {
  if (!record.consistent() || !(vol.dims == record.target))
    fail(ErrorCode::kShapeMismatch, "crop/pad record does not match volume");
  Volume<T> out(record.source, vol.spacing, fill);
  std::array<Index, 3> shift{};
  for (int a = 0; a < 3; ++a) {
    const auto& ax = record.axes[static_cast<std::size_t>(a)];
    shift[static_cast<std::size_t>(a)] = ax.pad_lo - ax.crop_lo;
  }
  for (Index z = 0; z < record.source.z; ++z) {
    const Index tz = z + shift[2];
    if (tz < 0 || tz >= vol.dims.z) continue;
    for (Index y = 0; y < record.source.y; ++y) {
      const Index ty = y + shift[1];
      if (ty < 0 || ty >= vol.dims.y) continue;
      for (Index x = 0; x < record.source.x; ++x) {
        const Index tx = x + shift[0];
        if (tx < 0 || tx >= vol.dims.x) continue;
        out.at(x, y, z) = vol.at(tx, ty, tz);
      }
    }
  }
  return out;
}

template std::pair<ImageVolume, CropPadRecord> pad_crop(const ImageVolume&, Dims, float);
template std::pair<LabelVolume, CropPadRecord> pad_crop(const LabelVolume&, Dims, std::uint8_t);
template ImageVolume undo_pad_crop(const ImageVolume&, const CropPadRecord&, float);
template LabelVolume undo_pad_crop(const LabelVolume&, const CropPadRecord&, std::uint8_t);

LabelVolume restore_native(const LabelVolume& coarse, const CropPadRecord& record,
                           Spacing native_spacing, Dims native_dims) {
  LabelVolume uncropped = undo_pad_crop(coarse, record, std::uint8_t{0});
  if (uncropped.spacing == native_spacing && uncropped.dims == native_dims) return uncropped;
  return resample_to_grid(uncropped, native_spacing, native_dims);
}

ImageVolume normalize_intensity(const ImageVolume& vol, double window_lo, double window_hi) {
  if (!(window_lo < window_hi))
    fail(ErrorCode::kInvalidArgument, "normalization window must satisfy lo < hi");
  ImageVolume out = vol;
  const double width = window_hi - window_lo;
  for (Index i = 0; i < out.voxels.size(); ++i) {
    const double v = std::clamp(static_cast<double>(vol.voxels[i]), window_lo, window_hi);
    out.voxels[i] = static_cast<float>((v - window_lo) / width);
  }
  return out;
}

ImageVolume to_image(const LabelVolume& labels) {
  ImageVolume out(labels.dims, labels.spacing);
  out.voxels = labels.voxels.cast<float>();
  return out;
}

}  // namespace cfseg
