#include <doctest.h>

#include <cmath>
#include <set>

#include "cfseg/volume.hpp"
#include "support.hpp"

using namespace cfseg;

namespace {

ImageVolume ramp(Dims d, Spacing s) {
  ImageVolume v(d, s);
  for (Index i = 0; i < d.count(); ++i) v.voxels[i] = static_cast<float>(i % 997) * 0.25f - 40.0f;
  return v;
}

}  // namespace

TEST_CASE("organ ids map to names and back") {
  std::set<std::string_view> names;
  for (int o = 1; o <= kNumOrgans; ++o) {
    const OrganId id(o);
    names.insert(id.name());
    CHECK(OrganId::from_name(id.name()) == id);
  }
  CHECK(names.size() == kNumOrgans);
  CHECK(OrganId(1).name() == "spleen");
  CHECK(OrganId(4).name() == "gall_bladder");
  CHECK(OrganId(11).name() == "pancreas");
  CHECK_ERROR_CODE(OrganId(0), ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(OrganId(14), ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(OrganId::from_name("kidney"), ErrorCode::kInvalidArgument);
}

TEST_CASE("label validation rejects values above 13") {
  LabelVolume l({4, 4, 4}, {1, 1, 1});
  l.voxels.setConstant(13);
  CHECK_NOTHROW(validate_labels(l));
  l.at(1, 2, 3) = 14;
  CHECK_ERROR_CODE(validate_labels(l), ErrorCode::kLabelOutOfRange);
}

TEST_CASE("resampled dims use ceil of physical extent") {
  CHECK(resampled_dims({512, 512, 100}, {0.8, 0.8, 3.0}, {2, 2, 6}) == Dims{205, 205, 50});
  CHECK(resampled_dims({96, 96, 48}, {2, 2, 4}, {4, 4, 8}) == Dims{48, 48, 24});
  CHECK(resampled_dims({10, 10, 10}, {1, 1, 1}, {3, 3, 3}) == Dims{4, 4, 4});
}

TEST_CASE("identity resampling is voxel exact") {
  const ImageVolume v = ramp({17, 9, 5}, {0.7, 0.9, 3.0});
  CHECK(resample(v, v.spacing, Interp::kTrilinear) == v);
  CHECK(resample(v, v.spacing, Interp::kNearest) == v);
  LabelVolume l(v.dims, v.spacing);
  for (Index i = 0; i < l.voxels.size(); ++i) l.voxels[i] = static_cast<std::uint8_t>(i % 14);
  CHECK(resample(l, l.spacing) == l);
}

TEST_CASE("trilinear resampling reproduces a linear field") {
  const Spacing from{0.8, 0.8, 2.5};
  const Spacing to{2.0, 2.0, 6.0};
  const Dims d{50, 45, 20};
  auto field = [](double x, double y, double z) { return 0.011 * x - 0.007 * y + 0.004 * z + 0.3; };
  ImageVolume v(d, from);
  for (Index z = 0; z < d.z; ++z)
    for (Index y = 0; y < d.y; ++y)
      for (Index x = 0; x < d.x; ++x)
        v.at(x, y, z) = static_cast<float>(field((x + 0.5) * from.x, (y + 0.5) * from.y, (z + 0.5) * from.z));
  const ImageVolume r = resample(v, to, Interp::kTrilinear);
  REQUIRE(r.dims == resampled_dims(d, from, to));
  CHECK(r.spacing == to);
  // Only voxels whose source position needs no border clamping.
  auto inside = [&](Index i, int axis) {
    const double p = (i + 0.5) * to[axis] / from[axis] - 0.5;
    return p >= 0.0 && p <= static_cast<double>(d[axis] - 1);
  };
  Index checked = 0;
  double worst = 0.0;
  for (Index z = 0; z < r.dims.z; ++z)
    for (Index y = 0; y < r.dims.y; ++y)
      for (Index x = 0; x < r.dims.x; ++x) {
        if (!inside(x, 0) || !inside(y, 1) || !inside(z, 2)) continue;
        const double expect = field((x + 0.5) * to.x, (y + 0.5) * to.y, (z + 0.5) * to.z);
        worst = std::max(worst, std::abs(r.at(x, y, z) - expect));
        ++checked;
      }
  CHECK(checked > r.dims.count() / 2);
  CHECK(worst < 1e-5);
}

TEST_CASE("label resampling is nearest neighbour and rejects trilinear") {
  LabelVolume l({4, 4, 2}, {1, 1, 1});
  for (Index i = 0; i < l.voxels.size(); ++i) l.voxels[i] = static_cast<std::uint8_t>(i % 5);
  const LabelVolume up = resample(l, {0.5, 0.5, 0.5});
  REQUIRE(up.dims == Dims{8, 8, 4});
  for (Index z = 0; z < 4; ++z)
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) CHECK(up.at(x, y, z) == l.at(x / 2, y / 2, z / 2));
  CHECK_ERROR_CODE(resample(l, {2, 2, 2}, Interp::kTrilinear), ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(resample(l, {0, 2, 2}), ErrorCode::kInvalidArgument);
}

TEST_CASE("pad_crop centres and records the adjustment") {
  const ImageVolume v = ramp({205, 50, 64}, {2, 2, 6});
  const auto [out, rec] = pad_crop(v, {168, 64, 64}, -1.0f);
  CHECK(out.dims == Dims{168, 64, 64});
  CHECK(rec.consistent());
  CHECK(rec.axes[0] == CropPadRecord::Axis{18, 19, 0, 0});
  CHECK(rec.axes[1] == CropPadRecord::Axis{0, 0, 7, 7});
  CHECK(rec.axes[2] == CropPadRecord::Axis{0, 0, 0, 0});
  CHECK(rec.source == v.dims);
  CHECK(rec.target == out.dims);
  CHECK(out.at(0, 0, 0) == -1.0f);
  CHECK(out.at(0, 7, 0) == v.at(18, 0, 0));
  CHECK(out.at(167, 56, 63) == v.at(185, 49, 63));
  CHECK(out.at(167, 57, 63) == -1.0f);
}

TEST_CASE("pad_crop with odd differences puts the extra voxel high") {
  const ImageVolume v = ramp({5, 10, 3}, {1, 1, 1});
  const auto [out, rec] = pad_crop(v, {8, 7, 3}, 0.0f);
  CHECK(rec.axes[0] == CropPadRecord::Axis{0, 0, 1, 2});
  CHECK(rec.axes[1] == CropPadRecord::Axis{1, 2, 0, 0});
}

TEST_CASE("undo_pad_crop inverts pad_crop on the retained region") {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<Index> dim(3, 30);
  for (int trial = 0; trial < 50; ++trial) {
    const Dims src{dim(gen), dim(gen), dim(gen)};
    const Dims dst{dim(gen), dim(gen), dim(gen)};
    const ImageVolume v = ramp(src, {1, 2, 3});
    const auto [out, rec] = pad_crop(v, dst, 9.0f);
    REQUIRE(rec.consistent());
    const ImageVolume back = undo_pad_crop(out, rec, 9.0f);
    REQUIRE(back.dims == src);
    CHECK(back.spacing == v.spacing);
    for (Index z = 0; z < src.z; ++z)
      for (Index y = 0; y < src.y; ++y)
        for (Index x = 0; x < src.x; ++x) {
          const bool kept = x >= rec.axes[0].crop_lo && x < src.x - rec.axes[0].crop_hi &&
                            y >= rec.axes[1].crop_lo && y < src.y - rec.axes[1].crop_hi &&
                            z >= rec.axes[2].crop_lo && z < src.z - rec.axes[2].crop_hi;
          REQUIRE(back.at(x, y, z) == (kept ? v.at(x, y, z) : 9.0f));
        }
    // Pure padding is exactly invertible.
    const Dims bigger{src.x + 4, src.y + 1, src.z};
    const auto [padded, prec] = pad_crop(v, bigger, 0.0f);
    CHECK(undo_pad_crop(padded, prec, 0.0f) == v);
  }
}

TEST_CASE("restore_native is exact when the coarse grid equals the native grid") {
  LabelVolume l({12, 10, 6}, {2, 2, 4});
  for (Index i = 0; i < l.voxels.size(); ++i) l.voxels[i] = static_cast<std::uint8_t>((i / 7) % 14);
  const auto [padded, rec] = pad_crop(l, {16, 8, 8}, std::uint8_t{0});
  LabelVolume kept = undo_pad_crop(padded, rec, std::uint8_t{0});
  CHECK(restore_native(padded, rec, l.spacing, l.dims) == kept);
}

TEST_CASE("restore_native returns a volume on the native grid") {
  LabelVolume l({40, 30, 10}, {0.8, 0.8, 3.0});
  for (Index z = 0; z < 10; ++z)
    for (Index y = 10; y < 20; ++y)
      for (Index x = 10; x < 30; ++x) l.at(x, y, z) = 6;
  const LabelVolume coarse = resample(l, {2, 2, 6});
  const auto [grid, rec] = pad_crop(coarse, {16, 16, 8}, std::uint8_t{0});
  const LabelVolume back = restore_native(grid, rec, l.spacing, l.dims);
  REQUIRE(back.dims == l.dims);
  CHECK(back.spacing == l.spacing);
  Index agree = 0;
  for (Index i = 0; i < l.voxels.size(); ++i) agree += back.voxels[i] == l.voxels[i];
  CHECK(agree > l.voxels.size() * 9 / 10);
}

TEST_CASE("intensity normalization clamps to the window") {
  ImageVolume v({5, 1, 1}, {1, 1, 1});
  v.voxels << -1000.0f, -175.0f, 37.5f, 250.0f, 3000.0f;
  const ImageVolume n = normalize_intensity(v, -175.0, 250.0);
  CHECK(n.voxels[0] == 0.0f);
  CHECK(n.voxels[1] == 0.0f);
  CHECK(n.voxels[2] == 0.5f);
  CHECK(n.voxels[3] == 1.0f);
  CHECK(n.voxels[4] == 1.0f);
  CHECK_ERROR_CODE(normalize_intensity(v, 10.0, 10.0), ErrorCode::kInvalidArgument);
}
