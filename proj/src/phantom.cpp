#include "cfseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace cfseg {

Phantom gen_phantom(const PhantomSpec& spec, SeededRng& rng) {
  if (!spec.spacing.valid()) fail(ErrorCode::kInvalidArgument, "phantom spacing must be positive");
  if (spec.organs.size() > static_cast<std::size_t>(kNumOrgans))
    fail(ErrorCode::kInvalidArgument, "at most 13 phantom organs");
  for (std::size_t i = 0; i < spec.organs.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (spec.organs[i].organ == spec.organs[j].organ)
        fail(ErrorCode::kInvalidArgument, "duplicate phantom organ id");

  Phantom ph{ImageVolume(spec.dims, spec.spacing), LabelVolume(spec.dims, spec.spacing)};
  const Dims d = spec.dims;
  std::vector<double> means(kNumOrgans + 1, 0.0), sds(kNumOrgans + 1, 0.0);

  for (const PhantomOrgan& organ : spec.organs) {
    for (double r : organ.radii_mm)
      if (!(r > 0.0)) fail(ErrorCode::kInvalidArgument, "phantom radii must be positive");
    std::vector<Index> voxels;
    bool placed = false;
    for (int attempt = 0; attempt < std::max(1, spec.max_attempts) && !placed; ++attempt) {
      std::array<double, 3> c = organ.center_mm;
      if (spec.center_jitter_mm > 0.0)
        for (double& v : c) v += rng.uniform(-spec.center_jitter_mm, spec.center_jitter_mm);
      voxels.clear();
      bool collides = false;
      // Only scan the ellipsoid's bounding box.
      std::array<Index, 3> lo{}, hi{};
      for (int a = 0; a < 3; ++a) {
        lo[static_cast<std::size_t>(a)] = std::max<Index>(
            0, static_cast<Index>(std::floor((c[static_cast<std::size_t>(a)] - organ.radii_mm[static_cast<std::size_t>(a)]) / spec.spacing[a])));
        hi[static_cast<std::size_t>(a)] = std::min<Index>(
            d[a] - 1, static_cast<Index>(std::ceil((c[static_cast<std::size_t>(a)] + organ.radii_mm[static_cast<std::size_t>(a)]) / spec.spacing[a])));
      }
      for (Index z = lo[2]; z <= hi[2] && !collides; ++z)
        for (Index y = lo[1]; y <= hi[1] && !collides; ++y)
          for (Index x = lo[0]; x <= hi[0]; ++x) {
            const double px = ((static_cast<double>(x) + 0.5) * spec.spacing.x - c[0]) / organ.radii_mm[0];
            const double py = ((static_cast<double>(y) + 0.5) * spec.spacing.y - c[1]) / organ.radii_mm[1];
            const double pz = ((static_cast<double>(z) + 0.5) * spec.spacing.z - c[2]) / organ.radii_mm[2];
            if (px * px + py * py + pz * pz > 1.0) continue;
            const Index i = ph.labels.index(x, y, z);
            if (ph.labels.voxels[i] != 0) {
              collides = true;
              break;
            }
            voxels.push_back(i);
          }
      placed = !collides;
    }
    if (!placed)
      fail(ErrorCode::kPlacementFailed,
           "could not place " + std::string(organ.organ.name()) + " without overlapping another organ");
    const auto id = static_cast<std::uint8_t>(organ.organ.value());
    for (Index i : voxels) ph.labels.voxels[i] = id;
    means[static_cast<std::size_t>(id)] = organ.intensity_mean;
    sds[static_cast<std::size_t>(id)] = organ.intensity_sd;
  }

  Index i = 0;
  for (Index z = 0; z < d.z; ++z)
    for (Index y = 0; y < d.y; ++y)
      for (Index x = 0; x < d.x; ++x, ++i) {
        const std::uint8_t label = ph.labels.voxels[i];
        double v;
        if (label == 0) {
          const double xm = (static_cast<double>(x) + 0.5) * spec.spacing.x;
          const double ym = (static_cast<double>(y) + 0.5) * spec.spacing.y;
          const double zm = (static_cast<double>(z) + 0.5) * spec.spacing.z;
          const double texture = std::sin(2.0 * std::numbers::pi * xm / 41.0) *
                                 std::cos(2.0 * std::numbers::pi * ym / 57.0) *
                                 std::cos(2.0 * std::numbers::pi * zm / 73.0);
          v = spec.background_hu + spec.texture_hu * texture + spec.background_sd * rng.normal();
        } else {
          v = means[label] + sds[label] * rng.normal();
        }
        ph.image.voxels[i] = static_cast<float>(v);
      }
  return ph;
}

namespace {

struct TemplateOrgan {
  int id;
  std::array<double, 3> center_frac;
  std::array<double, 3> radii_mm;
  double hu;
};

constexpr std::array<TemplateOrgan, 5> kTemplate = {{
    {6, {0.30, 0.40, 0.50}, {36.0, 32.0, 40.0}, 60.0},   // liver
    {1, {0.74, 0.64, 0.52}, {20.0, 18.0, 26.0}, 110.0},  // spleen
    {2, {0.30, 0.78, 0.42}, {13.0, 13.0, 22.0}, 150.0},  // right kidney
    {3, {0.76, 0.24, 0.42}, {13.0, 13.0, 22.0}, 185.0},  // left kidney
    {7, {0.60, 0.40, 0.48}, {20.0, 16.0, 20.0}, 20.0},   // stomach
}};

}  // namespace

PhantomSpec standard_phantom_spec(SeededRng& rng, Dims dims, Spacing spacing) {
  PhantomSpec spec;
  spec.dims = dims;
  spec.spacing = spacing;
  spec.center_jitter_mm = 6.0;
  const int count = static_cast<int>(rng.uniform_int(3, 5));
  std::array<int, kTemplate.size()> order{};
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  std::sort(order.begin(), order.begin() + count);
  for (int k = 0; k < count; ++k) {
    const TemplateOrgan& t = kTemplate[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
    PhantomOrgan o;
    o.organ = OrganId(t.id);
    const double scale = rng.uniform(0.9, 1.1);
    for (int a = 0; a < 3; ++a) {
      o.center_mm[static_cast<std::size_t>(a)] = t.center_frac[static_cast<std::size_t>(a)] * static_cast<double>(dims[a]) * spacing[a];
      o.radii_mm[static_cast<std::size_t>(a)] = t.radii_mm[static_cast<std::size_t>(a)] * scale;
    }
    o.intensity_mean = t.hu + rng.uniform(-8.0, 8.0);
    o.intensity_sd = 12.0;
    spec.organs.push_back(o);
  }
  return spec;
}

constexpr std::uint64_t kCohortRedraws = 16;

std::vector<PhantomCase> make_phantom_cohort(int count, std::uint64_t seed) {
  if (count < 1) fail(ErrorCode::kInvalidArgument, "cohort size must be >= 1");
  std::vector<PhantomCase> cohort;
  cohort.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "case_%03d", i);
    // A crowded layout is redrawn on a fresh stream rather than failing the cohort.
    const std::uint64_t stream = static_cast<std::uint64_t>(i);
    for (std::uint64_t attempt = 0;; ++attempt) {
      SeededRng rng(attempt == 0 ? seed : SeededRng(seed, stream).derive_seed(attempt), stream);
      const PhantomSpec spec = standard_phantom_spec(rng);
      try {
        cohort.push_back({id, gen_phantom(spec, rng)});
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kPlacementFailed || attempt + 1 >= kCohortRedraws) throw;
      }
    }
  }
  return cohort;
}

}  // namespace cfseg
