#pragma once

#include <array>
#include <string>
#include <vector>

#include "cfseg/rng.hpp"
#include "cfseg/volume.hpp"

namespace cfseg {

struct PhantomOrgan {
  OrganId organ{1};
  std::array<double, 3> center_mm{};  // from the volume corner
  std::array<double, 3> radii_mm{};
  double intensity_mean = 0.0;  // HU
  double intensity_sd = 10.0;
};

struct PhantomSpec {
  Dims dims{96, 96, 48};
  Spacing spacing{2.0, 2.0, 4.0};
  std::vector<PhantomOrgan> organs;
  double background_hu = -90.0;
  double texture_hu = 15.0;
  double background_sd = 12.0;
  /// Each placement attempt shifts organ centres uniformly by up to this much.
  double center_jitter_mm = 0.0;
  int max_attempts = 50;
};

struct Phantom {
  ImageVolume image;
  LabelVolume labels;
};

/// Ellipsoid organs (voxel centres inside the ellipsoid) on a textured noisy
/// background. Organs are placed in order; a placement that overlaps an
/// earlier organ is redrawn, and kPlacementFailed is thrown once
/// `max_attempts` draws have all collided.
Phantom gen_phantom(const PhantomSpec& spec, SeededRng& rng);

/// Standard abdominal layout: 3 to 5 of {liver, spleen, kidneys, stomach}
/// with jittered position, size and intensity.
PhantomSpec standard_phantom_spec(SeededRng& rng, Dims dims = {96, 96, 48}, Spacing spacing = {2.0, 2.0, 4.0});

struct PhantomCase {
  std::string id;
  Phantom phantom;
};

/// `count` cases named case_000, case_001, ...; case i uses stream i of `seed`.
std::vector<PhantomCase> make_phantom_cohort(int count, std::uint64_t seed);

}  // namespace cfseg
