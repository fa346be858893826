#pragma once

#include <vector>

#include "cfseg/volume.hpp"

namespace cfseg {

/// Inclusive voxel bounds. The empty box has lo > hi on every axis.
struct Box {
  Voxel lo{0, 0, 0};
  Voxel hi{-1, -1, -1};

  bool empty() const { return hi.x < lo.x || hi.y < lo.y || hi.z < lo.z; }
  Index extent(int axis) const { return empty() ? 0 : hi[axis] - lo[axis] + 1; }
  bool contains(Index x, Index y, Index z) const {
    return x >= lo.x && x <= hi.x && y >= lo.y && y <= hi.y && z >= lo.z && z <= hi.z;
  }
  bool operator==(const Box&) const = default;
};

/// Binary native-resolution mask for one organ, taken from a coarse prediction.
struct OrganPrior {
  OrganId organ{1};
  LabelVolume mask;  // values 0/1
  Box bbox;
  bool present = false;
  Index voxel_count = 0;
};

struct PriorOptions {
  /// Keep only the largest 6-connected component of each organ.
  bool largest_component = false;
};

OrganPrior extract_prior(const LabelVolume& coarse_native, OrganId organ, PriorOptions options = {});

/// One prior per organ, ordered 1..13.
std::vector<OrganPrior> extract_all_priors(const LabelVolume& coarse_native,
                                           PriorOptions options = {});

}  // namespace cfseg
