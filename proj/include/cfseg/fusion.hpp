#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "cfseg/volume.hpp"

namespace cfseg {

/// Per-organ positive-vote and coverage counters over the native grid.
/// Counter grids are allocated the first time an organ receives a patch.
class FusionAccumulator {
 public:
  explicit FusionAccumulator(Dims dims) : dims_(dims) {}

  /// Adds one binary patch prediction (values 0/1, patch layout x fastest).
  /// Parts of the window outside the volume are ignored.
  void accumulate(OrganId organ, Voxel origin, Dims patch_dims, std::span<const std::uint8_t> binary_pred);

  /// Counter-wise sum; both accumulators must share dims.
  void merge(const FusionAccumulator& other);

  /// Organ a is a candidate at a voxel iff positive_a / coverage_a > 1/2.
  /// Highest fraction wins; ties go to the larger positive count, then the
  /// lower organ id. No candidate means background.
  LabelVolume majority_vote(Spacing spacing = {}) const;

  Dims dims() const { return dims_; }
  std::uint32_t positive(OrganId organ, Index x, Index y, Index z) const;
  std::uint32_t coverage(OrganId organ, Index x, Index y, Index z) const;
  bool operator==(const FusionAccumulator&) const = default;

 private:
  Dims dims_;
  std::array<std::vector<std::uint32_t>, kNumOrgans> positive_;
  std::array<std::vector<std::uint32_t>, kNumOrgans> coverage_;
};

struct PatchVote {
  OrganId organ{1};
  Voxel origin;
  Dims dims;
  std::vector<std::uint8_t> pred;
};

/// Reference fusion by direct per-voxel enumeration over every patch.
LabelVolume fuse_brute_force(std::span<const PatchVote> votes, Dims dims, Spacing spacing = {});

}  // namespace cfseg
