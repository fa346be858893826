#include "cfseg/fusion.hpp"

#include <algorithm>

namespace cfseg {

void FusionAccumulator::accumulate(OrganId organ, Voxel origin, Dims patch_dims,
                                   std::span<const std::uint8_t> binary_pred) {
  if (static_cast<Index>(binary_pred.size()) != patch_dims.count())
    fail(ErrorCode::kShapeMismatch, "prediction size does not match patch dims");
  Voxel lo, hi;
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<Index>(0, -origin[a]);
    hi[a] = std::min<Index>(patch_dims[a], dims_[a] - origin[a]);
    if (hi[a] <= lo[a]) fail(ErrorCode::kInvalidArgument, "patch footprint lies entirely outside the volume");
  }
  for (std::uint8_t v : binary_pred)
    if (v > 1) fail(ErrorCode::kInvalidArgument, "patch predictions must be binary");

  const auto slot = static_cast<std::size_t>(organ.value() - 1);
  auto& pos = positive_[slot];
  auto& cov = coverage_[slot];
  if (cov.empty()) {
    pos.assign(static_cast<std::size_t>(dims_.count()), 0);
    cov.assign(static_cast<std::size_t>(dims_.count()), 0);
  }
  for (Index z = lo.z; z < hi.z; ++z)
    for (Index y = lo.y; y < hi.y; ++y) {
      const Index src = patch_dims.x * (y + patch_dims.y * z);
      const Index dst = (origin.x) + dims_.x * ((origin.y + y) + dims_.y * (origin.z + z));
      for (Index x = lo.x; x < hi.x; ++x) {
        const auto d = static_cast<std::size_t>(dst + x);
        ++cov[d];
        pos[d] += binary_pred[static_cast<std::size_t>(src + x)];
      }
    }
}

void FusionAccumulator::merge(const FusionAccumulator& other) {
  if (!(other.dims_ == dims_)) fail(ErrorCode::kShapeMismatch, "cannot merge accumulators of different dims");
  for (std::size_t o = 0; o < positive_.size(); ++o) {
    if (other.coverage_[o].empty()) continue;
    if (coverage_[o].empty()) {
      positive_[o] = other.positive_[o];
      coverage_[o] = other.coverage_[o];
      continue;
    }
    for (std::size_t i = 0; i < coverage_[o].size(); ++i) {
      positive_[o][i] += other.positive_[o][i];
      coverage_[o][i] += other.coverage_[o][i];
    }
  }
}

LabelVolume FusionAccumulator::majority_vote(Spacing spacing) const {
  LabelVolume out(dims_, spacing);
  const auto n = static_cast<std::size_t>(dims_.count());
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    std::uint64_t best_pos = 0, best_cov = 1;
    for (std::size_t o = 0; o < coverage_.size(); ++o) {
      if (coverage_[o].empty()) continue;
      const std::uint64_t cov = coverage_[o][i];
      const std::uint64_t pos = positive_[o][i];
      if (cov == 0 || 2 * pos <= cov) continue;
      // Compare pos/cov against best_pos/best_cov without division.
      const std::uint64_t lhs = pos * best_cov;
      const std::uint64_t rhs = best_pos * cov;
      if (best == 0 || lhs > rhs || (lhs == rhs && pos > best_pos)) {
        best = static_cast<int>(o) + 1;
        best_pos = pos;
        best_cov = cov;
      }
    }
    out.voxels[static_cast<Index>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::uint32_t FusionAccumulator::positive(OrganId organ, Index x, Index y, Index z) const {
  const auto& g = positive_[static_cast<std::size_t>(organ.value() - 1)];
  return g.empty() ? 0 : g[static_cast<std::size_t>(x + dims_.x * (y + dims_.y * z))];
}

std::uint32_t FusionAccumulator::coverage(OrganId organ, Index x, Index y, Index z) const {
  const auto& g = coverage_[static_cast<std::size_t>(organ.value() - 1)];
  return g.empty() ? 0 : g[static_cast<std::size_t>(x + dims_.x * (y + dims_.y * z))];
}

LabelVolume fuse_brute_force(std::span<const PatchVote> votes, Dims dims, Spacing spacing) {
  LabelVolume out(dims, spacing);
  for (Index z = 0; z < dims.z; ++z)
    for (Index y = 0; y < dims.y; ++y)
      for (Index x = 0; x < dims.x; ++x) {
        long pos[kNumOrgans + 1] = {};
        long cov[kNumOrgans + 1] = {};
        for (const PatchVote& v : votes) {
          const Index px = x - v.origin.x, py = y - v.origin.y, pz = z - v.origin.z;
          if (px < 0 || py < 0 || pz < 0 || px >= v.dims.x || py >= v.dims.y || pz >= v.dims.z) continue;
          cov[v.organ.value()] += 1;
          pos[v.organ.value()] += v.pred[static_cast<std::size_t>(px + v.dims.x * (py + v.dims.y * pz))];
        }
        int label = 0;
        double best_fraction = 0.0;
        long best_pos = 0;
        for (int o = 1; o <= kNumOrgans; ++o) {
          if (cov[o] == 0) continue;
          const double fraction = static_cast<double>(pos[o]) / static_cast<double>(cov[o]);
          if (!(fraction > 0.5)) continue;
          if (label == 0 || fraction > best_fraction || (fraction == best_fraction && pos[o] > best_pos)) {
            label = o;
            best_fraction = fraction;
            best_pos = pos[o];
          }
        }
        out.at(x, y, z) = static_cast<std::uint8_t>(label);
      }
  return out;
}

}  // namespace cfseg
