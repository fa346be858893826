#include "cfseg/prior.hpp"

#include <algorithm>
#include <array>
#include <deque>

namespace cfseg {
namespace {

void keep_largest_component(LabelVolume& mask) {
  const Dims d = mask.dims;
  std::vector<std::int32_t> component(static_cast<std::size_t>(d.count()), -1);
  std::int32_t best = -1;
  Index best_size = 0;
  std::int32_t next = 0;
  std::deque<Index> queue;
  constexpr std::array<std::array<int, 3>, 6> kSteps = {
      {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

  for (Index start = 0; start < d.count(); ++start) {
    if (!mask.voxels[start] || component[static_cast<std::size_t>(start)] >= 0) continue;
    const std::int32_t id = next++;
    Index size = 0;
    component[static_cast<std::size_t>(start)] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const Index v = queue.front();
      queue.pop_front();
      ++size;
      const Index x = v % d.x;
      const Index y = (v / d.x) % d.y;
      const Index z = v / (d.x * d.y);
      for (const auto& s : kSteps) {
        const Index nx = x + s[0], ny = y + s[1], nz = z + s[2];
        if (!mask.contains(nx, ny, nz)) continue;
        const Index n = mask.index(nx, ny, nz);
        if (!mask.voxels[n] || component[static_cast<std::size_t>(n)] >= 0) continue;
        component[static_cast<std::size_t>(n)] = id;
        queue.push_back(n);
      }
    }
    // Strictly greater keeps the first component in scan order on ties.
    if (size > best_size) {
      best_size = size;
      best = id;
    }
  }
  for (Index i = 0; i < d.count(); ++i)
    if (mask.voxels[i] && component[static_cast<std::size_t>(i)] != best) mask.voxels[i] = 0;
}

}  // namespace

OrganPrior extract_prior(const LabelVolume& coarse_native, OrganId organ, PriorOptions options) {
  OrganPrior prior;
  prior.organ = organ;
  prior.mask = LabelVolume(coarse_native.dims, coarse_native.spacing);
  const auto id = static_cast<std::uint8_t>(organ.value());
  prior.mask.voxels = (coarse_native.voxels == id).cast<std::uint8_t>();
  if (options.largest_component) keep_largest_component(prior.mask);

  const Dims d = coarse_native.dims;
  Box box{{d.x, d.y, d.z}, {-1, -1, -1}};
  Index count = 0;
  Index i = 0;
  for (Index z = 0; z < d.z; ++z)
    for (Index y = 0; y < d.y; ++y)
      for (Index x = 0; x < d.x; ++x, ++i) {
        if (!prior.mask.voxels[i]) continue;
        ++count;
        box.lo = {std::min(box.lo.x, x), std::min(box.lo.y, y), std::min(box.lo.z, z)};
        box.hi = {std::max(box.hi.x, x), std::max(box.hi.y, y), std::max(box.hi.z, z)};
      }
  prior.present = count > 0;
  prior.voxel_count = count;
  prior.bbox = prior.present ? box : Box{};
  return prior;
}

std::vector<OrganPrior> extract_all_priors(const LabelVolume& coarse_native, PriorOptions options) {
  validate_labels(coarse_native);
  std::vector<OrganPrior> priors;
  priors.reserve(kNumOrgans);
  for (int id = 1; id <= kNumOrgans; ++id)
    priors.push_back(extract_prior(coarse_native, OrganId(id), options));
  return priors;
}

}  // namespace cfseg
