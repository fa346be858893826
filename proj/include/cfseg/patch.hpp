#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cfseg/prior.hpp"
#include "cfseg/rng.hpp"
#include "cfseg/volume.hpp"

namespace cfseg {

struct PatchSpec {
  Dims dims{128, 128, 64};
  int patches_per_organ = 50;
  /// Normalized intensity used where a patch hangs outside the volume.
  float fill_value = 0.0f;

  void validate() const;
};

/// Result of prior-guided origin sampling.
struct OriginSample {
  std::vector<Voxel> origins;
  int random_kept = 0;        // leading origins that are random draws
  int repaired = 0;           // trailing origins placed by the coverage repair
  bool budget_grown = false;  // more than patches_per_organ origins were needed
};

/// Draws `spec.patches_per_organ` patch origins whose windows intersect the
/// prior bounding box and hold at least one prior voxel, then swaps trailing draws for greedy covering origins
/// until every prior voxel lies inside at least one window. Throws
/// kOrganMissing for an absent prior.
OriginSample sample_origins(const OrganPrior& prior, const PatchSpec& spec, Dims volume_dims,
                            SeededRng rng);

/// Number of prior voxels not inside any of the given windows.
Index uncovered_prior_voxels(const OrganPrior& prior, std::span<const Voxel> origins, Dims patch_dims);

/// Two-channel input (normalized intensity, prior indicator) and binary label.
struct PatchSample {
  OrganId organ{1};
  Voxel origin;
  Dims dims;
  Eigen::ArrayXf intensity;
  Eigen::ArrayXf prior;
  Eigen::ArrayXf label;  // empty when extracted without ground truth
};

/// `gt` may be null at inference time.
PatchSample extract_patch(const ImageVolume& image, const OrganPrior& prior, const LabelVolume* gt,
                          OrganId organ, Voxel origin, const PatchSpec& spec);

/// A preprocessed case on its native grid with its coarse-derived priors.
struct RefineCase {
  std::string id;
  ImageVolume image;  // normalized
  LabelVolume gt;
  std::vector<OrganPrior> priors;  // 13 entries, organ order
};

struct ManifestRow {
  std::string case_id;
  int organ = 0;
  Voxel origin;
  std::uint64_t stream_seed = 0;
  bool operator==(const ManifestRow&) const = default;
};

struct ManifestSkip {
  std::string case_id;
  int organ = 0;
  std::string reason;
  bool operator==(const ManifestSkip&) const = default;
};

struct ManifestGrowth {
  std::string case_id;
  int organ = 0;
  int count = 0;
  bool operator==(const ManifestGrowth&) const = default;
};

/// One row per patch; skipped organs and budget growth are recorded alongside.
struct PatchManifest {
  PatchSpec spec;
  std::uint64_t master_seed = 0;
  Index expected = 0;
  std::vector<ManifestRow> rows;
  std::vector<ManifestSkip> skips;
  std::vector<ManifestGrowth> growth;

  Index actual() const { return static_cast<Index>(rows.size()); }

  /// Line-delimited JSON: a header line, then one line per row, skip and growth record.
  std::string to_jsonl() const;
  static PatchManifest from_jsonl(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static PatchManifest load(const std::filesystem::path& path);
};

PatchManifest build_manifest(std::span<const RefineCase> cases, const PatchSpec& spec,
                             std::uint64_t master_seed);

/// Materialized patches keyed by manifest row.
struct PatchStore {
  Dims dims;
  std::vector<PatchSample> samples;

  /// Writes `patches.f32` (little-endian float32 blocks: intensity, prior,
  /// label) and the sidecar index `patches.idx.jsonl`.
  void save(const std::filesystem::path& dir) const;
  static PatchStore load(const std::filesystem::path& dir);
};

PatchStore materialize(const PatchManifest& manifest, std::span<const RefineCase> cases);

struct RefineDataset {
  PatchManifest manifest;
  PatchStore store;
};

RefineDataset build_refine_dataset(std::span<const RefineCase> cases, const PatchSpec& spec,
                                   std::uint64_t master_seed);

}  // namespace cfseg
