#include "cfseg/patch.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace cfseg {

void PatchSpec::validate() const {
  if (dims.x < 1 || dims.y < 1 || dims.z < 1)
    fail(ErrorCode::kInvalidArgument, "patch dims must be >= 1");
  if (patches_per_organ < 1) fail(ErrorCode::kInvalidArgument, "patches_per_organ must be >= 1");
}

namespace {

// Per-voxel window counts over the prior bounding box.
class CoverageGrid {
 public:
  CoverageGrid(const Box& box, Dims patch) : box_(box), patch_(patch) {
    for (int a = 0; a < 3; ++a) extent_[a] = box.extent(a);
    counts_.assign(static_cast<std::size_t>(extent_.count()), 0);
  }

  void paint(const Voxel& origin, int delta) {
    Voxel lo, hi;
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(origin[a], box_.lo[a]) - box_.lo[a];
      hi[a] = std::min(origin[a] + patch_[a] - 1, box_.hi[a]) - box_.lo[a];
      if (hi[a] < lo[a]) return;
    }
    for (Index z = lo.z; z <= hi.z; ++z)
      for (Index y = lo.y; y <= hi.y; ++y) {
        std::int32_t* row = counts_.data() + (extent_.x * (y + extent_.y * z));
        for (Index x = lo.x; x <= hi.x; ++x) row[x] += delta;
      }
  }

  /// Greedy repair: centre a window on the first uncovered prior voxel in scan
  /// order until none remain. Leaves this grid untouched.
  std::vector<Voxel> greedy_cover(const LabelVolume& mask) const {
    CoverageGrid work = *this;
    std::vector<Voxel> repairs;
    Index i = 0;
    for (Index z = 0; z < extent_.z; ++z)
      for (Index y = 0; y < extent_.y; ++y)
        for (Index x = 0; x < extent_.x; ++x, ++i) {
          if (work.counts_[static_cast<std::size_t>(i)] > 0) continue;
          const Voxel v{x + box_.lo.x, y + box_.lo.y, z + box_.lo.z};
          if (!mask.at(v.x, v.y, v.z)) continue;
          const Voxel origin{v.x - patch_.x / 2, v.y - patch_.y / 2, v.z - patch_.z / 2};
          repairs.push_back(origin);
          work.paint(origin, 1);
        }
    return repairs;
  }

  Index uncovered(const LabelVolume& mask) const {
    Index n = 0, i = 0;
    for (Index z = 0; z < extent_.z; ++z)
      for (Index y = 0; y < extent_.y; ++y)
        for (Index x = 0; x < extent_.x; ++x, ++i)
          if (counts_[static_cast<std::size_t>(i)] == 0 &&
              mask.at(x + box_.lo.x, y + box_.lo.y, z + box_.lo.z))
            ++n;
    return n;
  }

 private:
  Box box_;
  Dims patch_;
  Dims extent_;
  std::vector<std::int32_t> counts_;
};

// Summed-volume table of the mask over the prior bounding box; answers
// "does this window hold a prior voxel" in constant time.
class MaskTable {
 public:
  MaskTable(const LabelVolume& mask, const Box& box) : box_(box) {
    for (int a = 0; a < 3; ++a) ext_[a] = box.extent(a) + 1;
    sums_.assign(static_cast<std::size_t>(ext_.count()), 0);
    for (Index z = 1; z < ext_.z; ++z)
      for (Index y = 1; y < ext_.y; ++y)
        for (Index x = 1; x < ext_.x; ++x) {
          const Index m = mask.at(x - 1 + box.lo.x, y - 1 + box.lo.y, z - 1 + box.lo.z) ? 1 : 0;
          at(x, y, z) = m + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) - at(x - 1, y - 1, z) -
                        at(x - 1, y, z - 1) - at(x, y - 1, z - 1) + at(x - 1, y - 1, z - 1);
        }
  }

  bool any(const Voxel& origin, Dims patch) const {
    Index lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::clamp<Index>(origin[a] - box_.lo[a], 0, ext_[a] - 1);
      hi[a] = std::clamp<Index>(origin[a] + patch[a] - box_.lo[a], 0, ext_[a] - 1);
      if (hi[a] <= lo[a]) return false;
    }
    const Index n = at(hi[0], hi[1], hi[2]) - at(lo[0], hi[1], hi[2]) - at(hi[0], lo[1], hi[2]) -
                    at(hi[0], hi[1], lo[2]) + at(lo[0], lo[1], hi[2]) + at(lo[0], hi[1], lo[2]) +
                    at(hi[0], lo[1], lo[2]) - at(lo[0], lo[1], lo[2]);
    return n > 0;
  }

 private:
  Index& at(Index x, Index y, Index z) { return sums_[static_cast<std::size_t>(x + ext_.x * (y + ext_.y * z))]; }
  Index at(Index x, Index y, Index z) const {
    return sums_[static_cast<std::size_t>(x + ext_.x * (y + ext_.y * z))];
  }

  Box box_;
  Dims ext_;
  std::vector<Index> sums_;
};

constexpr int kMaxRejections = 4096;

// Uniform over windows that intersect the bounding box, redrawn until the
// window holds a prior voxel. Sparse masks fall back to centring the window on
// a uniformly chosen prior voxel.
Voxel draw_origin(const OrganPrior& prior, const MaskTable& table, Dims patch, SeededRng& rng) {
  const Box& box = prior.bbox;
  Voxel o;
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    for (int a = 0; a < 3; ++a) o[a] = rng.uniform_int(box.lo[a] - patch[a] + 1, box.hi[a]);
    if (table.any(o, patch)) return o;
  }
  Index pick = rng.uniform_int(0, prior.voxel_count - 1);
  for (Index z = box.lo.z; z <= box.hi.z; ++z)
    for (Index y = box.lo.y; y <= box.hi.y; ++y)
      for (Index x = box.lo.x; x <= box.hi.x; ++x)
        if (prior.mask.at(x, y, z) && pick-- == 0) return {x - patch.x / 2, y - patch.y / 2, z - patch.z / 2};
  fail(ErrorCode::kInvalidArgument, "prior voxel count does not match its mask");
}

}  // namespace

OriginSample sample_origins(const OrganPrior& prior, const PatchSpec& spec, Dims volume_dims,
                            SeededRng rng) {
  spec.validate();
  if (!prior.present || prior.bbox.empty())
    fail(ErrorCode::kOrganMissing,
         "organ " + std::string(prior.organ.name()) + " missing from prior, skip");
  if (!(prior.mask.dims == volume_dims))
    fail(ErrorCode::kShapeMismatch, "prior mask dims differ from volume dims");

  const int budget = spec.patches_per_organ;
  const Box& box = prior.bbox;
  const MaskTable table(prior.mask, box);
  std::vector<Voxel> draws(static_cast<std::size_t>(budget));
  for (Voxel& o : draws) o = draw_origin(prior, table, spec.dims, rng);

  CoverageGrid grid(box, spec.dims);
  for (const Voxel& o : draws) grid.paint(o, 1);

  OriginSample result;
  if (grid.uncovered(prior.mask) == 0) {
    result.origins = std::move(draws);
    result.random_kept = budget;
    return result;
  }
  for (int dropped = 1; dropped <= budget; ++dropped) {
    grid.paint(draws[static_cast<std::size_t>(budget - dropped)], -1);
    std::vector<Voxel> repairs = grid.greedy_cover(prior.mask);
    if (static_cast<int>(repairs.size()) > dropped) continue;
    // Re-admitting draws only adds coverage, so refill up to the budget.
    const int kept = budget - static_cast<int>(repairs.size());
    result.origins.assign(draws.begin(), draws.begin() + kept);
    result.origins.insert(result.origins.end(), repairs.begin(), repairs.end());
    result.random_kept = kept;
    result.repaired = static_cast<int>(repairs.size());
    return result;
  }

  // The budget cannot cover the prior: keep every draw and append repairs.
  for (const Voxel& o : draws) grid.paint(o, 1);
  std::vector<Voxel> repairs = grid.greedy_cover(prior.mask);
  result.origins = std::move(draws);
  result.origins.insert(result.origins.end(), repairs.begin(), repairs.end());
  result.random_kept = budget;
  result.repaired = static_cast<int>(repairs.size());
  result.budget_grown = true;
  return result;
}

Index uncovered_prior_voxels(const OrganPrior& prior, std::span<const Voxel> origins, Dims patch_dims) {
  if (!prior.present) return 0;
  CoverageGrid grid(prior.bbox, patch_dims);
  for (const Voxel& o : origins) grid.paint(o, 1);
  return grid.uncovered(prior.mask);
}

PatchSample extract_patch(const ImageVolume& image, const OrganPrior& prior, const LabelVolume* gt,
                          OrganId organ, Voxel origin, const PatchSpec& spec) {
  spec.validate();
  if (!(image.dims == prior.mask.dims) || (gt && !(gt->dims == image.dims)))
    fail(ErrorCode::kShapeMismatch, "image, prior and ground truth must share native dims");

  PatchSample s;
  s.organ = organ;
  s.origin = origin;
  s.dims = spec.dims;
  const Index n = spec.dims.count();
  s.intensity = Eigen::ArrayXf::Constant(n, spec.fill_value);
  s.prior = Eigen::ArrayXf::Zero(n);
  if (gt) s.label = Eigen::ArrayXf::Zero(n);

  const auto id = static_cast<std::uint8_t>(organ.value());
  // Clip the window to the volume once per axis.
  Voxel lo, hi;
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<Index>(0, -origin[a]);
    hi[a] = std::min<Index>(spec.dims[a], image.dims[a] - origin[a]);
    if (hi[a] <= lo[a]) return s;
  }
  for (Index z = lo.z; z < hi.z; ++z)
    for (Index y = lo.y; y < hi.y; ++y) {
      const Index dst = spec.dims.x * (y + spec.dims.y * z);
      const Index src = image.index(origin.x, origin.y + y, origin.z + z);
      for (Index x = lo.x; x < hi.x; ++x) {
        s.intensity[dst + x] = image.voxels[src + x];
        s.prior[dst + x] = prior.mask.voxels[src + x] ? 1.0f : 0.0f;
        if (gt) s.label[dst + x] = gt->voxels[src + x] == id ? 1.0f : 0.0f;
      }
    }
  return s;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

using nlohmann::json;

json spec_to_json(const PatchSpec& spec) {
  return json{{"dims", {spec.dims.x, spec.dims.y, spec.dims.z}},
              {"patches_per_organ", spec.patches_per_organ},
              {"fill_value", spec.fill_value}};
}

PatchSpec spec_from_json(const json& j) {
  PatchSpec spec;
  const auto& d = j.at("dims");
  spec.dims = {d.at(0).get<Index>(), d.at(1).get<Index>(), d.at(2).get<Index>()};
  spec.patches_per_organ = j.at("patches_per_organ").get<int>();
  spec.fill_value = j.at("fill_value").get<float>();
  return spec;
}

}  // namespace

std::string PatchManifest::to_jsonl() const {
  std::ostringstream out;
  out << json{{"type", "header"},
              {"spec", spec_to_json(spec)},
              {"master_seed", master_seed},
              {"expected", expected},
              {"actual", actual()}}
             .dump()
      << '\n';
  for (const auto& r : rows)
    out << json{{"type", "patch"},
                {"case", r.case_id},
                {"organ", r.organ},
                {"origin", {r.origin.x, r.origin.y, r.origin.z}},
                {"seed", r.stream_seed}}
               .dump()
        << '\n';
  for (const auto& s : skips)
    out << json{{"type", "skip"}, {"case", s.case_id}, {"organ", s.organ}, {"reason", s.reason}}.dump()
        << '\n';
  for (const auto& g : growth)
    out << json{{"type", "growth"}, {"case", g.case_id}, {"organ", g.organ}, {"count", g.count}}.dump()
        << '\n';
  return out.str();
}

PatchManifest PatchManifest::from_jsonl(const std::string& text) {
  PatchManifest m;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        m.spec = spec_from_json(j.at("spec"));
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        m.expected = j.at("expected").get<Index>();
        header = true;
      } else if (type == "patch") {
        const auto& o = j.at("origin");
        m.rows.push_back({j.at("case").get<std::string>(), j.at("organ").get<int>(),
                          {o.at(0).get<Index>(), o.at(1).get<Index>(), o.at(2).get<Index>()},
                          j.at("seed").get<std::uint64_t>()});
      } else if (type == "skip") {
        m.skips.push_back({j.at("case").get<std::string>(), j.at("organ").get<int>(),
                           j.at("reason").get<std::string>()});
      } else if (type == "growth") {
        m.growth.push_back(
            {j.at("case").get<std::string>(), j.at("organ").get<int>(), j.at("count").get<int>()});
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed manifest: ") + e.what());
  }
  if (!header) fail(ErrorCode::kInvalidArgument, "manifest has no header line");
  return m;
}

void PatchManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << to_jsonl();
}

PatchManifest PatchManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str());
}

PatchManifest build_manifest(std::span<const RefineCase> cases, const PatchSpec& spec,
                             std::uint64_t master_seed) {
  spec.validate();
  PatchManifest m;
  m.spec = spec;
  m.master_seed = master_seed;
  const SeededRng master(master_seed);
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const RefineCase& rc = cases[c];
    if (rc.priors.size() != static_cast<std::size_t>(kNumOrgans))
      fail(ErrorCode::kInvalidArgument, "case " + rc.id + " must carry 13 priors");
    for (const OrganPrior& prior : rc.priors) {
      const int organ = prior.organ.value();
      m.expected += spec.patches_per_organ;
      if (!prior.present) {
        m.skips.push_back({rc.id, organ, "organ missing from coarse prior"});
        continue;
      }
      const std::uint64_t stream_seed =
          master.derive_seed(static_cast<std::uint64_t>(c) * kNumOrgans + static_cast<std::uint64_t>(organ - 1));
      const OriginSample sample = sample_origins(prior, spec, rc.image.dims, SeededRng(stream_seed));
      if (sample.budget_grown)
        m.growth.push_back({rc.id, organ, static_cast<int>(sample.origins.size())});
      for (const Voxel& o : sample.origins) m.rows.push_back({rc.id, organ, o, stream_seed});
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Patch store

namespace {

void write_le_floats(std::ofstream& out, const Eigen::ArrayXf& a) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * 4));
  } else {
    for (Index i = 0; i < a.size(); ++i) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(a[i]);
      bits = __builtin_bswap32(bits);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
}

void read_le_floats(std::ifstream& in, Eigen::ArrayXf& a) {
  in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * 4));
  if constexpr (std::endian::native == std::endian::big) {
    for (Index i = 0; i < a.size(); ++i)
      a[i] = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(a[i])));
  }
}

}  // namespace

void PatchStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream data(dir / "patches.f32", std::ios::binary | std::ios::trunc);
  std::ofstream index(dir / "patches.idx.jsonl", std::ios::binary | std::ios::trunc);
  if (!data || !index) fail(ErrorCode::kIo, "cannot write patch store in " + dir.string());
  const Index n = dims.count();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PatchSample& s = samples[i];
    if (!(s.dims == dims)) fail(ErrorCode::kShapeMismatch, "patch dims differ within store");
    const bool has_label = s.label.size() == n;
    index << json{{"row", i},
                  {"organ", s.organ.value()},
                  {"origin", {s.origin.x, s.origin.y, s.origin.z}},
                  {"dims", {dims.x, dims.y, dims.z}},
                  {"offset", offset},
                  {"label", has_label}}
                 .dump()
          << '\n';
    write_le_floats(data, s.intensity);
    write_le_floats(data, s.prior);
    if (has_label) write_le_floats(data, s.label);
    offset += static_cast<std::uint64_t>(n) * 4 * (has_label ? 3 : 2);
  }
  if (!data || !index) fail(ErrorCode::kIo, "write error in patch store " + dir.string());
}

PatchStore PatchStore::load(const std::filesystem::path& dir) {
  std::ifstream data(dir / "patches.f32", std::ios::binary);
  std::ifstream index(dir / "patches.idx.jsonl", std::ios::binary);
  if (!data || !index) fail(ErrorCode::kIo, "cannot open patch store in " + dir.string());
  PatchStore store;
  std::string line;
  bool first = true;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const auto& d = j.at("dims");
    const Dims dims{d.at(0).get<Index>(), d.at(1).get<Index>(), d.at(2).get<Index>()};
    if (first) store.dims = dims;
    first = false;
    if (!(dims == store.dims)) fail(ErrorCode::kShapeMismatch, "patch dims differ within store");
    PatchSample s;
    s.organ = OrganId(j.at("organ").get<int>());
    const auto& o = j.at("origin");
    s.origin = {o.at(0).get<Index>(), o.at(1).get<Index>(), o.at(2).get<Index>()};
    s.dims = dims;
    const Index n = dims.count();
    data.seekg(static_cast<std::streamoff>(j.at("offset").get<std::uint64_t>()));
    s.intensity.resize(n);
    s.prior.resize(n);
    read_le_floats(data, s.intensity);
    read_le_floats(data, s.prior);
    if (j.at("label").get<bool>()) {
      s.label.resize(n);
      read_le_floats(data, s.label);
    }
    if (!data) fail(ErrorCode::kIo, "patch store data truncated in " + dir.string());
    store.samples.push_back(std::move(s));
  }
  return store;
}

PatchStore materialize(const PatchManifest& manifest, std::span<const RefineCase> cases) {
  std::map<std::string, const RefineCase*> by_id;
  for (const RefineCase& c : cases) by_id[c.id] = &c;
  PatchStore store;
  store.dims = manifest.spec.dims;
  store.samples.reserve(manifest.rows.size());
  for (const ManifestRow& row : manifest.rows) {
    auto it = by_id.find(row.case_id);
    if (it == by_id.end()) fail(ErrorCode::kUnmatchedCase, "manifest case " + row.case_id + " not found");
    const RefineCase& rc = *it->second;
    const OrganId organ(row.organ);
    store.samples.push_back(extract_patch(rc.image, rc.priors[static_cast<std::size_t>(row.organ - 1)],
                                          &rc.gt, organ, row.origin, manifest.spec));
  }
  return store;
}

RefineDataset build_refine_dataset(std::span<const RefineCase> cases, const PatchSpec& spec,
                                   std::uint64_t master_seed) {
  RefineDataset ds;
  ds.manifest = build_manifest(cases, spec, master_seed);
  ds.store = materialize(ds.manifest, cases);
  return ds;
}

}  // namespace cfseg
