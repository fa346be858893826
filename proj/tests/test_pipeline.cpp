#include <doctest.h>

#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "cfseg/nifti.hpp"
#include "cfseg/phantom.hpp"
#include "cfseg/pipeline.hpp"
#include "support.hpp"

using namespace cfseg;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("id" + std::to_string(i));
  return out;
}

/// Small and fast: 24^3-ish phantoms on a 12x12x6 coarse grid.
PipelineConfig mini_config() {
  PipelineConfig c;
  c.coarse.target_spacing = {8, 8, 16};
  c.coarse.target_dims = {12, 12, 6};
  c.coarse.epochs = 2;
  c.coarse.lr = 1e-3;
  c.coarse.levels = 2;
  c.coarse.base_width = 2;
  c.refine.patch_dims = {8, 8, 4};
  c.refine.patches_per_organ = 2;
  c.refine.epochs = 2;
  c.refine.lr = 1e-3;
  c.refine.levels = 2;
  c.refine.base_width = 2;
  c.seed = 3;
  return c;
}

std::vector<PhantomCase> mini_cohort(int n) { return make_phantom_cohort(n, 99); }

std::vector<CoarseCase> coarse_cases(const std::vector<PhantomCase>& cohort, const PipelineConfig& c) {
  std::vector<CoarseCase> out;
  for (const PhantomCase& p : cohort) out.push_back(preprocess_case(p.id, p.phantom.image, &p.phantom.labels, c));
  return out;
}

}  // namespace

TEST_CASE("80 ids split into four 60/20 folds") {
  const auto all = ids(80);
  const auto folds = make_folds(all, 7);
  REQUIRE(folds.size() == 4);
  std::multiset<std::string> val_union;
  for (const FoldSplit& f : folds) {
    CHECK(f.train.size() == 60);
    CHECK(f.val.size() == 20);
    const std::set<std::string> tr(f.train.begin(), f.train.end());
    for (const auto& v : f.val) CHECK(tr.count(v) == 0);
    val_union.insert(f.val.begin(), f.val.end());
  }
  CHECK(val_union == std::multiset<std::string>(all.begin(), all.end()));
  const auto again = make_folds(all, 7);
  for (int f = 0; f < 4; ++f) CHECK(again[f].val == folds[f].val);
  CHECK(make_folds(all, 8)[0].val != folds[0].val);
  const auto ten = make_folds(ids(10), 1);
  CHECK(ten[0].val.size() + ten[1].val.size() + ten[2].val.size() + ten[3].val.size() == 10);
  for (const auto& f : ten) CHECK((f.val.size() == 2 || f.val.size() == 3));
  CHECK_ERROR_CODE(make_folds(ids(3), 1), ErrorCode::kInvalidArgument);
  const auto back = folds_from_json(folds_to_json(folds));
  for (int f = 0; f < 4; ++f) {
    CHECK(back[f].train == folds[f].train);
    CHECK(back[f].val == folds[f].val);
  }
}

TEST_CASE("configuration defaults, JSON round trip and validation") {
  const PipelineConfig d;
  CHECK(d.coarse.target_spacing == Spacing{2, 2, 6});
  CHECK(d.coarse.target_dims == Dims{168, 168, 64});
  CHECK(d.coarse.epochs == 100);
  CHECK(d.coarse.lr == 1e-4);
  CHECK(d.coarse.batch == 1);
  CHECK(d.refine.patch_dims == Dims{128, 128, 64});
  CHECK(d.refine.patches_per_organ == 50);
  CHECK(d.refine.epochs == 5);
  CHECK(d.refine.batch == 2);
  CHECK_NOTHROW(d.validate());

  PipelineConfig c = mini_config();
  c.data_dir = "d";
  c.work_dir = "w";
  c.largest_component = true;
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.coarse.target_spacing == c.coarse.target_spacing);
  CHECK(back.refine.patch_dims == c.refine.patch_dims);
  CHECK(back.largest_component);

  CHECK_ERROR_CODE(PipelineConfig::from_json("{\"coarse\": {\"epochs\": -1}}"), ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(PipelineConfig::from_json("{\"coarse\": {\"target_dims\": [170, 168, 64]}}"),
                   ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(PipelineConfig::from_json("{not json"), ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(PipelineConfig::from_json("{\"window\": [10, -10]}"), ErrorCode::kInvalidArgument);
  CHECK(PipelineConfig::from_json("{\"seed\": 5}").coarse.epochs == 100);
}

TEST_CASE("shipped toy config matches the built-in toy settings") {
  std::ifstream in(fs::path(CFSEG_SOURCE_DIR) / "configs" / "toy.json");
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  CHECK(PipelineConfig::from_json(ss.str()).to_json() == PipelineConfig::toy().to_json());
}

TEST_CASE("phantom labels, volumes and determinism") {
  PhantomSpec spec;
  spec.organs = {{OrganId(6), {60, 80, 90}, {30, 26, 36}, 60, 10},
                 {OrganId(1), {140, 120, 100}, {18, 16, 24}, 110, 10},
                 {OrganId(3), {140, 50, 80}, {12, 12, 20}, 185, 10}};
  SeededRng rng(1);
  const Phantom p = gen_phantom(spec, rng);
  std::set<int> present;
  for (Index i = 0; i < p.labels.voxels.size(); ++i) present.insert(p.labels.voxels[i]);
  CHECK(present == std::set<int>{0, 1, 3, 6});
  const double voxel = spec.spacing.x * spec.spacing.y * spec.spacing.z;
  for (const PhantomOrgan& o : spec.organs) {
    const double analytic = 4.0 / 3.0 * std::numbers::pi * o.radii_mm[0] * o.radii_mm[1] * o.radii_mm[2] / voxel;
    const double count = static_cast<double>((p.labels.voxels == o.organ.value()).count());
    CHECK(std::abs(count / analytic - 1.0) < 0.1);
  }
  SeededRng rng2(1);
  const Phantom q = gen_phantom(spec, rng2);
  CHECK(q.image == p.image);
  CHECK(q.labels == p.labels);

  PhantomSpec clash = spec;
  clash.organs[1].center_mm = clash.organs[0].center_mm;
  SeededRng rng3(1);
  CHECK_ERROR_CODE(gen_phantom(clash, rng3), ErrorCode::kPlacementFailed);

  const auto cohort = make_phantom_cohort(3, 5);
  CHECK(cohort[2].id == "case_002");
  CHECK(cohort[0].phantom.labels.dims == Dims{96, 96, 48});
  CHECK(make_phantom_cohort(3, 5)[1].phantom.image == cohort[1].phantom.image);
}

TEST_CASE("preprocessing lands on the coarse grid") {
  const auto cohort = mini_cohort(1);
  const PipelineConfig c = mini_config();
  const CoarseCase cc = preprocess_case("x", cohort[0].phantom.image, &cohort[0].phantom.labels, c);
  CHECK(cc.input.dims == c.coarse.target_dims);
  CHECK(cc.labels.dims == c.coarse.target_dims);
  CHECK(cc.has_labels);
  CHECK(cc.input.voxels.minCoeff() >= 0.0f);
  CHECK(cc.input.voxels.maxCoeff() <= 1.0f);
  CHECK(cc.native_dims == cohort[0].phantom.image.dims);
  CHECK(cc.record.consistent());
}

TEST_CASE("coarse training: zero epochs, selection rule and errors") {
  const auto cohort = mini_cohort(3);
  PipelineConfig c = mini_config();
  const auto cases = coarse_cases(cohort, c);
  const std::span<const CoarseCase> all(cases);

  c.coarse.epochs = 0;
  const TrainResult zero = train_coarse(c, all.first(2), all.subspan(2));
  CHECK(zero.history.best_epoch == -1);
  CHECK(zero.checkpoint.step == 0);
  c.coarse.epochs = 3;
  const TrainResult r = train_coarse(c, all.first(2), all.subspan(2));
  CHECK(r.history.train_loss.size() == 3);
  REQUIRE(r.history.val_loss.size() == 3);
  const auto best = std::min_element(r.history.val_loss.begin(), r.history.val_loss.end());
  CHECK(r.history.best_epoch == best - r.history.val_loss.begin());
  // Same seed reproduces the initialization exactly.
  c.coarse.epochs = 0;
  const TrainResult zero2 = train_coarse(c, all.first(2), {});
  for (const auto& e : zero.checkpoint.params.entries()) CHECK((zero2.checkpoint.params[e.name] == e.value).all());
  CHECK_ERROR_CODE(train_coarse(c, {}, {}), ErrorCode::kEmptyInput);
  c.coarse.epochs = 2;
  c.coarse.lr = 1e30;
  CHECK_ERROR_CODE(train_coarse(c, all.first(2), {}), ErrorCode::kDivergence);
  const std::string tsv = r.history.to_tsv();
  CHECK(tsv.rfind("epoch\ttrain_loss\tval_loss\n", 0) == 0);
}

TEST_CASE("refine training consumes patches of every organ") {
  const auto cohort = mini_cohort(2);
  const PipelineConfig c = mini_config();
  std::vector<RefineCase> rc;
  for (const PhantomCase& p : cohort)
    rc.push_back(make_refine_case(p.id, p.phantom.image, p.phantom.labels, p.phantom.labels, c));
  const RefineDataset ds = build_refine_dataset(rc, c.patch_spec(), c.patch_seed());
  const TrainResult r = train_refine(c, ds.store, nullptr);
  std::set<int> organs_in_store;
  for (const auto& s : ds.store.samples) organs_in_store.insert(s.organ.value());
  long total = 0;
  for (int o = 1; o <= kNumOrgans; ++o) {
    const long n = r.history.organ_samples[static_cast<std::size_t>(o - 1)];
    total += n;
    CHECK((n > 0) == (organs_in_store.count(o) > 0));
  }
  CHECK(total == static_cast<long>(ds.store.samples.size()) * c.refine.epochs);
  CHECK_ERROR_CODE(train_refine(c, PatchStore{c.refine.patch_dims, {}}, nullptr), ErrorCode::kEmptyInput);
  PipelineConfig zero = c;
  zero.refine.epochs = 0;
  CHECK(train_refine(zero, ds.store, nullptr).checkpoint.step == 0);
}

TEST_CASE("inference: empty priors, prior containment and checkpoint checks") {
  const auto cohort = mini_cohort(1);
  const PipelineConfig c = mini_config();
  SeededRng r1(1), r2(2);
  const Checkpoint coarse{c.coarse_net(), 0, init_params<float>(c.coarse_net(), r1)};
  const Checkpoint refine{c.refine_net(), 0, init_params<float>(c.refine_net(), r2)};
  const ImageVolume& img = cohort[0].phantom.image;

  int patches = -1;
  const ImageVolume norm = normalize_intensity(img, c.window_lo, c.window_hi);
  const LabelVolume empty(img.dims, img.spacing);
  const LabelVolume none = refine_from_coarse(refine, norm, empty, c, &patches);
  CHECK(patches == 0);
  CHECK(none.voxels.isZero());

  const InferenceResult out = infer(coarse, refine, img, c);
  CHECK(out.refined.dims == img.dims);
  CHECK(out.coarse.dims == img.dims);
  std::set<int> coarse_labels, refined_labels;
  for (Index i = 0; i < img.voxels.size(); ++i) {
    coarse_labels.insert(out.coarse.voxels[i]);
    refined_labels.insert(out.refined.voxels[i]);
  }
  for (int l : refined_labels) CHECK((l == 0 || coarse_labels.count(l) == 1));
  const InferenceResult again = infer(coarse, refine, img, c);
  CHECK(again.refined == out.refined);

  CHECK_ERROR_CODE(infer(refine, refine, img, c), ErrorCode::kCheckpointMismatch);
  PipelineConfig wider = c;
  wider.refine.base_width = 3;
  CHECK_ERROR_CODE(infer(coarse, refine, img, wider), ErrorCode::kCheckpointMismatch);
}

TEST_CASE("directory evaluation pairs cases by id") {
  const fs::path dir = test::scratch_dir("evaldirs");
  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "gt");
  const auto cohort = mini_cohort(2);
  for (const PhantomCase& p : cohort) {
    write_volume(p.phantom.labels, dir / "pred" / (p.id + ".nii.gz"));
    write_volume(p.phantom.labels, dir / "gt" / (p.id + ".nii"));
  }
  std::vector<CaseScores> per_case;
  const CohortReport r = evaluate_dirs(dir / "pred", dir / "gt", &per_case);
  CHECK(r.cases == 2);
  CHECK(per_case.size() == 2);
  CHECK(*r.average == 1.0);
  fs::remove(dir / "pred" / "case_001.nii.gz");
  CHECK_ERROR_CODE(evaluate_dirs(dir / "pred", dir / "gt"), ErrorCode::kUnmatchedCase);
  CHECK_ERROR_CODE(evaluate_dirs(dir / "nope", dir / "gt"), ErrorCode::kIo);
}
