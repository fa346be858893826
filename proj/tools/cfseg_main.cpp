// Command-line driver for the two-stage segmentation pipeline.
//
// Data layout (paths.data):   {train,test}/{images,labels}/<id>.nii.gz
// Work layout (paths.work):   folds.json, coarse_grid/, fold<k>/{coarse,coarse_pred,patches,refine,pred}/

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "cfseg/checkpoint.hpp"
#include "cfseg/error.hpp"
#include "cfseg/nifti.hpp"
#include "cfseg/phantom.hpp"
#include "cfseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cfseg;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int fold = 0;
  int threads = 1;
  std::string out;
};

struct Extra {
  int count = 12;
  int test = 4;
  std::string input;
  std::string pred;
  std::string gt;
  std::string coarse_ckpt;
  std::string refine_ckpt;
  std::string patches;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

std::string case_id(const fs::path& p) {
  std::string name = p.filename().string();
  for (const std::string ext : {".nii.gz", ".nii"})
    if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0)
      return name.substr(0, name.size() - ext.size());
  return {};
}

/// Case id -> file, sorted by id.
std::map<std::string, fs::path> list_cases(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && !case_id(e.path()).empty()) out[case_id(e.path())] = e.path();
  return out;
}

fs::path nii(const fs::path& dir, const std::string& id) { return dir / (id + ".nii.gz"); }

class Driver {
 public:
  Driver(const Common& common, const Extra& extra) : c_(common), x_(extra) {
    if (!c_.config_path.empty()) cfg_ = PipelineConfig::load(c_.config_path);
    if (c_.seed) cfg_.seed = *c_.seed;
    if (cfg_.data_dir.empty()) cfg_.data_dir = "data";
    if (cfg_.work_dir.empty()) cfg_.work_dir = "work";
    if (c_.fold < 0 || c_.fold > 3) fail(ErrorCode::kInvalidArgument, "--fold must be in 0..3");
    set_threads(c_.threads);
  }

  void phantom() {
    if (x_.count < 2 || x_.test < 1 || x_.test >= x_.count)
      fail(ErrorCode::kInvalidArgument, "need 1 <= --test < --count");
    const fs::path root = out_or(cfg_.data_dir);
    const auto cohort = make_phantom_cohort(x_.count, cfg_.seed);
    const int train = x_.count - x_.test;
    for (int i = 0; i < x_.count; ++i) {
      const fs::path dir = root / (i < train ? "train" : "test");
      fs::create_directories(dir / "images");
      fs::create_directories(dir / "labels");
      write_volume(cohort[i].phantom.image, nii(dir / "images", cohort[i].id));
      write_volume(cohort[i].phantom.labels, nii(dir / "labels", cohort[i].id));
    }
    std::cout << "phantom\tcases=" << x_.count << "\ttrain=" << train << "\ttest=" << x_.test << "\tout=" << root.string()
              << "\n";
  }

  void cv_split() {
    std::vector<std::string> ids;
    for (const auto& [id, path] : list_cases(data() / "train" / "images")) ids.push_back(id);
    const auto folds = make_folds(ids, cfg_.seed);
    const fs::path path = out_or(work()) / "folds.json";
    write_text(path, folds_to_json(folds));
    std::cout << "cv-split\tcases=" << ids.size() << "\tfolds=" << folds.size() << "\tout=" << path.string() << "\n";
  }

  void preprocess() {
    const fs::path out = out_or(work() / "coarse_grid");
    fs::create_directories(out);
    int n = 0;
    for (const auto& [id, path] : list_cases(data() / "train" / "images")) {
      const LabelVolume gt = read_labels(nii(data() / "train" / "labels", id));
      const CoarseCase cc = preprocess_case(id, read_image(path), &gt, cfg_);
      write_volume(cc.input, out / (id + "_image.nii.gz"));
      write_volume(cc.labels, out / (id + "_labels.nii.gz"));
      ++n;
    }
    std::cout << "preprocess\tcases=" << n << "\tout=" << out.string() << "\n";
  }

  void train_coarse_cmd() {
    const FoldSplit split = fold_split();
    const auto train = load_grid(split.train);
    const auto val = load_grid(split.val);
    const TrainResult r = train_coarse(cfg_, train, val);
    const fs::path out = out_or(fold_dir() / "coarse");
    fs::create_directories(out);
    save_checkpoint(r.checkpoint, out / "model.ckpt");
    write_text(out / "history.tsv", r.history.to_tsv());
    std::cout << "train-coarse\tfold=" << c_.fold << "\tbest_epoch=" << r.history.best_epoch
              << "\tout=" << out.string() << "\n";
  }

  void infer_coarse() {
    const Checkpoint ckpt = load_checkpoint(ckpt_path(x_.coarse_ckpt, "coarse"));
    check_checkpoint(ckpt, cfg_.coarse_net(), "coarse");
    const fs::path out = out_or(fold_dir() / "coarse_pred");
    fs::create_directories(out);
    int n = 0;
    for (const auto& [id, path] : list_cases(input_dir(data() / "train" / "images"))) {
      const CoarseCase cc = preprocess_case(id, read_image(path), nullptr, cfg_);
      write_volume(predict_coarse(ckpt, cc), nii(out, id));
      ++n;
    }
    std::cout << "infer-coarse\tcases=" << n << "\tout=" << out.string() << "\n";
  }

  void build_patches() {
    const FoldSplit split = fold_split();
    const fs::path coarse = x_.pred.empty() ? fold_dir() / "coarse_pred" : fs::path(x_.pred);
    const fs::path out = out_or(fold_dir() / "patches");
    for (const auto& [name, ids] : {std::pair{"train", split.train}, std::pair{"val", split.val}}) {
      std::vector<RefineCase> cases;
      for (const std::string& id : ids)
        cases.push_back(make_refine_case(id, read_image(nii(data() / "train" / "images", id)),
                                         read_labels(nii(data() / "train" / "labels", id)),
                                         read_labels(nii(coarse, id)), cfg_));
      const RefineDataset ds = build_refine_dataset(cases, cfg_.patch_spec(), cfg_.patch_seed());
      fs::create_directories(out / name);
      ds.manifest.save(out / name / "manifest.jsonl");
      ds.store.save(out / name);
      std::cout << "build-patches\tsplit=" << name << "\texpected=" << ds.manifest.expected
                << "\tactual=" << ds.manifest.actual() << "\tskipped=" << ds.manifest.skips.size()
                << "\tgrown=" << ds.manifest.growth.size() << "\n";
    }
    std::cout << "build-patches\tout=" << out.string() << "\n";
  }

  void train_refine_cmd() {
    const fs::path root = x_.patches.empty() ? fold_dir() / "patches" : fs::path(x_.patches);
    const PatchStore train = PatchStore::load(root / "train");
    std::optional<PatchStore> val;
    if (fs::exists(root / "val")) val = PatchStore::load(root / "val");
    const TrainResult r = train_refine(cfg_, train, val ? &*val : nullptr);
    const fs::path out = out_or(fold_dir() / "refine");
    fs::create_directories(out);
    save_checkpoint(r.checkpoint, out / "model.ckpt");
    write_text(out / "history.tsv", r.history.to_tsv());
    std::ostringstream organs;
    organs << "organ\tpatches\n";
    for (int o = 1; o <= kNumOrgans; ++o)
      organs << OrganId(o).name() << '\t' << r.history.organ_samples[static_cast<std::size_t>(o - 1)] << '\n';
    write_text(out / "organ_samples.tsv", organs.str());
    std::cout << "train-refine\tfold=" << c_.fold << "\tpatches=" << train.samples.size()
              << "\tbest_epoch=" << r.history.best_epoch << "\tout=" << out.string() << "\n";
  }

  void infer_cmd() {
    const Checkpoint coarse = load_checkpoint(ckpt_path(x_.coarse_ckpt, "coarse"));
    const Checkpoint refine = load_checkpoint(ckpt_path(x_.refine_ckpt, "refine"));
    const fs::path out = out_or(fold_dir() / "pred");
    fs::create_directories(out / "coarse_only");
    std::map<std::string, fs::path> inputs;
    if (!x_.input.empty() && fs::is_regular_file(x_.input))
      inputs[case_id(x_.input)] = x_.input;
    else
      inputs = list_cases(input_dir(data() / "test" / "images"));
    for (const auto& [id, path] : inputs) {
      const InferenceResult r = infer(coarse, refine, read_image(path), cfg_);
      write_volume(r.refined, nii(out, id));
      write_volume(r.coarse, nii(out / "coarse_only", id));
      std::cout << "infer\tcase=" << id << "\tpatches=" << r.patches << "\n";
    }
    std::cout << "infer\tcases=" << inputs.size() << "\tout=" << out.string() << "\n";
  }

  void evaluate_cmd() {
    const fs::path pred = x_.pred.empty() ? fold_dir() / "pred" : fs::path(x_.pred);
    const fs::path gt = x_.gt.empty() ? data() / "test" / "labels" : fs::path(x_.gt);
    std::vector<CaseScores> per_case;
    const CohortReport report = evaluate_dirs(pred, gt, &per_case);
    const fs::path out = out_or(pred);
    write_text(out / "report.tsv", report.to_table(pred.filename().string()));
    write_text(out / "report.json", report.to_json());
    std::cout << report.to_table(pred.filename().string());
  }

 private:
  fs::path data() const { return cfg_.data_dir; }
  fs::path work() const { return cfg_.work_dir; }
  fs::path fold_dir() const { return work() / ("fold" + std::to_string(c_.fold)); }
  fs::path out_or(const fs::path& fallback) const { return c_.out.empty() ? fallback : fs::path(c_.out); }
  fs::path input_dir(const fs::path& fallback) const { return x_.input.empty() ? fallback : fs::path(x_.input); }

  fs::path ckpt_path(const std::string& given, const char* stage) const {
    return given.empty() ? fold_dir() / stage / "model.ckpt" : fs::path(given);
  }

  FoldSplit fold_split() const {
    const auto folds = folds_from_json(read_text(work() / "folds.json"));
    for (const FoldSplit& f : folds)
      if (f.fold == c_.fold) return f;
    fail(ErrorCode::kInvalidArgument, "fold " + std::to_string(c_.fold) + " not in folds.json");
  }

  std::vector<CoarseCase> load_grid(const std::vector<std::string>& ids) const {
    const fs::path dir = work() / "coarse_grid";
    std::vector<CoarseCase> out;
    for (const std::string& id : ids) {
      CoarseCase cc;
      cc.id = id;
      cc.input = read_image(dir / (id + "_image.nii.gz"));
      cc.labels = read_labels(dir / (id + "_labels.nii.gz"));
      cc.has_labels = true;
      if (!(cc.input.dims == cfg_.coarse.target_dims))
        fail(ErrorCode::kShapeMismatch, "coarse grid of " + id + " does not match the configured dims; rerun preprocess");
      out.push_back(std::move(cc));
    }
    return out;
  }

  Common c_;
  Extra x_;
  PipelineConfig cfg_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine multi-organ segmentation"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  Extra extra;
  app.add_option("--config", common.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "Master seed (overrides the config)");
  app.add_option("--fold", common.fold, "Cross-validation fold 0..3");
  app.add_option("--threads", common.threads, "Worker threads (1 is bit-reproducible)");
  app.add_option("--out", common.out, "Output directory (default: per-command location under paths.work)");

  std::map<std::string, void (Driver::*)()> actions;
  auto add = [&](const char* name, const char* help, void (Driver::*fn)()) {
    actions[name] = fn;
    return app.add_subcommand(name, help);
  };
  CLI::App* ph = add("phantom", "Generate the synthetic phantom cohort", &Driver::phantom);
  ph->add_option("--count", extra.count, "Number of cases");
  ph->add_option("--test", extra.test, "Held-out test cases");
  add("cv-split", "Write 4-fold cross-validation splits of the training ids", &Driver::cv_split);
  add("preprocess", "Resample training cases onto the coarse grid", &Driver::preprocess);
  add("train-coarse", "Train the coarse multi-organ model on one fold", &Driver::train_coarse_cmd);
  CLI::App* ic = add("infer-coarse", "Coarse predictions on the native grid", &Driver::infer_coarse);
  ic->add_option("--input", extra.input, "Directory of images");
  ic->add_option("--coarse-ckpt", extra.coarse_ckpt, "Coarse checkpoint");
  CLI::App* bp = add("build-patches", "Sample prior-guided patches for one fold", &Driver::build_patches);
  bp->add_option("--coarse-pred", extra.pred, "Directory of native-grid coarse predictions");
  CLI::App* tr = add("train-refine", "Train the single refine model", &Driver::train_refine_cmd);
  tr->add_option("--patches", extra.patches, "Patch store root with train/ and val/");
  CLI::App* in = add("infer", "Two-stage inference with majority-vote fusion", &Driver::infer_cmd);
  in->add_option("--input", extra.input, "Image file or directory");
  in->add_option("--coarse-ckpt", extra.coarse_ckpt, "Coarse checkpoint");
  in->add_option("--refine-ckpt", extra.refine_ckpt, "Refine checkpoint");
  CLI::App* ev = add("evaluate", "Dice report of predictions against ground truth", &Driver::evaluate_cmd);
  ev->add_option("--pred", extra.pred, "Prediction directory");
  ev->add_option("--gt", extra.gt, "Ground-truth directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: invalid_argument: %s\n", e.what());
    return 2;
  }

  try {
    Driver driver(common, extra);
    for (CLI::App* sub : app.get_subcommands()) (driver.*actions.at(sub->get_name()))();
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(error_code_name(e.code())).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
