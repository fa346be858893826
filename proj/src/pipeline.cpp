#include "cfseg/pipeline.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "cfseg/adam.hpp"
#include "cfseg/fusion.hpp"
#include "cfseg/losses.hpp"
#include "cfseg/nifti.hpp"
#include "json.hpp"

namespace cfseg {

namespace {

using nlohmann::json;

// Independent RNG streams keyed off the master seed.
enum Stream : std::uint64_t {
  kCoarseInit = 1,
  kRefineInit = 2,
  kFoldShuffle = 3,
  kPatchSampling = 4,
  kInferSampling = 5,
  kCoarseShuffle = 1000,
  kRefineShuffle = 2000000,
};

json dims_json(Dims d) { return json::array({d.x, d.y, d.z}); }
json spacing_json(Spacing s) { return json::array({s.x, s.y, s.z}); }
Dims dims_from(const json& j) { return {j.at(0).get<Index>(), j.at(1).get<Index>(), j.at(2).get<Index>()}; }
Spacing spacing_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void PipelineConfig::validate() const {
  if (!coarse.target_spacing.valid()) fail(ErrorCode::kInvalidArgument, "coarse target spacing must be positive");
  const Dims& cd = coarse.target_dims;
  const Dims& pd = refine.patch_dims;
  if (cd.x < 1 || cd.y < 1 || cd.z < 1 || pd.x < 1 || pd.y < 1 || pd.z < 1)
    fail(ErrorCode::kInvalidArgument, "coarse dims and patch dims must be >= 1");
  if (coarse.epochs < 0 || refine.epochs < 0) fail(ErrorCode::kInvalidArgument, "epochs must be >= 0");
  if (coarse.batch < 1 || refine.batch < 1) fail(ErrorCode::kInvalidArgument, "batch sizes must be >= 1");
  if (!(coarse.lr > 0.0) || !(refine.lr > 0.0)) fail(ErrorCode::kInvalidArgument, "learning rates must be positive");
  if (refine.patches_per_organ < 1) fail(ErrorCode::kInvalidArgument, "patches_per_organ must be >= 1");
  if (!(window_lo < window_hi)) fail(ErrorCode::kInvalidArgument, "normalization window must satisfy lo < hi");
  coarse_net().validate();
  refine_net().validate();
  const Index cdiv = coarse_net().divisor();
  const Index rdiv = refine_net().divisor();
  for (int a = 0; a < 3; ++a) {
    if (cd[a] % cdiv) fail(ErrorCode::kInvalidArgument, "coarse dims must be multiples of " + std::to_string(cdiv));
    if (pd[a] % rdiv) fail(ErrorCode::kInvalidArgument, "patch dims must be multiples of " + std::to_string(rdiv));
  }
}

UNetConfig PipelineConfig::coarse_net() const {
  UNetConfig c;
  c.in_channels = 1;
  c.out_channels = kNumClasses;
  c.levels = coarse.levels;
  c.base_width = coarse.base_width;
  return c;
}

UNetConfig PipelineConfig::refine_net() const {
  UNetConfig c;
  c.in_channels = 2;
  c.out_channels = 2;
  c.levels = refine.levels;
  c.base_width = refine.base_width;
  return c;
}

PatchSpec PipelineConfig::patch_spec() const {
  PatchSpec spec;
  spec.dims = refine.patch_dims;
  spec.patches_per_organ = refine.patches_per_organ;
  spec.fill_value = 0.0f;
  return spec;
}

std::string PipelineConfig::to_json() const {
  json j;
  j["coarse"] = {{"target_spacing", spacing_json(coarse.target_spacing)},
                 {"target_dims", dims_json(coarse.target_dims)},
                 {"epochs", coarse.epochs},
                 {"lr", coarse.lr},
                 {"batch", coarse.batch},
                 {"levels", coarse.levels},
                 {"base_width", coarse.base_width}};
  j["refine"] = {{"patch_dims", dims_json(refine.patch_dims)},
                 {"patches_per_organ", refine.patches_per_organ},
                 {"epochs", refine.epochs},
                 {"lr", refine.lr},
                 {"batch", refine.batch},
                 {"levels", refine.levels},
                 {"base_width", refine.base_width}};
  j["seed"] = seed;
  j["window"] = json::array({window_lo, window_hi});
  j["largest_component"] = largest_component;
  j["paths"] = {{"data", data_dir}, {"work", work_dir}};
  return j.dump(2) + "\n";
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  PipelineConfig c;
  try {
    const json j = json::parse(text);
    if (j.contains("coarse")) {
      const json& k = j.at("coarse");
      if (k.contains("target_spacing")) c.coarse.target_spacing = spacing_from(k.at("target_spacing"));
      if (k.contains("target_dims")) c.coarse.target_dims = dims_from(k.at("target_dims"));
      maybe(k, "epochs", c.coarse.epochs);
      maybe(k, "lr", c.coarse.lr);
      maybe(k, "batch", c.coarse.batch);
      maybe(k, "levels", c.coarse.levels);
      maybe(k, "base_width", c.coarse.base_width);
    }
    if (j.contains("refine")) {
      const json& k = j.at("refine");
      if (k.contains("patch_dims")) c.refine.patch_dims = dims_from(k.at("patch_dims"));
      maybe(k, "patches_per_organ", c.refine.patches_per_organ);
      maybe(k, "epochs", c.refine.epochs);
      maybe(k, "lr", c.refine.lr);
      maybe(k, "batch", c.refine.batch);
      maybe(k, "levels", c.refine.levels);
      maybe(k, "base_width", c.refine.base_width);
    }
    maybe(j, "seed", c.seed);
    if (j.contains("window")) {
      c.window_lo = j.at("window").at(0).get<double>();
      c.window_hi = j.at("window").at(1).get<double>();
    }
    maybe(j, "largest_component", c.largest_component);
    if (j.contains("paths")) {
      maybe(j.at("paths"), "data", c.data_dir);
      maybe(j.at("paths"), "work", c.work_dir);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void PipelineConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write config " + path.string());
  out << to_json();
}

std::uint64_t PipelineConfig::patch_seed() const { return SeededRng(seed, kPatchSampling).derive_seed(0); }

PipelineConfig PipelineConfig::toy() {
  PipelineConfig c;
  c.coarse.target_spacing = {4.0, 4.0, 8.0};
  c.coarse.target_dims = {48, 48, 24};
  c.coarse.epochs = 40;
  c.coarse.lr = 3e-3;
  c.coarse.levels = 3;
  c.coarse.base_width = 8;
  c.refine.patch_dims = {32, 32, 16};
  c.refine.patches_per_organ = 20;
  c.refine.epochs = 5;
  c.refine.lr = 2e-3;
  c.refine.levels = 3;
  c.refine.base_width = 8;
  c.seed = 2024;
  return c;
}

// ---------------------------------------------------------------------------

std::vector<FoldSplit> make_folds(std::span<const std::string> ids, std::uint64_t seed, int folds) {
  if (folds < 2) fail(ErrorCode::kInvalidArgument, "need at least two folds");
  if (static_cast<int>(ids.size()) < folds)
    fail(ErrorCode::kInvalidArgument, "need at least " + std::to_string(folds) + " cases for cross-validation");
  std::vector<std::string> order(ids.begin(), ids.end());
  SeededRng rng(seed, kFoldShuffle);
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);

  const std::size_t n = order.size();
  const auto k = static_cast<std::size_t>(folds);
  std::vector<FoldSplit> out(k);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    out[f].fold = static_cast<int>(f);
    for (std::size_t i = 0; i < n; ++i)
      (i >= start && i < start + size ? out[f].val : out[f].train).push_back(order[i]);
    start += size;
  }
  return out;
}

std::string folds_to_json(std::span<const FoldSplit> folds) {
  json j = json::array();
  for (const FoldSplit& f : folds) j.push_back({{"fold", f.fold}, {"train", f.train}, {"val", f.val}});
  return j.dump(2) + "\n";
}

std::vector<FoldSplit> folds_from_json(const std::string& text) {
  std::vector<FoldSplit> out;
  try {
    for (const json& f : json::parse(text))
      out.push_back({f.at("fold").get<int>(), f.at("train").get<std::vector<std::string>>(),
                     f.at("val").get<std::vector<std::string>>()});
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed folds file: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------

CoarseCase preprocess_case(const std::string& id, const ImageVolume& raw, const LabelVolume* gt,
                           const PipelineConfig& config) {
  CoarseCase c;
  c.id = id;
  c.native_spacing = raw.spacing;
  c.native_dims = raw.dims;
  const ImageVolume norm = normalize_intensity(raw, config.window_lo, config.window_hi);
  const ImageVolume res = resample(norm, config.coarse.target_spacing, Interp::kTrilinear);
  std::tie(c.input, c.record) = pad_crop(res, config.coarse.target_dims, 0.0f);
  if (gt) {
    if (!(gt->dims == raw.dims)) fail(ErrorCode::kShapeMismatch, "image and label dims differ for " + id);
    const LabelVolume lres = resample(*gt, config.coarse.target_spacing);
    c.labels = pad_crop(lres, config.coarse.target_dims, std::uint8_t{0}).first;
    c.has_labels = true;
  }
  return c;
}

std::string TrainHistory::to_tsv() const {
  std::ostringstream out;
  out.precision(9);
  out << "epoch\ttrain_loss\tval_loss\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e)
    out << e << '\t' << train_loss[e] << '\t' << (e < val_loss.size() ? val_loss[e] : train_loss[e]) << '\n';
  return out.str();
}

namespace {

Shape volume_shape(Index batch, Index channels, Dims d) { return {batch, channels, d.z, d.y, d.x}; }

void copy_into(Tensor<float>& t, Index b, Index c, const Eigen::ArrayXf& src) {
  std::copy(src.data(), src.data() + src.size(), t.channel(b, c));
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(seed, stream);
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  return order;
}

struct CoarseBatch {
  Tensor<float> input;
  Tensor<float> target;
};

CoarseBatch coarse_batch(std::span<const CoarseCase> cases, std::span<const std::size_t> picks) {
  const Dims d = cases[picks[0]].input.dims;
  const auto n = static_cast<Index>(picks.size());
  CoarseBatch b{Tensor<float>(volume_shape(n, 1, d)), Tensor<float>(volume_shape(n, kNumClasses, d))};
  for (Index i = 0; i < n; ++i) {
    const CoarseCase& c = cases[picks[static_cast<std::size_t>(i)]];
    if (!c.has_labels) fail(ErrorCode::kInvalidArgument, "training case " + c.id + " has no labels");
    if (!(c.input.dims == d)) fail(ErrorCode::kShapeMismatch, "coarse cases must share the coarse grid");
    copy_into(b.input, i, 0, c.input.voxels);
    b.target.sample(i) = onehot<float>(c.labels, kNumClasses).sample(0);
  }
  return b;
}

double coarse_eval_loss(const UNetConfig& net, const NetworkParams<float>& params, std::span<const CoarseCase> cases) {
  double total = 0.0;
  const ClassWeights w = ClassWeights::uniform(kNumClasses);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const std::size_t pick[1] = {i};
    const CoarseBatch b = coarse_batch(cases, pick);
    total += msdl(softmax_channels(forward(net, params, b.input)), b.target, w);
  }
  return total / static_cast<double>(cases.size());
}

struct RefineBatch {
  Tensor<float> input;
  Tensor<float> target;
};

RefineBatch refine_batch(const PatchStore& store, std::span<const std::size_t> picks) {
  const auto n = static_cast<Index>(picks.size());
  RefineBatch b{Tensor<float>(volume_shape(n, 2, store.dims)), Tensor<float>(volume_shape(n, 1, store.dims))};
  for (Index i = 0; i < n; ++i) {
    const PatchSample& s = store.samples[picks[static_cast<std::size_t>(i)]];
    if (s.label.size() != store.dims.count())
      fail(ErrorCode::kInvalidArgument, "refine training patches need labels");
    copy_into(b.input, i, 0, s.intensity);
    copy_into(b.input, i, 1, s.prior);
    copy_into(b.target, i, 0, s.label);
  }
  return b;
}

double refine_eval_loss(const UNetConfig& net, const NetworkParams<float>& params, const PatchStore& store,
                        int batch) {
  double total = 0.0;
  int batches = 0;
  std::vector<std::size_t> picks;
  for (std::size_t start = 0; start < store.samples.size(); start += static_cast<std::size_t>(batch)) {
    picks.clear();
    for (std::size_t i = start; i < std::min(store.samples.size(), start + static_cast<std::size_t>(batch)); ++i)
      picks.push_back(i);
    const RefineBatch b = refine_batch(store, picks);
    total += binary_dice_loss(softmax_channels(forward(net, params, b.input)), b.target);
    ++batches;
  }
  return total / batches;
}

template <typename MakeBatch, typename LossGrad, typename EvalLoss>
TrainResult run_training(const UNetConfig& net, double lr, int epochs, int batch, std::size_t sample_count,
                         std::uint64_t seed, std::uint64_t init_stream, std::uint64_t shuffle_stream,
                         const char* stage, MakeBatch&& make_batch, LossGrad&& loss_grad, EvalLoss&& eval_loss,
                         TrainHistory& history) {
  SeededRng init_rng(seed, init_stream);
  NetworkParams<float> params = init_params<float>(net, init_rng);
  AdamHyper hyper;
  hyper.lr = lr;
  AdamState<float> adam = AdamState<float>::init(params, hyper);
  TrainResult result;
  result.checkpoint = {net, 0, params};
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> picks;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = shuffled(sample_count, seed, shuffle_stream + static_cast<std::uint64_t>(epoch));
    double sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
      picks.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + static_cast<std::size_t>(batch))));
      auto [input, target] = make_batch(std::span<const std::size_t>(picks));
      ForwardTrace<float> trace;
      const Tensor<float> logits = forward(net, params, input, Mode::kTrain, &trace);
      const Tensor<float> probs = softmax_channels(logits);
      if (!probs.data().allFinite())
        fail(ErrorCode::kDivergence, std::string(stage) + " training diverged at epoch " + std::to_string(epoch));
      auto [loss, grad] = loss_grad(probs, target);
      if (!std::isfinite(loss))
        fail(ErrorCode::kDivergence, std::string(stage) + " training diverged at epoch " + std::to_string(epoch));
      const NetworkParams<float> grads = backward(net, params, trace, grad);
      adam_step(params, grads, adam);
      sum += loss;
      ++steps;
    }
    history.train_loss.push_back(sum / steps);
    for (const auto& e : params.entries())
      if (!e.value.allFinite())
        fail(ErrorCode::kDivergence, std::string(stage) + " parameter " + e.name + " is not finite");
    const double val = eval_loss(params);
    const double selection = std::isnan(val) ? history.train_loss.back() : val;
    if (!std::isfinite(selection))
      fail(ErrorCode::kDivergence, std::string(stage) + " validation loss is not finite");
    history.val_loss.push_back(selection);
    if (selection < best) {
      best = selection;
      history.best_epoch = epoch;
      result.checkpoint = {net, adam.step, params};
    }
  }
  result.history = history;
  return result;
}

}  // namespace

TrainResult train_coarse(const PipelineConfig& config, std::span<const CoarseCase> train,
                         std::span<const CoarseCase> val) {
  config.validate();
  if (train.empty()) fail(ErrorCode::kEmptyInput, "coarse training set is empty");
  const UNetConfig net = config.coarse_net();
  const ClassWeights weights = ClassWeights::uniform(kNumClasses);
  TrainHistory history;
  return run_training(
      net, config.coarse.lr, config.coarse.epochs, config.coarse.batch, train.size(), config.seed, kCoarseInit,
      kCoarseShuffle, "coarse",
      [&](std::span<const std::size_t> picks) {
        CoarseBatch b = coarse_batch(train, picks);
        return std::pair{std::move(b.input), std::move(b.target)};
      },
      [&](const Tensor<float>& probs, const Tensor<float>& target) {
        return std::pair{msdl(probs, target, weights), msdl_grad(probs, target, weights)};
      },
      [&](const NetworkParams<float>& params) {
        return val.empty() ? std::nan("") : coarse_eval_loss(net, params, val);
      },
      history);
}

LabelVolume coarse_forward(const Checkpoint& coarse, const CoarseCase& c) {
  const Tensor<float> input(volume_shape(1, 1, c.input.dims), c.input.voxels);
  const Tensor<float> logits = forward(coarse.config, coarse.params, input);
  LabelVolume out(c.input.dims, c.input.spacing);
  out.voxels = argmax_channels(logits, 0);
  return out;
}

LabelVolume predict_coarse(const Checkpoint& coarse, const CoarseCase& c) {
  if (coarse.config.in_channels != 1 || coarse.config.out_channels != kNumClasses)
    fail(ErrorCode::kCheckpointMismatch, "coarse checkpoint must map 1 channel to 14 classes");
  return restore_native(coarse_forward(coarse, c), c.record, c.native_spacing, c.native_dims);
}

RefineCase make_refine_case(const std::string& id, const ImageVolume& raw, const LabelVolume& gt,
                            const LabelVolume& coarse_native, const PipelineConfig& config) {
  if (!(gt.dims == raw.dims) || !(coarse_native.dims == raw.dims))
    fail(ErrorCode::kShapeMismatch, "image, labels and coarse prediction must share the native grid for " + id);
  RefineCase c;
  c.id = id;
  c.image = normalize_intensity(raw, config.window_lo, config.window_hi);
  c.gt = gt;
  c.priors = extract_all_priors(coarse_native, {config.largest_component});
  return c;
}

TrainResult train_refine(const PipelineConfig& config, const PatchStore& train, const PatchStore* val) {
  config.validate();
  if (train.samples.empty()) fail(ErrorCode::kEmptyInput, "refine patch manifest is empty");
  if (!(train.dims == config.refine.patch_dims))
    fail(ErrorCode::kShapeMismatch, "patch store dims differ from configured patch dims");
  const UNetConfig net = config.refine_net();
  TrainHistory history;
  return run_training(
      net, config.refine.lr, config.refine.epochs, config.refine.batch, train.samples.size(), config.seed,
      kRefineInit, kRefineShuffle, "refine",
      [&](std::span<const std::size_t> picks) {
        for (std::size_t p : picks)
          ++history.organ_samples[static_cast<std::size_t>(train.samples[p].organ.value() - 1)];
        RefineBatch b = refine_batch(train, picks);
        return std::pair{std::move(b.input), std::move(b.target)};
      },
      [&](const Tensor<float>& probs, const Tensor<float>& target) {
        return std::pair{binary_dice_loss(probs, target), binary_dice_grad(probs, target)};
      },
      [&](const NetworkParams<float>& params) {
        return (val && !val->samples.empty()) ? refine_eval_loss(net, params, *val, config.refine.batch)
                                              : std::nan("");
      },
      history);
}

void check_checkpoint(const Checkpoint& ckpt, const UNetConfig& expected, const char* stage) {
  const UNetConfig& c = ckpt.config;
  if (c.in_channels != expected.in_channels || c.out_channels != expected.out_channels ||
      c.levels != expected.levels || c.base_width != expected.base_width)
    fail(ErrorCode::kCheckpointMismatch, std::string(stage) + " checkpoint does not match the configured network");
}

LabelVolume refine_from_coarse(const Checkpoint& refine, const ImageVolume& image, const LabelVolume& coarse_native,
                               const PipelineConfig& config, int* patches) {
  if (refine.config.in_channels != 2 || refine.config.out_channels != 2)
    fail(ErrorCode::kCheckpointMismatch, "refine checkpoint must map 2 channels to 2 classes");
  if (!(image.dims == coarse_native.dims)) fail(ErrorCode::kShapeMismatch, "image and coarse prediction dims differ");
  const PatchSpec spec = config.patch_spec();
  const auto priors = extract_all_priors(coarse_native, {config.largest_component});
  FusionAccumulator acc(image.dims);
  const SeededRng base(config.seed, kInferSampling);
  int used = 0;
  const auto batch = static_cast<std::size_t>(config.refine.batch);
  std::vector<std::uint8_t> pred(static_cast<std::size_t>(spec.dims.count()));
  for (const OrganPrior& prior : priors) {
    if (!prior.present) continue;
    const OriginSample sample = sample_origins(prior, spec, image.dims,
                                               SeededRng(base.derive_seed(static_cast<std::uint64_t>(prior.organ.value()))));
    const auto& origins = sample.origins;
    for (std::size_t start = 0; start < origins.size(); start += batch) {
      const std::size_t n = std::min(batch, origins.size() - start);
      Tensor<float> input(volume_shape(static_cast<Index>(n), 2, spec.dims));
      for (std::size_t i = 0; i < n; ++i) {
        const PatchSample s = extract_patch(image, prior, nullptr, prior.organ, origins[start + i], spec);
        copy_into(input, static_cast<Index>(i), 0, s.intensity);
        copy_into(input, static_cast<Index>(i), 1, s.prior);
      }
      const Tensor<float> logits = forward(refine.config, refine.params, input);
      for (std::size_t i = 0; i < n; ++i) {
        const float* bg = logits.channel(static_cast<Index>(i), 0);
        const float* fg = logits.channel(static_cast<Index>(i), 1);
        for (std::size_t v = 0; v < pred.size(); ++v) pred[v] = fg[v] > bg[v] ? 1 : 0;
        acc.accumulate(prior.organ, origins[start + i], spec.dims, pred);
        ++used;
      }
    }
  }
  if (patches) *patches = used;
  return acc.majority_vote(image.spacing);
}

InferenceResult infer(const Checkpoint& coarse, const Checkpoint& refine, const ImageVolume& raw_image,
                      const PipelineConfig& config) {
  config.validate();
  check_checkpoint(coarse, config.coarse_net(), "coarse");
  check_checkpoint(refine, config.refine_net(), "refine");
  InferenceResult r;
  const CoarseCase c = preprocess_case("", raw_image, nullptr, config);
  r.coarse = predict_coarse(coarse, c);
  const ImageVolume norm = normalize_intensity(raw_image, config.window_lo, config.window_hi);
  r.refined = refine_from_coarse(refine, norm, r.coarse, config, &r.patches);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::string, std::filesystem::path> nifti_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::kIo, "not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    for (const char* ext : {".nii.gz", ".nii"}) {
      const std::string e(ext);
      if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
        out[name.substr(0, name.size() - e.size())] = entry.path();
        break;
      }
    }
  }
  return out;
}

}  // namespace

CohortReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                           std::vector<CaseScores>* per_case) {
  const auto preds = nifti_files(pred_dir);
  const auto gts = nifti_files(gt_dir);
  for (const auto& [id, path] : gts)
    if (!preds.count(id)) fail(ErrorCode::kUnmatchedCase, "no prediction for case " + id);
  for (const auto& [id, path] : preds)
    if (!gts.count(id)) fail(ErrorCode::kUnmatchedCase, "no ground truth for case " + id);
  std::vector<CaseScores> scores;
  for (const auto& [id, path] : gts)
    scores.push_back(evaluate_case(id, read_labels(preds.at(id)), read_labels(path)));
  if (per_case) *per_case = scores;
  return aggregate(scores);
}

void set_threads(int threads) { Eigen::setNbThreads(std::max(1, threads)); }

}  // namespace cfseg
