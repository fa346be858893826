#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cfseg/checkpoint.hpp"
#include "cfseg/metrics.hpp"
#include "cfseg/patch.hpp"
#include "cfseg/prior.hpp"
#include "cfseg/volume.hpp"

namespace cfseg {

struct CoarseStageConfig {
  Spacing target_spacing{2.0, 2.0, 6.0};
  Dims target_dims{168, 168, 64};
  int epochs = 100;
  double lr = 1e-4;
  int batch = 1;
  int levels = 4;
  int base_width = 16;
};

struct RefineStageConfig {
  Dims patch_dims{128, 128, 64};
  int patches_per_organ = 50;
  int epochs = 5;
  double lr = 1e-4;
  int batch = 2;
  int levels = 4;
  int base_width = 16;
};

/// Every constant of the method is a default here and can be overridden from
/// the JSON config file.
struct PipelineConfig {
  CoarseStageConfig coarse;
  RefineStageConfig refine;
  std::uint64_t seed = 0;
  double window_lo = -175.0;
  double window_hi = 250.0;
  bool largest_component = false;
  std::string data_dir;
  std::string work_dir;

  void validate() const;
  UNetConfig coarse_net() const;
  UNetConfig refine_net() const;
  PatchSpec patch_spec() const;

  std::string to_json() const;
  static PipelineConfig from_json(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Master seed of the patch manifest.
  std::uint64_t patch_seed() const;

  /// Desk-scale settings sized for the 96x96x48 phantom cohort.
  static PipelineConfig toy();
};

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldSplit {
  int fold = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
};

/// Shuffles once with `seed` and cuts the ids into `folds` validation blocks
/// (sizes differ by at most one); each fold trains on the remaining ids.
std::vector<FoldSplit> make_folds(std::span<const std::string> ids, std::uint64_t seed, int folds = 4);

std::string folds_to_json(std::span<const FoldSplit> folds);
std::vector<FoldSplit> folds_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Coarse stage

/// A case on the fixed coarse grid plus what is needed to map back.
struct CoarseCase {
  std::string id;
  ImageVolume input;    // normalized, resampled, padded/cropped
  LabelVolume labels;   // same grid; empty-dims when no ground truth
  bool has_labels = false;
  CropPadRecord record;
  Spacing native_spacing;
  Dims native_dims;
};

CoarseCase preprocess_case(const std::string& id, const ImageVolume& raw, const LabelVolume* gt,
                           const PipelineConfig& config);

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;  // -1 when no epoch ran
  std::array<long, kNumOrgans> organ_samples{};  // refine: patches consumed per organ

  /// Tab-separated epoch, train_loss, val_loss.
  std::string to_tsv() const;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
};

/// Batch-`batch` Adam on the weighted soft Dice loss; keeps the parameters of
/// the epoch with the lowest validation loss (earliest on ties). With no
/// validation cases the training loss is used for selection.
TrainResult train_coarse(const PipelineConfig& config, std::span<const CoarseCase> train,
                         std::span<const CoarseCase> val);

/// Coarse labels on the coarse grid.
LabelVolume coarse_forward(const Checkpoint& coarse, const CoarseCase& c);

/// Coarse prediction mapped back to the case's native grid.
LabelVolume predict_coarse(const Checkpoint& coarse, const CoarseCase& c);

// ---------------------------------------------------------------------------
// Refine stage

/// Native-grid refine input for one labelled case: normalized image, ground
/// truth and the 13 priors of its coarse prediction.
RefineCase make_refine_case(const std::string& id, const ImageVolume& raw, const LabelVolume& gt,
                            const LabelVolume& coarse_native, const PipelineConfig& config);

/// Single binary model over all organs' patches, foreground Dice loss.
TrainResult train_refine(const PipelineConfig& config, const PatchStore& train, const PatchStore* val);

struct InferenceResult {
  LabelVolume coarse;   // native grid
  LabelVolume refined;  // native grid, after majority-vote fusion
  int patches = 0;
};

/// Full two-stage inference on a raw (HU) image.
InferenceResult infer(const Checkpoint& coarse, const Checkpoint& refine, const ImageVolume& raw_image,
                      const PipelineConfig& config);

/// Refine stage only, from an existing native-grid coarse prediction.
LabelVolume refine_from_coarse(const Checkpoint& refine, const ImageVolume& normalized_image,
                               const LabelVolume& coarse_native, const PipelineConfig& config, int* patches = nullptr);

// ---------------------------------------------------------------------------
// Evaluation over directories of NIfTI label files matched by file name.

CohortReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                           std::vector<CaseScores>* per_case = nullptr);

/// Checks a checkpoint against the stage it is used for.
void check_checkpoint(const Checkpoint& ckpt, const UNetConfig& expected, const char* stage);

/// Eigen GEMM thread count (1 gives bit-reproducible results).
void set_threads(int threads);

}  // namespace cfseg
