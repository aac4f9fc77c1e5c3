#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "polypseg/core.hpp"
#include "polypseg/datasets.hpp"
#include "polypseg/models.hpp"

namespace polypseg::training {

/// Deterministic seed derivation: one global seed plus a purpose tag and
/// indices give independent per-task streams.
uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t a = 0, uint64_t b = 0);

struct LossBatch {
  torch::Tensor predictions;  // BCE: probabilities; CE: per-pixel logits
  torch::Tensor targets;      // BCE: {0,1} floats; CE: class indices
};

/// -(1/N) sum [t*log(p) + (1-t)*log(1-p)] with p clamped to [1e-7, 1-1e-7].
torch::Tensor bce_loss(const LossBatch& batch);

/// Numerically stable softmax over `dim` (max subtraction).
torch::Tensor softmax_probs(const torch::Tensor& logits, int64_t dim = -1);

/// Sparse cross entropy over logits of shape (B,C) or (B,C,H,W) against
/// integer targets, averaged over every scored element; computed in
/// log-sum-exp form.
torch::Tensor ce_loss(const LossBatch& batch);

enum class OptimizerKind { sgd_momentum, adam_amsgrad };
enum class LrSchedule { constant, cosine_decay };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::adam_amsgrad;
  double lr = 1e-4;
  double momentum = 0.9;  // sgd only
  LrSchedule schedule = LrSchedule::constant;
  int epochs = 1;
  int batch_size = 24;

  void validate() const;
};

/// constant: lr. cosine_decay: lr * 0.5 * (1 + cos(pi * epoch / epochs)).
double lr_at(const OptimizerSpec& spec, int epoch);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_metric = 0.0;  // polyp IoU (segmentation) / accuracy (classification)
  double val_metric = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  void save_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  std::filesystem::path init_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
  std::filesystem::path history_csv;
  TrainHistory history;
  double best_val_metric = 0.0;
};

/// Minimizes ce_loss with per-epoch shuffled minibatches; records polyp IoU
/// on the validation split each epoch; saves <tag>_init/<tag>_best/
/// <tag>_final checkpoints under run_dir/checkpoints and the history under
/// run_dir/histories. Deterministic for a fixed seed (single-threaded).
TrainResult train_segmentation(models::FcnSegmenter model, const DatasetSplit& data,
                               const OptimizerSpec& spec, const datasets::AugmentConfig& aug,
                               uint64_t seed, const std::filesystem::path& run_dir,
                               const std::string& tag);

/// Minimizes bce_loss over class-balanced minibatches (minority class is
/// oversampled with replacement per epoch); records validation accuracy.
/// Augmentation is applied to training patches when `aug` is provided.
TrainResult train_classifier(models::PatchClassifier model, const std::vector<Patch>& train_patches,
                             const std::vector<Patch>& val_patches, const OptimizerSpec& spec,
                             const std::optional<datasets::AugmentConfig>& aug, uint64_t seed,
                             const std::filesystem::path& run_dir, const std::string& tag);

enum class Scheme { s0_baseline, scheme1, scheme2, scheme1_extended };

Scheme scheme_from_string(const std::string& s);
std::string to_string(Scheme scheme);

/// Full declarative description of one training run.
struct ExperimentConfig {
  Scheme scheme = Scheme::scheme1;
  std::filesystem::path dataset_root;
  datasets::DatasetLayout dataset_layout = datasets::DatasetLayout::generic;
  cv::Size input_size{320, 320};             // segmentation network
  cv::Size classifier_input_size{224, 224};  // patch classifier
  std::filesystem::path pretrained_path;
  uint64_t seed = 0;
  double epoch_scale = 1.0;
  OptimizerSpec fcn_opt{OptimizerKind::adam_amsgrad, 1e-4, 0.9, LrSchedule::constant, 500, 24};
  OptimizerSpec cnn_opt{OptimizerKind::sgd_momentum, 1e-3, 0.9, LrSchedule::cosine_decay, 250, 24};
  datasets::AugmentConfig augment;
  bool augment_patches = true;
  int bg_patches_per_image = 2;
  std::filesystem::path output_dir;

  /// Epoch count after applying epoch_scale, never below 1.
  int scaled_epochs(const OptimizerSpec& opt) const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

struct StageArtifact {
  std::string name;  // S0..S4, C1..C3, C2b
  std::filesystem::path init_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
  std::filesystem::path history_csv;
};

struct SchemeResult {
  std::vector<StageArtifact> stages;
  const StageArtifact* find(const std::string& name) const;
};

/// Executes the requested weight-circulation scheme:
///   s0_baseline:      S0 (random init FCN)
///   scheme1:          S1 (FCN <- pretrained), C2 (CNN <- S1), S3 (FCN <- C2)
///   scheme2:          C1 (CNN <- pretrained), S2 (FCN <- C1), C3 (CNN <- S2)
///   scheme1_extended: scheme1 then C2b (CNN <- S3), S4 (FCN <- C2b)
/// Transfers carry the donor stage's best-validation backbone (parameters
/// and normalization statistics); task heads are freshly re-initialized at
/// every stage. Artifacts land under cfg.output_dir, and a stage manifest is
/// written to reports/stages.json.
SchemeResult run_scheme(Scheme scheme, const DatasetSplit& data, const ExperimentConfig& cfg);

/// Classifier training data derived from a dataset split: one polyp patch
/// per mask component plus `bg_per_image` background crops per image.
struct PatchSets {
  std::vector<Patch> train;
  std::vector<Patch> val;
};
PatchSets make_patch_sets(const DatasetSplit& data, int bg_per_image, uint64_t seed);

/// Polyp IoU of the model over a sample list at the model input size.
double validation_polyp_iou(models::FcnSegmenter model, const std::vector<Sample>& samples,
                            cv::Size input_size);

/// Tensor conversion used across training/eval: BGR 8U image to CHW float
/// in [-1, 1]; mask to int64 class map.
torch::Tensor to_input_tensor(const cv::Mat& bgr);
torch::Tensor to_target_tensor(const cv::Mat& mask);

}  // namespace polypseg::training
