#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace polypseg::metrics {

/// Per-class pixel tallies. For each class c: TP/FP/FN/TN sum to the total
/// number of scored pixels. Counts merge associatively, so per-image counts
/// sum to dataset counts.
struct ConfusionCounts {
  explicit ConfusionCounts(int num_classes);

  int num_classes = 0;
  std::vector<int64_t> tp, fp, fn, tn;

  ConfusionCounts& merge(const ConfusionCounts& other);
  int64_t total() const;
};

/// Exact per-class tallies for two class maps (8UC1, values < num_classes).
ConfusionCounts pixel_confusion(const cv::Mat& pred, const cv::Mat& gt, int num_classes);

/// TP/(TP+FP+FN). A class absent from both prediction and ground truth has
/// an empty denominator and scores 1.0; absent from only one side scores 0.
double class_iou(const ConfusionCounts& counts, int c);
double class_dice(const ConfusionCounts& counts, int c);
double mean_iou(const ConfusionCounts& counts);
double mean_dice(const ConfusionCounts& counts);
double pixel_accuracy(const ConfusionCounts& counts);

/// Standard accuracy (TP+TN)/all over binary decision vectors.
double classification_accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

/// TP/(TP+FP) evaluated literally; 0.0 when there are no positive
/// predictions. Reported alongside classification_accuracy.
double paper_precision(const std::vector<int>& preds, const std::vector<int>& labels);

enum class MatchRule { any_overlap, iou_at };

/// Component-count matching between predicted and ground-truth blobs.
/// A predicted component counts as TP when it has qualifying overlap with
/// some GT component (>= 1 shared pixel for any_overlap, component-pair IoU
/// >= tau for iou_at) and as FP otherwise; GT components with no qualifying
/// prediction count as FN. No bipartite exclusivity: one GT component may
/// satisfy several predictions.
struct ObjectCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  std::string matching_rule;
};

ObjectCounts object_counts(const cv::Mat& pred, const cv::Mat& gt,
                           MatchRule rule = MatchRule::any_overlap, double iou_tau = 0.5);

/// One evaluation row, per image or aggregate.
struct EvalRow {
  std::string image_id;
  double iou_polyp = 0.0;
  double dice_polyp = 0.0;
  double iou_bg = 0.0;
  double mean_iou = 0.0;
  double pixel_acc = 0.0;
};

EvalRow eval_row_from_counts(const std::string& id, const ConfusionCounts& counts);

/// CSV with one row per image plus `micro` (dataset-merged counts) and
/// `macro` (unweighted mean of per-image rows) summary rows.
void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows,
                    const EvalRow& micro, const EvalRow& macro);

/// CSV mirroring the object-level TP/FP/FN table: one row per model tag.
void write_objects_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, ObjectCounts>>& rows);

}  // namespace polypseg::metrics
