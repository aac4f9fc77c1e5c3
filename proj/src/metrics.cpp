#include "polypseg/metrics.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "polypseg/core.hpp"

namespace polypseg::metrics {

ConfusionCounts::ConfusionCounts(int num_classes_)
    : num_classes(num_classes_),
      tp(num_classes_, 0),
      fp(num_classes_, 0),
      fn(num_classes_, 0),
      tn(num_classes_, 0) {
  if (num_classes_ < 2) throw std::invalid_argument("need at least 2 classes");
}

ConfusionCounts& ConfusionCounts::merge(const ConfusionCounts& other) {
  if (other.num_classes != num_classes)
    throw std::invalid_argument("cannot merge counts with different class counts");
  for (int c = 0; c < num_classes; ++c) {
    tp[c] += other.tp[c];
    fp[c] += other.fp[c];
    fn[c] += other.fn[c];
    tn[c] += other.tn[c];
  }
  return *this;
}

int64_t ConfusionCounts::total() const { return tp[0] + fp[0] + fn[0] + tn[0]; }

ConfusionCounts pixel_confusion(const cv::Mat& pred, const cv::Mat& gt, int num_classes) {
  if (pred.type() != CV_8UC1 || gt.type() != CV_8UC1)
    throw std::invalid_argument("class maps must be 8UC1");
  if (pred.rows != gt.rows || pred.cols != gt.cols)
    throw std::invalid_argument("pixel_confusion: shape mismatch");

  ConfusionCounts counts(num_classes);
  std::vector<int64_t> joint(static_cast<size_t>(num_classes) * num_classes, 0);
  for (int r = 0; r < pred.rows; ++r) {
    const uint8_t* p = pred.ptr<uint8_t>(r);
    const uint8_t* g = gt.ptr<uint8_t>(r);
    for (int c = 0; c < pred.cols; ++c) {
      if (p[c] >= num_classes || g[c] >= num_classes)
        throw std::invalid_argument("class index out of range in pixel_confusion");
      ++joint[static_cast<size_t>(g[c]) * num_classes + p[c]];
    }
  }
  const int64_t total = static_cast<int64_t>(pred.rows) * pred.cols;
  for (int c = 0; c < num_classes; ++c) {
    int64_t pred_c = 0, gt_c = 0;
    for (int k = 0; k < num_classes; ++k) {
      pred_c += joint[static_cast<size_t>(k) * num_classes + c];
      gt_c += joint[static_cast<size_t>(c) * num_classes + k];
    }
    counts.tp[c] = joint[static_cast<size_t>(c) * num_classes + c];
    counts.fp[c] = pred_c - counts.tp[c];
    counts.fn[c] = gt_c - counts.tp[c];
    counts.tn[c] = total - counts.tp[c] - counts.fp[c] - counts.fn[c];
  }
  return counts;
}

double class_iou(const ConfusionCounts& counts, int c) {
  const int64_t denom = counts.tp[c] + counts.fp[c] + counts.fn[c];
  if (denom == 0) return 1.0;  // class absent from both maps
  return static_cast<double>(counts.tp[c]) / static_cast<double>(denom);
}

double class_dice(const ConfusionCounts& counts, int c) {
  const int64_t denom = 2 * counts.tp[c] + counts.fp[c] + counts.fn[c];
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(counts.tp[c]) / static_cast<double>(denom);
}

double mean_iou(const ConfusionCounts& counts) {
  double sum = 0.0;
  for (int c = 0; c < counts.num_classes; ++c) sum += class_iou(counts, c);
  return sum / counts.num_classes;
}

double mean_dice(const ConfusionCounts& counts) {
  double sum = 0.0;
  for (int c = 0; c < counts.num_classes; ++c) sum += class_dice(counts, c);
  return sum / counts.num_classes;
}

double pixel_accuracy(const ConfusionCounts& counts) {
  const int64_t total = counts.total();
  if (total == 0) return 1.0;
  int64_t correct = 0;
  for (int c = 0; c < counts.num_classes; ++c) correct += counts.tp[c];
  return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

struct BinaryTallies {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

BinaryTallies tally(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty()) throw std::invalid_argument("empty prediction vector");
  if (preds.size() != labels.size())
    throw std::invalid_argument("prediction/label length mismatch");
  BinaryTallies t;
  for (size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] != 0;
    const bool l = labels[i] != 0;
    if (p && l) ++t.tp;
    else if (p && !l) ++t.fp;
    else if (!p && l) ++t.fn;
    else ++t.tn;
  }
  return t;
}

}  // namespace

double classification_accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  const auto t = tally(preds, labels);
  return static_cast<double>(t.tp + t.tn) / static_cast<double>(preds.size());
}

double paper_precision(const std::vector<int>& preds, const std::vector<int>& labels) {
  const auto t = tally(preds, labels);
  if (t.tp + t.fp == 0) return 0.0;
  return static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fp);
}

ObjectCounts object_counts(const cv::Mat& pred, const cv::Mat& gt, MatchRule rule,
                           double iou_tau) {
  if (pred.rows != gt.rows || pred.cols != gt.cols)
    throw std::invalid_argument("object_counts: shape mismatch");

  const auto pred_regions = connected_components(pred);
  const auto gt_regions = connected_components(gt);

  // Ground-truth component id per pixel, -1 for background.
  cv::Mat gt_id(gt.rows, gt.cols, CV_32SC1, cv::Scalar(-1));
  for (const auto& region : gt_regions)
    for (const auto& p : region.pixels) gt_id.at<int32_t>(p) = region.component_id;

  // Shared-pixel counts between each (pred, gt) component pair.
  std::vector<std::vector<int64_t>> overlap(pred_regions.size(),
                                            std::vector<int64_t>(gt_regions.size(), 0));
  for (const auto& region : pred_regions)
    for (const auto& p : region.pixels) {
      const int32_t id = gt_id.at<int32_t>(p);
      if (id >= 0) ++overlap[region.component_id][id];
    }

  auto qualifies = [&](size_t pi, size_t gi) {
    const int64_t inter = overlap[pi][gi];
    if (inter == 0) return false;
    if (rule == MatchRule::any_overlap) return true;
    const int64_t uni = pred_regions[pi].area + gt_regions[gi].area - inter;
    return static_cast<double>(inter) / static_cast<double>(uni) >= iou_tau;
  };

  ObjectCounts counts;
  counts.matching_rule = rule == MatchRule::any_overlap
                             ? "any_overlap"
                             : "iou_at_" + std::to_string(iou_tau);
  std::vector<bool> gt_matched(gt_regions.size(), false);
  for (size_t pi = 0; pi < pred_regions.size(); ++pi) {
    bool matched = false;
    for (size_t gi = 0; gi < gt_regions.size(); ++gi) {
      if (!qualifies(pi, gi)) continue;
      matched = true;
      gt_matched[gi] = true;
    }
    if (matched) ++counts.tp;
    else ++counts.fp;
  }
  for (size_t gi = 0; gi < gt_regions.size(); ++gi)
    if (!gt_matched[gi]) ++counts.fn;
  return counts;
}

EvalRow eval_row_from_counts(const std::string& id, const ConfusionCounts& counts) {
  EvalRow row;
  row.image_id = id;
  row.iou_polyp = class_iou(counts, 1);
  row.dice_polyp = class_dice(counts, 1);
  row.iou_bg = class_iou(counts, 0);
  row.mean_iou = mean_iou(counts);
  row.pixel_acc = pixel_accuracy(counts);
  return row;
}

namespace {

void write_row(std::ofstream& out, const EvalRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.image_id.c_str(),
                row.iou_polyp, row.dice_polyp, row.iou_bg, row.mean_iou, row.pixel_acc);
  out << buf;
}

}  // namespace

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows,
                    const EvalRow& micro, const EvalRow& macro) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "image_id,iou_polyp,dice_polyp,iou_bg,mean_iou,pixel_acc\n";
  for (const auto& row : rows) write_row(out, row);
  write_row(out, micro);
  write_row(out, macro);
}

void write_objects_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, ObjectCounts>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "model_tag,TP,FP,FN,matching_rule\n";
  for (const auto& [tag, counts] : rows)
    out << tag << "," << counts.tp << "," << counts.fp << "," << counts.fn << ","
        << counts.matching_rule << "\n";
}

}  // namespace polypseg::metrics
