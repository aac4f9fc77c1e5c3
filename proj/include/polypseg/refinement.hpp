#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "polypseg/core.hpp"
#include "polypseg/models.hpp"

namespace polypseg::refinement {

struct RefinementConfig {
  double decision_threshold = 0.5;  // keep regions with prob >= threshold
  double bbox_margin_frac = 0.0;    // crop expansion per side
  int min_area_px = 0;              // smaller regions are removed outright

  void validate() const;
};

/// One Region per 8-connected foreground component, ordered by
/// (row_min, col_min). Empty map yields an empty list.
std::vector<Region> extract_regions(const cv::Mat& label_map);

/// Crop of the region's bounding box expanded by margin_frac per side and
/// clipped to the image bounds.
cv::Mat crop_region(const cv::Mat& image, const Region& region, double margin_frac);

/// Batched patch scorer: crops in, polyp probabilities out (same order).
using PatchScorer = std::function<std::vector<double>(const std::vector<cv::Mat>&)>;

struct RegionDecision {
  Bbox bbox;
  int area = 0;
  double prob = std::numeric_limits<double>::quiet_NaN();  // NaN when not classified
  bool kept = false;
};

struct RefinementReport {
  std::vector<RegionDecision> regions;  // deterministic region order
};

/// Classifies every candidate region of the label map and zeroes the pixels
/// of regions scored below the decision threshold (region-atomic removal)
/// or smaller than min_area_px. Output foreground is always a subset of the
/// input foreground.
std::pair<cv::Mat, RefinementReport> refine(const cv::Mat& label_map, const cv::Mat& image,
                                            const PatchScorer& scorer,
                                            const RefinementConfig& cfg = {});

/// Scorer backed by a trained patch classifier: crops are aspect-preserving
/// resized and zero-padded to `input_size`, then scored in one batch.
PatchScorer make_classifier_scorer(models::PatchClassifier classifier, cv::Size input_size);

/// JSON-lines report: one record per region
/// {"image_id":..,"bbox":[r0,c0,r1,c1],"area":..,"prob":..,"kept":..}.
void append_report_jsonl(std::ostream& out, const std::string& image_id,
                         const RefinementReport& report);

}  // namespace polypseg::refinement
