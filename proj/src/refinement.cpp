#include "polypseg/refinement.hpp"

#include <stdexcept>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "polypseg/datasets.hpp"

namespace polypseg::refinement {

void RefinementConfig::validate() const {
  if (decision_threshold <= 0.0 || decision_threshold >= 1.0)
    throw std::invalid_argument("decision_threshold must lie in (0,1)");
  if (bbox_margin_frac < 0.0) throw std::invalid_argument("bbox_margin_frac must be >= 0");
  if (min_area_px < 0) throw std::invalid_argument("min_area_px must be >= 0");
}

std::vector<Region> extract_regions(const cv::Mat& label_map) {
  return connected_components(label_map);
}

cv::Mat crop_region(const cv::Mat& image, const Region& region, double margin_frac) {
  const int margin_rows = static_cast<int>(std::lround(region.bbox.height() * margin_frac));
  const int margin_cols = static_cast<int>(std::lround(region.bbox.width() * margin_frac));
  const int r0 = std::max(0, region.bbox.row_min - margin_rows);
  const int c0 = std::max(0, region.bbox.col_min - margin_cols);
  const int r1 = std::min(image.rows, region.bbox.row_max + margin_rows);
  const int c1 = std::min(image.cols, region.bbox.col_max + margin_cols);
  return image(cv::Rect(c0, r0, c1 - c0, r1 - r0)).clone();
}

std::pair<cv::Mat, RefinementReport> refine(const cv::Mat& label_map, const cv::Mat& image,
                                            const PatchScorer& scorer,
                                            const RefinementConfig& cfg) {
  cfg.validate();
  if (label_map.rows != image.rows || label_map.cols != image.cols)
    throw std::invalid_argument("refine: label map and image dimensions differ");

  const auto regions = extract_regions(label_map);

  std::vector<cv::Mat> crops;
  std::vector<size_t> crop_region_index;
  for (size_t i = 0; i < regions.size(); ++i) {
    if (regions[i].area < cfg.min_area_px) continue;
    crops.push_back(crop_region(image, regions[i], cfg.bbox_margin_frac));
    crop_region_index.push_back(i);
  }

  std::vector<double> probs;
  if (!crops.empty()) {
    probs = scorer(crops);
    if (probs.size() != crops.size())
      throw std::runtime_error("patch scorer returned wrong number of probabilities");
  }

  RefinementReport report;
  report.regions.resize(regions.size());
  for (size_t i = 0; i < regions.size(); ++i) {
    report.regions[i].bbox = regions[i].bbox;
    report.regions[i].area = regions[i].area;
    report.regions[i].kept = false;
  }
  for (size_t k = 0; k < crop_region_index.size(); ++k) {
    auto& decision = report.regions[crop_region_index[k]];
    decision.prob = probs[k];
    decision.kept = probs[k] >= cfg.decision_threshold;
  }

  cv::Mat refined = label_map.clone();
  for (size_t i = 0; i < regions.size(); ++i) {
    if (report.regions[i].kept) continue;
    for (const auto& p : regions[i].pixels) refined.at<uint8_t>(p) = 0;
  }
  return {refined, std::move(report)};
}

PatchScorer make_classifier_scorer(models::PatchClassifier classifier, cv::Size input_size) {
  return [classifier, input_size](const std::vector<cv::Mat>& crops) mutable {
    std::vector<double> probs;
    if (crops.empty()) return probs;

    auto batch = torch::empty({static_cast<int64_t>(crops.size()), 3, input_size.height,
                               input_size.width});
    for (size_t i = 0; i < crops.size(); ++i) {
      const cv::Mat boxed =
          datasets::letterbox(crops[i], input_size, cv::INTER_LINEAR, /*pad_value=*/0);
      cv::Mat as_float;
      boxed.convertTo(as_float, CV_32FC3, 1.0 / 127.5, -1.0);
      auto view = torch::from_blob(as_float.data, {input_size.height, input_size.width, 3},
                                   torch::kFloat32);
      batch[static_cast<int64_t>(i)] = view.permute({2, 0, 1});
    }

    torch::InferenceMode guard;
    classifier->eval();
    auto p = classifier->probability(batch).to(torch::kFloat64);
    probs.resize(crops.size());
    for (size_t i = 0; i < crops.size(); ++i) probs[i] = p[static_cast<int64_t>(i)].item<double>();
    return probs;
  };
}

void append_report_jsonl(std::ostream& out, const std::string& image_id,
                         const RefinementReport& report) {
  for (const auto& region : report.regions) {
    nlohmann::json j;
    j["image_id"] = image_id;
    j["bbox"] = {region.bbox.row_min, region.bbox.col_min, region.bbox.row_max,
                 region.bbox.col_max};
    j["area"] = region.area;
    if (std::isnan(region.prob))
      j["prob"] = nullptr;
    else
      j["prob"] = region.prob;
    j["kept"] = region.kept;
    out << j.dump() << "\n";
  }
}

}  // namespace polypseg::refinement
