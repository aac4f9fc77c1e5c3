#include "polypseg/core.hpp"

#include <algorithm>
#include <stdexcept>

namespace polypseg {

std::vector<Region> connected_components(const cv::Mat& binary) {
  CV_Assert(binary.type() == CV_8UC1);
  const int rows = binary.rows;
  const int cols = binary.cols;

  std::vector<int> label(static_cast<size_t>(rows) * cols, -1);
  auto at = [&](int r, int c) -> int& { return label[static_cast<size_t>(r) * cols + c]; };

  std::vector<Region> regions;
  std::vector<cv::Point> stack;

  for (int r = 0; r < rows; ++r) {
    const uint8_t* row = binary.ptr<uint8_t>(r);
    for (int c = 0; c < cols; ++c) {
      if (row[c] == 0 || at(r, c) >= 0) continue;

      Region region;
      region.component_id = static_cast<int>(regions.size());
      region.bbox = {r, c, r + 1, c + 1};

      stack.clear();
      stack.emplace_back(c, r);
      at(r, c) = region.component_id;

      while (!stack.empty()) {
        const cv::Point p = stack.back();
        stack.pop_back();
        region.pixels.push_back(p);
        region.bbox.row_min = std::min(region.bbox.row_min, p.y);
        region.bbox.col_min = std::min(region.bbox.col_min, p.x);
        region.bbox.row_max = std::max(region.bbox.row_max, p.y + 1);
        region.bbox.col_max = std::max(region.bbox.col_max, p.x + 1);

        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const int nr = p.y + dr;
            const int nc = p.x + dc;
            if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
            if (binary.at<uint8_t>(nr, nc) == 0 || at(nr, nc) >= 0) continue;
            at(nr, nc) = region.component_id;
            stack.emplace_back(nc, nr);
          }
        }
      }

      region.area = static_cast<int>(region.pixels.size());
      regions.push_back(std::move(region));
    }
  }

  std::stable_sort(regions.begin(), regions.end(), [](const Region& a, const Region& b) {
    if (a.bbox.row_min != b.bbox.row_min) return a.bbox.row_min < b.bbox.row_min;
    return a.bbox.col_min < b.bbox.col_min;
  });
  for (size_t i = 0; i < regions.size(); ++i) regions[i].component_id = static_cast<int>(i);
  return regions;
}

void validate_sample(const Sample& sample) {
  if (sample.image.empty() || sample.mask.empty())
    throw std::invalid_argument("sample '" + sample.id + "': empty image or mask");
  if (sample.image.type() != CV_8UC3)
    throw std::invalid_argument("sample '" + sample.id + "': image must be 8UC3");
  if (sample.mask.type() != CV_8UC1)
    throw std::invalid_argument("sample '" + sample.id + "': mask must be 8UC1");
  if (sample.image.rows != sample.mask.rows || sample.image.cols != sample.mask.cols)
    throw std::invalid_argument("sample '" + sample.id + "': image and mask dimensions differ");
  for (int r = 0; r < sample.mask.rows; ++r) {
    const uint8_t* row = sample.mask.ptr<uint8_t>(r);
    for (int c = 0; c < sample.mask.cols; ++c) {
      if (row[c] > 1)
        throw std::invalid_argument("sample '" + sample.id + "': mask value " +
                                    std::to_string(row[c]) + " outside {0,1}");
    }
  }
}

bool mats_equal(const cv::Mat& a, const cv::Mat& b) {
  if (a.type() != b.type() || a.rows != b.rows || a.cols != b.cols) return false;
  if (a.empty()) return true;
  cv::Mat ac = a.isContinuous() ? a : a.clone();
  cv::Mat bc = b.isContinuous() ? b : b.clone();
  return std::memcmp(ac.data, bc.data, ac.total() * ac.elemSize()) == 0;
}

}  // namespace polypseg
