#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace polypseg {

/// Axis-aligned box in pixel coordinates, rows/cols half-open:
/// [row_min, row_max) x [col_min, col_max).
struct Bbox {
  int row_min = 0;
  int col_min = 0;
  int row_max = 0;
  int col_max = 0;

  int height() const { return row_max - row_min; }
  int width() const { return col_max - col_min; }
  long long area() const { return static_cast<long long>(height()) * width(); }
  bool empty() const { return height() <= 0 || width() <= 0; }

  bool contains(int row, int col) const {
    return row >= row_min && row < row_max && col >= col_min && col < col_max;
  }

  bool operator==(const Bbox&) const = default;
};

/// An image paired with its pixel-wise label map.
/// image: 8UC3 (OpenCV BGR order, used consistently end-to-end),
/// mask:  8UC1 with values in {0, 1} (1 = polyp).
struct Sample {
  std::string id;
  cv::Mat image;
  cv::Mat mask;
};

enum class PatchLabel : int { background = 0, polyp = 1 };

/// A crop of a source image together with its binary patch label.
struct Patch {
  cv::Mat image;  // h x w x 3, h = bbox.height(), w = bbox.width()
  PatchLabel label = PatchLabel::background;
  Bbox source_bbox;
  std::string source_id;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

/// One 8-connected foreground component of a binary label map.
struct Region {
  int component_id = 0;
  std::vector<cv::Point> pixels;  // (x=col, y=row), unique, scan order
  Bbox bbox;                      // tight enclosure of pixels
  int area = 0;                   // == pixels.size()
};

/// 8-connected components of a binary 8UC1 map (any nonzero pixel is
/// foreground). Regions are ordered by (bbox.row_min, bbox.col_min).
std::vector<Region> connected_components(const cv::Mat& binary);

/// Throws std::invalid_argument when image/mask shapes disagree or the mask
/// contains values outside {0, 1}.
void validate_sample(const Sample& sample);

/// True when the two mats have identical type, dims and bytes.
bool mats_equal(const cv::Mat& a, const cv::Mat& b);

}  // namespace polypseg
