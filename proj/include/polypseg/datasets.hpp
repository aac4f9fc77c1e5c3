#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "polypseg/core.hpp"

namespace polypseg::datasets {

enum class DatasetLayout { endoscene, kvasir, generic };

DatasetLayout layout_from_string(const std::string& s);
std::string to_string(DatasetLayout layout);

/// Loads a dataset from disk. Generic layout:
///   <root>/{train,val,test}/{images,masks}/<stem>.<ext>
/// EndoSceneStill/Kvasir layouts:
///   <root>/images, <root>/masks plus a manifest `splits.csv` with
///   columns `stem,split` (split in {train,val,test}).
/// Masks are binarized on load: any nonzero pixel maps to 1.
DatasetSplit load_dataset(const std::filesystem::path& root, DatasetLayout layout);

/// One patch per 8-connected foreground component of the mask, each cropped
/// at the component's tight bounding box. Empty mask yields an empty list.
std::vector<Patch> generate_polyp_patches(const Sample& sample);

/// Rejection-samples `count` crops whose boxes contain no polyp pixels.
/// Heights and widths are drawn independently from size_range (inclusive).
/// Gives up after 100*count attempts and returns the shortfall with a
/// warning; an all-polyp image therefore yields an empty list.
std::vector<Patch> generate_background_patches(const Sample& sample, int count,
                                               std::pair<int, int> size_range, std::mt19937& rng);

struct AugmentConfig {
  double scale_min = 0.8;
  double scale_max = 1.25;
  double rotation_max_deg = 180.0;
  bool hflip = true;
  bool vflip = true;
  double shift_frac = 0.1;
  uint8_t pad_value = 0;

  void validate() const;
};

/// Applies one random geometric transform (scale -> rotate -> shift -> flips,
/// all about the pixel-center midpoint) identically to image and mask:
/// bilinear for the image with pad_value borders, nearest for the mask with
/// zero borders. Output size equals input size.
///
/// Draw order from `rng` is fixed and part of the contract:
/// scale, angle (uniform in [-rotation_max_deg, +rotation_max_deg]),
/// shift_x, shift_y (each uniform in [-shift_frac, +shift_frac] * dim),
/// then one Bernoulli(0.5) per enabled flip (hflip first).
Sample augment(const Sample& sample, const AugmentConfig& cfg, std::mt19937& rng);

/// Desk-scale fixture generator. Images are textured reddish backgrounds
/// with vignetting, fold-like arcs and unlabeled specular-highlight blobs;
/// polyps are brighter pinkish ellipses whose exact interiors form the mask.
/// Every 10th sample of a split (index % 10 == 9) is polyp-free. Fully
/// deterministic for a given generator state.
DatasetSplit synth_dataset(int n_train, int n_val, int n_test, cv::Size image_size,
                           std::mt19937& rng);

/// Writes a split to the generic on-disk layout; masks are stored {0,255}.
void write_generic_layout(const DatasetSplit& split, const std::filesystem::path& root);

struct LetterboxGeometry {
  double scale = 1.0;
  int pad_top = 0;
  int pad_left = 0;
  cv::Size content{0, 0};
  cv::Size original{0, 0};
};

/// Aspect-preserving resize plus centered constant padding to `target`.
cv::Mat letterbox(const cv::Mat& src, cv::Size target, int interpolation, uint8_t pad_value,
                  LetterboxGeometry* geometry = nullptr);

/// Undoes letterbox geometry on a label map: crops the content area and
/// nearest-neighbor resizes it back to the original dimensions.
cv::Mat unletterbox_mask(const cv::Mat& mask, const LetterboxGeometry& geometry);

}  // namespace polypseg::datasets
