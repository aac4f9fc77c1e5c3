#include "polypseg/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace polypseg::datasets {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kImageExtensions = {".png", ".jpg", ".jpeg", ".bmp"};

fs::path find_by_stem(const fs::path& dir, const std::string& stem) {
  for (const auto& ext : kImageExtensions) {
    fs::path candidate = dir / (stem + ext);
    if (fs::exists(candidate)) return candidate;
  }
  return {};
}

cv::Mat read_image(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("unreadable image file: " + path.string());
  return img;
}

cv::Mat read_mask(const fs::path& path) {
  cv::Mat mask = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (mask.empty()) throw std::runtime_error("unreadable mask file: " + path.string());
  cv::Mat binary;
  cv::threshold(mask, binary, 0, 1, cv::THRESH_BINARY);
  return binary;
}

Sample load_pair(const fs::path& image_path, const fs::path& mask_dir, const std::string& stem) {
  fs::path mask_path = find_by_stem(mask_dir, stem);
  if (mask_path.empty())
    throw std::runtime_error("missing mask for image stem '" + stem + "' in " + mask_dir.string());
  Sample sample{stem, read_image(image_path), read_mask(mask_path)};
  if (sample.image.rows != sample.mask.rows || sample.image.cols != sample.mask.cols)
    throw std::runtime_error("image/mask dimensions differ for stem '" + stem + "'");
  return sample;
}

std::vector<Sample> load_generic_split(const fs::path& split_dir) {
  const fs::path image_dir = split_dir / "images";
  const fs::path mask_dir = split_dir / "masks";
  if (!fs::is_directory(image_dir))
    throw std::runtime_error("missing images directory: " + image_dir.string());
  if (!fs::is_directory(mask_dir))
    throw std::runtime_error("missing masks directory: " + mask_dir.string());

  std::vector<fs::path> image_paths;
  for (const auto& entry : fs::directory_iterator(image_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (std::find(kImageExtensions.begin(), kImageExtensions.end(), ext) != kImageExtensions.end())
      image_paths.push_back(entry.path());
  }
  std::sort(image_paths.begin(), image_paths.end());

  std::vector<Sample> samples;
  for (const auto& path : image_paths)
    samples.push_back(load_pair(path, mask_dir, path.stem().string()));
  return samples;
}

std::map<std::string, std::string> read_split_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("missing split manifest: " + manifest.string());
  std::map<std::string, std::string> assignment;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && line == "stem,split") {
      first = false;
      continue;
    }
    first = false;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("malformed manifest line (expected 'stem,split'): " + line);
    const std::string stem = line.substr(0, comma);
    const std::string split = line.substr(comma + 1);
    if (split != "train" && split != "val" && split != "test")
      throw std::runtime_error("unknown split '" + split + "' for stem '" + stem + "'");
    if (!assignment.emplace(stem, split).second)
      throw std::runtime_error("duplicate stem in manifest: " + stem);
  }
  return assignment;
}

void check_not_empty(const DatasetSplit& split, const fs::path& root) {
  if (split.train.empty()) throw std::runtime_error("empty train split in " + root.string());
  if (split.val.empty()) throw std::runtime_error("empty val split in " + root.string());
  if (split.test.empty()) throw std::runtime_error("empty test split in " + root.string());
}

void check_disjoint_ids(const DatasetSplit& split) {
  std::set<std::string> seen;
  for (const auto* list : {&split.train, &split.val, &split.test})
    for (const auto& sample : *list)
      if (!seen.insert(sample.id).second)
        throw std::runtime_error("duplicate sample id across splits: " + sample.id);
}

}  // namespace

DatasetLayout layout_from_string(const std::string& s) {
  if (s == "endoscene") return DatasetLayout::endoscene;
  if (s == "kvasir") return DatasetLayout::kvasir;
  if (s == "generic") return DatasetLayout::generic;
  throw std::invalid_argument("unknown dataset layout: " + s);
}

std::string to_string(DatasetLayout layout) {
  switch (layout) {
    case DatasetLayout::endoscene: return "endoscene";
    case DatasetLayout::kvasir: return "kvasir";
    case DatasetLayout::generic: return "generic";
  }
  return "generic";
}

DatasetSplit load_dataset(const fs::path& root, DatasetLayout layout) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root not found: " + root.string());

  DatasetSplit split;
  if (layout == DatasetLayout::generic) {
    split.train = load_generic_split(root / "train");
    split.val = load_generic_split(root / "val");
    split.test = load_generic_split(root / "test");
  } else {
    // EndoSceneStill and Kvasir-SEG share the manifest-driven flat layout.
    const auto assignment = read_split_manifest(root / "splits.csv");
    const fs::path image_dir = root / "images";
    const fs::path mask_dir = root / "masks";
    for (const auto& [stem, split_name] : assignment) {
      fs::path image_path = find_by_stem(image_dir, stem);
      if (image_path.empty())
        throw std::runtime_error("missing image for manifest stem '" + stem + "' in " +
                                 image_dir.string());
      Sample sample = load_pair(image_path, mask_dir, stem);
      if (split_name == "train")
        split.train.push_back(std::move(sample));
      else if (split_name == "val")
        split.val.push_back(std::move(sample));
      else
        split.test.push_back(std::move(sample));
    }
  }

  check_not_empty(split, root);
  check_disjoint_ids(split);
  for (const auto* list : {&split.train, &split.val, &split.test})
    for (const auto& sample : *list) validate_sample(sample);
  return split;
}

std::vector<Patch> generate_polyp_patches(const Sample& sample) {
  std::vector<Patch> patches;
  for (const auto& region : connected_components(sample.mask)) {
    const cv::Rect rect(region.bbox.col_min, region.bbox.row_min, region.bbox.width(),
                        region.bbox.height());
    patches.push_back(
        Patch{sample.image(rect).clone(), PatchLabel::polyp, region.bbox, sample.id});
  }
  return patches;
}

std::vector<Patch> generate_background_patches(const Sample& sample, int count,
                                               std::pair<int, int> size_range, std::mt19937& rng) {
  if (count < 0) throw std::invalid_argument("background patch count must be >= 0");
  const int rows = sample.mask.rows;
  const int cols = sample.mask.cols;
  auto [min_px, max_px] = size_range;
  if (min_px <= 0 || min_px > max_px || max_px > std::min(rows, cols))
    throw std::invalid_argument("invalid background patch size range");

  // Summed-area table so each rejection test is O(1).
  cv::Mat integral;
  cv::integral(sample.mask, integral, CV_32S);
  auto foreground_in = [&](const Bbox& box) {
    return integral.at<int32_t>(box.row_max, box.col_max) -
           integral.at<int32_t>(box.row_min, box.col_max) -
           integral.at<int32_t>(box.row_max, box.col_min) +
           integral.at<int32_t>(box.row_min, box.col_min);
  };

  std::uniform_int_distribution<int> size_dist(min_px, max_px);
  std::vector<Patch> patches;
  const long long max_attempts = 100LL * count;
  long long attempts = 0;
  while (static_cast<int>(patches.size()) < count && attempts < max_attempts) {
    ++attempts;
    const int height = size_dist(rng);
    const int width = size_dist(rng);
    std::uniform_int_distribution<int> row_dist(0, rows - height);
    std::uniform_int_distribution<int> col_dist(0, cols - width);
    const int row = row_dist(rng);
    const int col = col_dist(rng);
    const Bbox box{row, col, row + height, col + width};
    if (foreground_in(box) != 0) continue;
    const cv::Rect rect(col, row, width, height);
    patches.push_back(
        Patch{sample.image(rect).clone(), PatchLabel::background, box, sample.id});
  }
  if (static_cast<int>(patches.size()) < count)
    std::cerr << "warning: background patch sampling for '" << sample.id << "' produced "
              << patches.size() << "/" << count << " patches\n";
  return patches;
}

void AugmentConfig::validate() const {
  if (!(scale_min > 0.0 && scale_min <= scale_max))
    throw std::invalid_argument("require 0 < scale_min <= scale_max");
  if (rotation_max_deg < 0.0 || rotation_max_deg > 180.0)
    throw std::invalid_argument("require 0 <= rotation_max_deg <= 180");
  if (shift_frac < 0.0 || shift_frac >= 1.0)
    throw std::invalid_argument("require 0 <= shift_frac < 1");
}

Sample augment(const Sample& sample, const AugmentConfig& cfg, std::mt19937& rng) {
  cfg.validate();
  const int rows = sample.image.rows;
  const int cols = sample.image.cols;

  std::uniform_real_distribution<double> scale_dist(cfg.scale_min, cfg.scale_max);
  const double scale = scale_dist(rng);
  std::uniform_real_distribution<double> angle_dist(-cfg.rotation_max_deg, cfg.rotation_max_deg);
  const double angle = cfg.rotation_max_deg > 0.0 ? angle_dist(rng) : 0.0;
  std::uniform_real_distribution<double> shift_dist(-cfg.shift_frac, cfg.shift_frac);
  const double shift_x = cfg.shift_frac > 0.0 ? shift_dist(rng) * cols : 0.0;
  const double shift_y = cfg.shift_frac > 0.0 ? shift_dist(rng) * rows : 0.0;
  std::bernoulli_distribution coin(0.5);
  const bool do_hflip = cfg.hflip && coin(rng);
  const bool do_vflip = cfg.vflip && coin(rng);

  const cv::Point2f center(static_cast<float>((cols - 1) * 0.5), static_cast<float>((rows - 1) * 0.5));
  cv::Mat m = cv::getRotationMatrix2D(center, angle, scale);
  m.at<double>(0, 2) += shift_x;
  m.at<double>(1, 2) += shift_y;

  Sample out;
  out.id = sample.id;
  cv::warpAffine(sample.image, out.image, m, sample.image.size(), cv::INTER_LINEAR,
                 cv::BORDER_CONSTANT, cv::Scalar(cfg.pad_value, cfg.pad_value, cfg.pad_value));
  cv::warpAffine(sample.mask, out.mask, m, sample.mask.size(), cv::INTER_NEAREST,
                 cv::BORDER_CONSTANT, cv::Scalar(0));
  if (do_hflip) {
    cv::flip(out.image, out.image, 1);
    cv::flip(out.mask, out.mask, 1);
  }
  if (do_vflip) {
    cv::flip(out.image, out.image, 0);
    cv::flip(out.mask, out.mask, 0);
  }
  return out;
}

void write_generic_layout(const DatasetSplit& split, const fs::path& root) {
  const std::vector<std::pair<std::string, const std::vector<Sample>*>> parts = {
      {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
  for (const auto& [name, samples] : parts) {
    const fs::path image_dir = root / name / "images";
    const fs::path mask_dir = root / name / "masks";
    fs::create_directories(image_dir);
    fs::create_directories(mask_dir);
    for (const auto& sample : *samples) {
      if (!cv::imwrite((image_dir / (sample.id + ".png")).string(), sample.image))
        throw std::runtime_error("failed to write image for sample " + sample.id);
      cv::Mat mask255;
      sample.mask.convertTo(mask255, CV_8UC1, 255.0);
      if (!cv::imwrite((mask_dir / (sample.id + ".png")).string(), mask255))
        throw std::runtime_error("failed to write mask for sample " + sample.id);
    }
  }
}

cv::Mat letterbox(const cv::Mat& src, cv::Size target, int interpolation, uint8_t pad_value,
                  LetterboxGeometry* geometry) {
  CV_Assert(!src.empty() && target.width > 0 && target.height > 0);
  const double scale =
      std::min(static_cast<double>(target.width) / src.cols, static_cast<double>(target.height) / src.rows);
  cv::Size content(std::clamp(static_cast<int>(std::lround(src.cols * scale)), 1, target.width),
                   std::clamp(static_cast<int>(std::lround(src.rows * scale)), 1, target.height));

  cv::Mat resized;
  cv::resize(src, resized, content, 0.0, 0.0, interpolation);

  const int pad_top = (target.height - content.height) / 2;
  const int pad_left = (target.width - content.width) / 2;
  cv::Mat out(target, src.type(),
              src.channels() == 3 ? cv::Scalar(pad_value, pad_value, pad_value)
                                  : cv::Scalar(pad_value));
  resized.copyTo(out(cv::Rect(pad_left, pad_top, content.width, content.height)));

  if (geometry) {
    geometry->scale = scale;
    geometry->pad_top = pad_top;
    geometry->pad_left = pad_left;
    geometry->content = content;
    geometry->original = src.size();
  }
  return out;
}

cv::Mat unletterbox_mask(const cv::Mat& mask, const LetterboxGeometry& geometry) {
  CV_Assert(mask.type() == CV_8UC1);
  const cv::Rect content(geometry.pad_left, geometry.pad_top, geometry.content.width,
                         geometry.content.height);
  cv::Mat cropped = mask(content);
  cv::Mat out;
  cv::resize(cropped, out, geometry.original, 0.0, 0.0, cv::INTER_NEAREST);
  return out;
}

}  // namespace polypseg::datasets
