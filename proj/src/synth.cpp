#include <cmath>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

#include "polypseg/datasets.hpp"

namespace polypseg::datasets {

namespace {

struct Ellipse {
  double cx, cy;     // center, pixel coordinates
  double a, b;       // semi-axes, a >= b
  double cos_t, sin_t;
};

bool inside(const Ellipse& e, double x, double y) {
  const double dx = x - e.cx;
  const double dy = y - e.cy;
  const double u = dx * e.cos_t + dy * e.sin_t;
  const double v = -dx * e.sin_t + dy * e.cos_t;
  const double nu = u / e.a;
  const double nv = v / e.b;
  return nu * nu + nv * nv <= 1.0;
}

/// Normalized elliptical radius; <= 1 inside.
double rho(const Ellipse& e, double x, double y) {
  const double dx = x - e.cx;
  const double dy = y - e.cy;
  const double u = dx * e.cos_t + dy * e.sin_t;
  const double v = -dx * e.sin_t + dy * e.cos_t;
  const double nu = u / e.a;
  const double nv = v / e.b;
  return std::sqrt(nu * nu + nv * nv);
}

Sample synth_sample(const std::string& id, cv::Size size, bool with_polyps, cv::RNG& rng) {
  const int rows = size.height;
  const int cols = size.width;
  const double short_side = std::min(rows, cols);

  cv::Mat img(rows, cols, CV_32FC3);

  // Reddish mucosa base with two low-frequency sinusoidal texture fields.
  const double base_b = rng.uniform(30.0, 70.0);
  const double base_g = rng.uniform(45.0, 95.0);
  const double base_r = rng.uniform(110.0, 175.0);

  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[2];
  for (auto& w : waves) {
    w.fx = rng.uniform(0.5, 2.5) * 2.0 * CV_PI / cols;
    w.fy = rng.uniform(0.5, 2.5) * 2.0 * CV_PI / rows;
    w.phase = rng.uniform(0.0, 2.0 * CV_PI);
    w.amp = rng.uniform(6.0, 16.0);
  }

  const double vignette = rng.uniform(0.15, 0.45);
  const double vx = cols * rng.uniform(0.4, 0.6);
  const double vy = rows * rng.uniform(0.4, 0.6);
  const double vr = 0.75 * std::hypot(cols, rows);

  for (int r = 0; r < rows; ++r) {
    auto* row = img.ptr<cv::Vec3f>(r);
    for (int c = 0; c < cols; ++c) {
      double tex = 0.0;
      for (const auto& w : waves) tex += w.amp * std::sin(w.fx * c + w.fy * r + w.phase);
      const double d = std::hypot(c - vx, r - vy) / vr;
      const double shade = 1.0 - vignette * d * d;
      row[c] = cv::Vec3f(static_cast<float>((base_b + tex) * shade),
                         static_cast<float>((base_g + tex) * shade),
                         static_cast<float>((base_r + tex * 1.2) * shade));
    }
  }

  // Fold-like darker arcs, blurred so they read as smooth ridges.
  const int n_folds = rng.uniform(1, 4);
  cv::Mat fold_overlay = cv::Mat::zeros(rows, cols, CV_32FC1);
  for (int i = 0; i < n_folds; ++i) {
    const cv::Point center(rng.uniform(0, cols), rng.uniform(0, rows));
    const cv::Size axes(rng.uniform(cols / 3, cols), rng.uniform(rows / 3, rows));
    const double angle = rng.uniform(0.0, 180.0);
    const double start = rng.uniform(0.0, 360.0);
    const int thickness = rng.uniform(2, 6);
    cv::ellipse(fold_overlay, center, axes, angle, start, start + rng.uniform(60.0, 180.0),
                cv::Scalar(1.0), thickness);
  }
  cv::GaussianBlur(fold_overlay, fold_overlay, cv::Size(0, 0), 2.5);
  for (int r = 0; r < rows; ++r) {
    auto* row = img.ptr<cv::Vec3f>(r);
    const float* fold = fold_overlay.ptr<float>(r);
    for (int c = 0; c < cols; ++c) {
      const float k = 1.0f - 0.35f * std::min(fold[c], 1.0f);
      row[c] *= k;
    }
  }

  // Polyps: brighter pinkish ellipses; the mask is the exact interior.
  cv::Mat mask = cv::Mat::zeros(rows, cols, CV_8UC1);
  int n_polyps = 0;
  if (with_polyps) n_polyps = rng.uniform(0.0, 1.0) < 0.3 ? 2 : 1;
  for (int p = 0; p < n_polyps; ++p) {
    Ellipse e{};
    e.a = rng.uniform(0.125, 0.26) * short_side;
    e.b = e.a * rng.uniform(0.55, 0.95);
    const double theta = rng.uniform(0.0, CV_PI);
    e.cos_t = std::cos(theta);
    e.sin_t = std::sin(theta);
    const double margin = e.a + 2.0;
    e.cx = rng.uniform(margin, cols - margin);
    e.cy = rng.uniform(margin, rows - margin);

    const double db = rng.uniform(20.0, 55.0);
    const double dg = rng.uniform(30.0, 70.0);
    const double dr = rng.uniform(30.0, 75.0);
    const double grain = rng.uniform(2.0, 5.0);

    const int r0 = std::max(0, static_cast<int>(e.cy - e.a - 2));
    const int r1 = std::min(rows, static_cast<int>(e.cy + e.a + 3));
    const int c0 = std::max(0, static_cast<int>(e.cx - e.a - 2));
    const int c1 = std::min(cols, static_cast<int>(e.cx + e.a + 3));
    for (int r = r0; r < r1; ++r) {
      auto* row = img.ptr<cv::Vec3f>(r);
      uint8_t* mrow = mask.ptr<uint8_t>(r);
      for (int c = c0; c < c1; ++c) {
        const double rr = rho(e, c, r);
        if (rr > 1.06) continue;
        // Dome shading: brightest near the apex, darker toward the rim.
        const double dome = 1.0 + 0.18 * (1.0 - rr * rr) - 0.12 * std::max(0.0, rr - 0.75);
        const double alpha = rr <= 1.0 ? 1.0 : (1.06 - rr) / 0.06;
        const double noise = rng.gaussian(grain);
        const cv::Vec3f polyp(static_cast<float>((base_b + db + noise) * dome),
                              static_cast<float>((base_g + dg + noise) * dome),
                              static_cast<float>((base_r + dr + noise) * dome));
        row[c] = row[c] * static_cast<float>(1.0 - alpha) + polyp * static_cast<float>(alpha);
        if (rr <= 1.0) mrow[c] = 1;
      }
    }
  }

  // Specular highlights: small bright blobs, deliberately unlabeled.
  const int n_spec = rng.uniform(2, 7);
  for (int i = 0; i < n_spec; ++i) {
    const double sx = rng.uniform(0.0, static_cast<double>(cols));
    const double sy = rng.uniform(0.0, static_cast<double>(rows));
    const double radius = rng.uniform(1.5, 4.0);
    const double strength = rng.uniform(0.7, 1.0);
    const int r0 = std::max(0, static_cast<int>(sy - 3 * radius));
    const int r1 = std::min(rows, static_cast<int>(sy + 3 * radius) + 1);
    const int c0 = std::max(0, static_cast<int>(sx - 3 * radius));
    const int c1 = std::min(cols, static_cast<int>(sx + 3 * radius) + 1);
    for (int r = r0; r < r1; ++r) {
      auto* row = img.ptr<cv::Vec3f>(r);
      for (int c = c0; c < c1; ++c) {
        const double d2 = (c - sx) * (c - sx) + (r - sy) * (r - sy);
        const double glow = strength * std::exp(-d2 / (2.0 * radius * radius));
        const cv::Vec3f white(252.0f, 252.0f, 248.0f);
        row[c] = row[c] * static_cast<float>(1.0 - glow) + white * static_cast<float>(glow);
      }
    }
  }

  // Sensor noise.
  cv::Mat noise(rows, cols, CV_32FC3);
  rng.fill(noise, cv::RNG::NORMAL, 0.0, rng.uniform(3.0, 7.0));
  img += noise;

  Sample sample;
  sample.id = id;
  img.convertTo(sample.image, CV_8UC3);
  sample.mask = mask;
  return sample;
}

std::vector<Sample> synth_split(const std::string& split_name, int count, cv::Size size,
                                std::mt19937& rng) {
  std::vector<Sample> samples;
  samples.reserve(count);
  for (int i = 0; i < count; ++i) {
    const uint64_t image_seed = (static_cast<uint64_t>(rng()) << 32) | rng();
    cv::RNG image_rng(image_seed);
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%04d", split_name.c_str(), i);
    const bool with_polyps = (i % 10) != 9;
    samples.push_back(synth_sample(id, size, with_polyps, image_rng));
  }
  return samples;
}

}  // namespace

DatasetSplit synth_dataset(int n_train, int n_val, int n_test, cv::Size image_size,
                           std::mt19937& rng) {
  if (n_train < 0 || n_val < 0 || n_test < 0)
    throw std::invalid_argument("synth_dataset sizes must be >= 0");
  if (image_size.width < 16 || image_size.height < 16)
    throw std::invalid_argument("synth_dataset images must be at least 16x16");
  DatasetSplit split;
  split.train = synth_split("train", n_train, image_size, rng);
  split.val = synth_split("val", n_val, image_size, rng);
  split.test = synth_split("test", n_test, image_size, rng);
  return split;
}

}  // namespace polypseg::datasets
