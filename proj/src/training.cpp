#include "polypseg/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include <opencv2/imgproc.hpp>

#include "polypseg/checkpoint.hpp"

namespace polypseg::training {

namespace fs = std::filesystem;

uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b) {
  // splitmix64 over the seed and the tag/index words.
  auto mix = [](uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  uint64_t h = mix(seed);
  for (const char ch : tag) h = mix(h ^ static_cast<uint64_t>(ch));
  h = mix(h ^ a);
  h = mix(h ^ b);
  return h;
}

torch::Tensor bce_loss(const LossBatch& batch) {
  if (batch.predictions.numel() == 0) throw std::invalid_argument("bce_loss: empty batch");
  constexpr double kEps = 1e-7;
  auto p = batch.predictions.clamp(kEps, 1.0 - kEps);
  auto t = batch.targets.to(p.dtype());
  return -(t * p.log() + (1.0 - t) * (1.0 - p).log()).mean();
}

torch::Tensor softmax_probs(const torch::Tensor& logits, int64_t dim) {
  auto shifted = logits - std::get<0>(logits.max(dim, /*keepdim=*/true));
  auto exps = shifted.exp();
  return exps / exps.sum(dim, /*keepdim=*/true);
}

torch::Tensor ce_loss(const LossBatch& batch) {
  const auto& logits = batch.predictions;
  if (logits.dim() < 2) throw std::invalid_argument("ce_loss: logits must have a class dimension");
  auto targets = batch.targets.to(torch::kLong);
  const int64_t num_classes = logits.size(1);
  if (targets.numel() == 0) throw std::invalid_argument("ce_loss: empty batch");
  if (targets.max().item<int64_t>() >= num_classes || targets.min().item<int64_t>() < 0)
    throw std::invalid_argument("ce_loss: target class index out of range");
  auto log_probs = logits - logits.logsumexp(/*dim=*/1, /*keepdim=*/true);
  auto picked = log_probs.gather(1, targets.unsqueeze(1)).squeeze(1);
  return -picked.mean();
}

void OptimizerSpec::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("learning rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

double lr_at(const OptimizerSpec& spec, int epoch) {
  if (epoch < 0 || epoch >= spec.epochs)
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(spec.epochs) + ")");
  if (spec.schedule == LrSchedule::constant) return spec.lr;
  return spec.lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / spec.epochs));
}

void TrainHistory::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write history: " + path.string());
  out << "epoch,train_loss,train_metric,val_metric,lr,wall_time_s\n";
  for (const auto& rec : epochs) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.3f\n", rec.epoch, rec.train_loss,
                  rec.train_metric, rec.val_metric, rec.lr, rec.wall_time_s);
    out << buf;
  }
}

torch::Tensor to_input_tensor(const cv::Mat& bgr) {
  CV_Assert(bgr.type() == CV_8UC3);
  cv::Mat as_float;
  bgr.convertTo(as_float, CV_32FC3, 1.0 / 127.5, -1.0);
  auto view = torch::from_blob(as_float.data, {bgr.rows, bgr.cols, 3}, torch::kFloat32);
  return view.permute({2, 0, 1}).contiguous();
}

torch::Tensor to_target_tensor(const cv::Mat& mask) {
  CV_Assert(mask.type() == CV_8UC1);
  auto view = torch::from_blob(const_cast<uint8_t*>(mask.ptr<uint8_t>()), {mask.rows, mask.cols},
                               torch::kUInt8);
  return view.to(torch::kLong);
}

namespace {

struct BinaryPixelTallies {
  int64_t tp = 0, fp = 0, fn = 0;

  void accumulate(const torch::Tensor& pred, const torch::Tensor& target) {
    auto p = pred == 1;
    auto t = target == 1;
    tp += (p & t).sum().item<int64_t>();
    fp += (p & ~t).sum().item<int64_t>();
    fn += (~p & t).sum().item<int64_t>();
  }

  double iou() const {
    const int64_t denom = tp + fp + fn;
    return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
  }
};

fs::path checkpoints_dir(const fs::path& run_dir) { return run_dir / "checkpoints"; }
fs::path histories_dir(const fs::path& run_dir) { return run_dir / "histories"; }

void set_lr(torch::optim::Optimizer& optimizer, double lr) {
  for (auto& group : optimizer.param_groups()) {
    if (auto* adam = dynamic_cast<torch::optim::AdamOptions*>(&group.options()))
      adam->lr(lr);
    else if (auto* sgd = dynamic_cast<torch::optim::SGDOptions*>(&group.options()))
      sgd->lr(lr);
    else
      throw std::logic_error("unexpected optimizer options type");
  }
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const OptimizerSpec& spec,
                                                        std::vector<torch::Tensor> params) {
  if (spec.kind == OptimizerKind::adam_amsgrad)
    return std::make_unique<torch::optim::Adam>(std::move(params),
                                                torch::optim::AdamOptions(spec.lr).amsgrad(true));
  return std::make_unique<torch::optim::SGD>(
      std::move(params), torch::optim::SGDOptions(spec.lr).momentum(spec.momentum));
}

}  // namespace

double validation_polyp_iou(models::FcnSegmenter model, const std::vector<Sample>& samples,
                            cv::Size input_size) {
  torch::InferenceMode guard;
  model->eval();
  BinaryPixelTallies tallies;
  for (const auto& sample : samples) {
    const cv::Mat image = datasets::letterbox(sample.image, input_size, cv::INTER_LINEAR, 0);
    const cv::Mat mask = datasets::letterbox(sample.mask, input_size, cv::INTER_NEAREST, 0);
    auto logits = model->forward(to_input_tensor(image).unsqueeze(0));
    tallies.accumulate(logits.argmax(1).squeeze(0), to_target_tensor(mask));
  }
  return tallies.iou();
}

TrainResult train_segmentation(models::FcnSegmenter model, const DatasetSplit& data,
                               const OptimizerSpec& spec, const datasets::AugmentConfig& aug,
                               uint64_t seed, const std::filesystem::path& run_dir,
                               const std::string& tag) {
  spec.validate();
  aug.validate();
  if (spec.kind != OptimizerKind::adam_amsgrad && spec.kind != OptimizerKind::sgd_momentum)
    throw std::invalid_argument("unknown optimizer kind");
  if (data.train.empty()) throw std::invalid_argument("train_segmentation: empty training split");

  fs::create_directories(checkpoints_dir(run_dir));
  fs::create_directories(histories_dir(run_dir));

  const cv::Size input_size = model->spec().input_size;
  const models::CheckpointMeta meta{1, to_string(model->spec().kind), input_size, tag};

  TrainResult result;
  result.init_checkpoint = checkpoints_dir(run_dir) / (tag + "_init.ckpt");
  result.best_checkpoint = checkpoints_dir(run_dir) / (tag + "_best.ckpt");
  result.final_checkpoint = checkpoints_dir(run_dir) / (tag + "_final.ckpt");
  result.history_csv = histories_dir(run_dir) / (tag + ".csv");
  save_checkpoint(result.init_checkpoint, meta, models::model_state(*model));

  auto optimizer = make_optimizer(spec, model->parameters());
  const int64_t height = input_size.height;
  const int64_t width = input_size.width;

  double best_val = -1.0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const double lr = lr_at(spec, epoch);
    set_lr(*optimizer, lr);
    model->train();

    std::vector<size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937 shuffle_rng(derive_seed(seed, "shuffle", epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    int64_t seen = 0;
    BinaryPixelTallies train_tallies;
    for (size_t start = 0; start < order.size(); start += spec.batch_size) {
      const size_t count = std::min<size_t>(spec.batch_size, order.size() - start);
      auto images = torch::empty({static_cast<int64_t>(count), 3, height, width});
      auto targets = torch::empty({static_cast<int64_t>(count), height, width}, torch::kLong);
      for (size_t i = 0; i < count; ++i) {
        const size_t idx = order[start + i];
        std::mt19937 aug_rng(derive_seed(seed, "augment", epoch, idx));
        const Sample augmented = datasets::augment(data.train[idx], aug, aug_rng);
        const cv::Mat image =
            datasets::letterbox(augmented.image, input_size, cv::INTER_LINEAR, aug.pad_value);
        const cv::Mat mask = datasets::letterbox(augmented.mask, input_size, cv::INTER_NEAREST, 0);
        images[static_cast<int64_t>(i)] = to_input_tensor(image);
        targets[static_cast<int64_t>(i)] = to_target_tensor(mask);
      }

      optimizer->zero_grad();
      auto logits = model->forward(images);
      auto loss = ce_loss({logits, targets});
      const double loss_value = loss.item<double>();
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("non-finite segmentation loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(start / spec.batch_size) +
                                 " (loss=" + std::to_string(loss_value) + ")");
      }
      loss.backward();
      optimizer->step();

      loss_sum += loss_value * static_cast<double>(count);
      seen += static_cast<int64_t>(count);
      torch::NoGradGuard no_grad;
      train_tallies.accumulate(logits.argmax(1), targets);
    }

    const double val_iou = validation_polyp_iou(model, data.val, input_size);
    if (val_iou > best_val) {
      best_val = val_iou;
      save_checkpoint(result.best_checkpoint, meta, models::model_state(*model));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_metric = train_tallies.iou();
    rec.val_metric = val_iou;
    rec.lr = lr;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.history.epochs.push_back(rec);
    std::cerr << "[" << tag << "] epoch " << epoch + 1 << "/" << spec.epochs
              << " loss=" << rec.train_loss << " train_iou=" << rec.train_metric
              << " val_iou=" << rec.val_metric << "\n";
  }

  save_checkpoint(result.final_checkpoint, meta, models::model_state(*model));
  result.history.save_csv(result.history_csv);
  result.best_val_metric = best_val;
  return result;
}

namespace {

cv::Mat patch_input(const Patch& patch, cv::Size input_size,
                    const std::optional<datasets::AugmentConfig>& aug, std::mt19937* rng) {
  cv::Mat image = patch.image;
  if (aug && rng) {
    Sample as_sample{patch.source_id, patch.image,
                     cv::Mat::zeros(patch.image.rows, patch.image.cols, CV_8UC1)};
    image = datasets::augment(as_sample, *aug, *rng).image;
  }
  return datasets::letterbox(image, input_size, cv::INTER_LINEAR, 0);
}

double classifier_accuracy(models::PatchClassifier model, const torch::Tensor& inputs,
                           const torch::Tensor& labels) {
  torch::InferenceMode guard;
  model->eval();
  auto probs = model->probability(inputs);
  auto preds = probs >= 0.5;
  return (preds == labels.to(torch::kBool)).to(torch::kFloat64).mean().item<double>();
}

}  // namespace

TrainResult train_classifier(models::PatchClassifier model, const std::vector<Patch>& train_patches,
                             const std::vector<Patch>& val_patches, const OptimizerSpec& spec,
                             const std::optional<datasets::AugmentConfig>& aug, uint64_t seed,
                             const std::filesystem::path& run_dir, const std::string& tag) {
  spec.validate();
  if (aug) aug->validate();

  std::vector<size_t> polyp_idx, background_idx;
  for (size_t i = 0; i < train_patches.size(); ++i) {
    (train_patches[i].label == PatchLabel::polyp ? polyp_idx : background_idx).push_back(i);
  }
  if (polyp_idx.empty() || background_idx.empty())
    throw std::invalid_argument("train_classifier: training patches must contain both classes");

  fs::create_directories(checkpoints_dir(run_dir));
  fs::create_directories(histories_dir(run_dir));

  const cv::Size input_size = model->spec().input_size;
  const models::CheckpointMeta meta{1, to_string(model->spec().kind), input_size, tag};

  TrainResult result;
  result.init_checkpoint = checkpoints_dir(run_dir) / (tag + "_init.ckpt");
  result.best_checkpoint = checkpoints_dir(run_dir) / (tag + "_best.ckpt");
  result.final_checkpoint = checkpoints_dir(run_dir) / (tag + "_final.ckpt");
  result.history_csv = histories_dir(run_dir) / (tag + ".csv");
  save_checkpoint(result.init_checkpoint, meta, models::model_state(*model));

  // Validation tensors are fixed across epochs; build them once.
  torch::Tensor val_inputs, val_labels;
  if (!val_patches.empty()) {
    val_inputs = torch::empty({static_cast<int64_t>(val_patches.size()), 3, input_size.height,
                               input_size.width});
    val_labels = torch::empty({static_cast<int64_t>(val_patches.size())});
    for (size_t i = 0; i < val_patches.size(); ++i) {
      val_inputs[static_cast<int64_t>(i)] =
          to_input_tensor(patch_input(val_patches[i], input_size, std::nullopt, nullptr));
      val_labels[static_cast<int64_t>(i)] = static_cast<double>(val_patches[i].label);
    }
  }

  auto optimizer = make_optimizer(spec, model->parameters());

  double best_val = -1.0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const double lr = lr_at(spec, epoch);
    set_lr(*optimizer, lr);
    model->train();

    // Class-balanced epoch list: minority oversampled with replacement.
    std::mt19937 balance_rng(derive_seed(seed, "balance", epoch));
    const auto& majority = polyp_idx.size() >= background_idx.size() ? polyp_idx : background_idx;
    const auto& minority = polyp_idx.size() >= background_idx.size() ? background_idx : polyp_idx;
    std::vector<size_t> order = majority;
    std::uniform_int_distribution<size_t> pick(0, minority.size() - 1);
    order.insert(order.end(), minority.begin(), minority.end());
    while (order.size() < 2 * majority.size()) order.push_back(minority[pick(balance_rng)]);
    std::shuffle(order.begin(), order.end(), balance_rng);

    double loss_sum = 0.0;
    int64_t seen = 0, correct = 0;
    for (size_t start = 0; start < order.size(); start += spec.batch_size) {
      const size_t count = std::min<size_t>(spec.batch_size, order.size() - start);
      auto inputs = torch::empty({static_cast<int64_t>(count), 3, input_size.height,
                                  input_size.width});
      auto labels = torch::empty({static_cast<int64_t>(count)});
      for (size_t i = 0; i < count; ++i) {
        const size_t idx = order[start + i];
        std::mt19937 aug_rng(derive_seed(seed, "augment", epoch, start + i));
        inputs[static_cast<int64_t>(i)] = to_input_tensor(
            patch_input(train_patches[idx], input_size, aug, aug ? &aug_rng : nullptr));
        labels[static_cast<int64_t>(i)] = static_cast<double>(train_patches[idx].label);
      }

      optimizer->zero_grad();
      auto probs = torch::sigmoid(model->forward(inputs));
      auto loss = bce_loss({probs, labels});
      const double loss_value = loss.item<double>();
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("non-finite classification loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(start / spec.batch_size));
      }
      loss.backward();
      optimizer->step();

      loss_sum += loss_value * static_cast<double>(count);
      seen += static_cast<int64_t>(count);
      torch::NoGradGuard no_grad;
      correct += ((probs >= 0.5) == labels.to(torch::kBool)).sum().item<int64_t>();
    }

    const double val_acc =
        val_patches.empty() ? 0.0 : classifier_accuracy(model, val_inputs, val_labels);
    if (val_acc > best_val) {
      best_val = val_acc;
      save_checkpoint(result.best_checkpoint, meta, models::model_state(*model));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_metric = static_cast<double>(correct) / static_cast<double>(seen);
    rec.val_metric = val_acc;
    rec.lr = lr;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.history.epochs.push_back(rec);
    std::cerr << "[" << tag << "] epoch " << epoch + 1 << "/" << spec.epochs
              << " loss=" << rec.train_loss << " train_acc=" << rec.train_metric
              << " val_acc=" << rec.val_metric << "\n";
  }

  save_checkpoint(result.final_checkpoint, meta, models::model_state(*model));
  result.history.save_csv(result.history_csv);
  result.best_val_metric = best_val;
  return result;
}

}  // namespace polypseg::training
