#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace polypseg::models {

/// Stride/dilation schedule of the ResNet50 feature extractor. The default
/// keeps stage 4 at stride 1 with dilation 2 on its 3x3 convolutions, which
/// gives an output stride of 16 instead of the classification-style 32.
struct BackboneConfig {
  std::array<int, 4> stage_strides{1, 2, 2, 1};
  std::array<int, 4> stage_dilations{1, 1, 1, 2};
  std::array<int, 4> block_counts{3, 4, 6, 3};

  /// stem conv (stride 2) + max pool (stride 2) + stage strides.
  int output_stride() const {
    return 4 * stage_strides[0] * stage_strides[1] * stage_strides[2] * stage_strides[3];
  }

  void validate() const;
};

enum class ModelKind { fcn_segmenter, patch_classifier };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct ModelSpec {
  ModelKind kind = ModelKind::fcn_segmenter;
  int num_classes = 2;
  cv::Size input_size{320, 320};
  BackboneConfig backbone;
};

/// Ordered map from canonical layer-parameter name to a detached CPU float32
/// tensor. The unit of weight transfer between the two networks.
class NamedWeights {
 public:
  using Entry = std::pair<std::string, torch::Tensor>;

  NamedWeights() = default;

  /// Appends an entry; throws on duplicate name or non-finite values.
  void add(std::string name, const torch::Tensor& value);

  const torch::Tensor* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::vector<std::string> names() const;

 private:
  std::vector<Entry> entries_;
};

class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in_channels, int planes, int stride, int dilation, bool with_projection);

  torch::Tensor forward(torch::Tensor x);

  static constexpr int kExpansion = 4;

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  torch::nn::BatchNorm2d norm1_{nullptr}, norm2_{nullptr}, norm3_{nullptr};
  torch::nn::Conv2d proj_{nullptr};
  torch::nn::BatchNorm2d proj_norm_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// conv7x7/2 + norm + relu + 3x3/2 max pool. Total stride 4.
class StemImpl : public torch::nn::Module {
 public:
  StemImpl();
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d norm_{nullptr};
};
TORCH_MODULE(Stem);

/// One residual stage: block0 carries the projection shortcut (and the
/// stage stride); the remaining blocks are identity-shortcut bottlenecks.
class StageImpl : public torch::nn::Module {
 public:
  StageImpl(int in_channels, int planes, int blocks, int stride, int dilation);
  torch::Tensor forward(torch::Tensor x);

 private:
  std::vector<Bottleneck> blocks_;
};
TORCH_MODULE(Stage);

/// ResNet50 feature extractor: stem + 4 bottleneck stages. Maps HxWx3 input
/// to (H/os)x(W/os)x2048 features where os is config.output_stride().
class ResNetBackboneImpl : public torch::nn::Module {
 public:
  explicit ResNetBackboneImpl(const BackboneConfig& config = {});

  torch::Tensor forward(torch::Tensor x);

  const BackboneConfig& config() const { return config_; }
  static constexpr int kFeatureChannels = 512 * BottleneckImpl::kExpansion;

 private:
  BackboneConfig config_;
  Stem stem_{nullptr};
  std::vector<Stage> stages_;
};
TORCH_MODULE(ResNetBackbone);

/// backbone -> 1x1 score conv -> fixed bilinear upsample back to the input
/// resolution. Output: (B, num_classes, H, W) logits.
class FcnSegmenterImpl : public torch::nn::Module {
 public:
  explicit FcnSegmenterImpl(const ModelSpec& spec);

  torch::Tensor forward(torch::Tensor x);

  ResNetBackbone backbone() { return backbone_; }
  const ModelSpec& spec() const { return spec_; }

 private:
  ModelSpec spec_;
  ResNetBackbone backbone_{nullptr};
  torch::nn::Conv2d score_{nullptr};
};
TORCH_MODULE(FcnSegmenter);

/// backbone -> global average pool -> fully connected layer to one logit.
/// forward() returns raw logits of shape (B); probability() applies sigmoid.
class PatchClassifierImpl : public torch::nn::Module {
 public:
  explicit PatchClassifierImpl(const ModelSpec& spec);

  torch::Tensor forward(torch::Tensor x);
  torch::Tensor probability(torch::Tensor x) { return torch::sigmoid(forward(std::move(x))); }

  ResNetBackbone backbone() { return backbone_; }
  const ModelSpec& spec() const { return spec_; }

 private:
  ModelSpec spec_;
  ResNetBackbone backbone_{nullptr};
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(PatchClassifier);

ResNetBackbone build_backbone(const BackboneConfig& config = {});
FcnSegmenter build_fcn(const ModelSpec& spec);
PatchClassifier build_classifier(const ModelSpec& spec);

/// The canonical backbone parameter/buffer names, in traversal order:
/// stem.{conv,norm} then stage{1..4}.block{i}.{conv1,norm1,conv2,norm2,
/// conv3,norm3[,proj,proj_norm]}. Conv layers contribute `.weight`; norm
/// layers contribute `.weight`, `.bias`, `.running_mean`, `.running_var`.
std::vector<std::string> canonical_backbone_names(const BackboneConfig& config = {});

/// Returns exactly the backbone parameters and normalization statistics
/// under the canonical naming scheme, as detached CPU copies.
NamedWeights extract_backbone_weights(ResNetBackbone backbone);
NamedWeights extract_backbone_weights(FcnSegmenter model);
NamedWeights extract_backbone_weights(PatchClassifier model);

/// Overwrites backbone parameters/statistics from `weights`, leaving task
/// heads untouched. Strict mode throws on any missing, extra or
/// shape-mismatched key; lenient mode skips offenders with warnings.
void inject_backbone_weights(ResNetBackbone backbone, const NamedWeights& weights, bool strict);
void inject_backbone_weights(FcnSegmenter model, const NamedWeights& weights, bool strict);
void inject_backbone_weights(PatchClassifier model, const NamedWeights& weights, bool strict);

/// Loads a backbone checkpoint and keeps only canonical keys; anything else
/// (e.g. a pretrained file's classification head) is dropped with a warning.
/// A leading "backbone." prefix on stored names is accepted and stripped.
NamedWeights load_pretrained_backbone(const std::filesystem::path& path,
                                      const BackboneConfig& config = {});

/// Re-draws every parameter of `module` deterministically from `seed`:
/// He fan-in normal for conv/linear weights, zero biases, ones/zeros for
/// normalization scale/shift, reset running statistics.
void random_init(torch::nn::Module& module, uint64_t seed);

}  // namespace polypseg::models
