#include "polypseg/models.hpp"

#include <iostream>
#include <sstream>
#include <stdexcept>

#include "polypseg/checkpoint.hpp"

namespace polypseg::models {

namespace {

constexpr std::array<int, 4> kStagePlanes{64, 128, 256, 512};
constexpr int kStemChannels = 64;

torch::nn::Conv2d conv1x1(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride).bias(false));
}

torch::nn::Conv2d conv3x3(int in, int out, int stride, int dilation) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3)
                               .stride(stride)
                               .padding(dilation)
                               .dilation(dilation)
                               .bias(false));
}

}  // namespace

void BackboneConfig::validate() const {
  if (block_counts != std::array<int, 4>{3, 4, 6, 3})
    throw std::invalid_argument("block_counts must be the ResNet50 schedule {3,4,6,3}");
  for (int i = 0; i < 4; ++i) {
    if (stage_strides[i] != 1 && stage_strides[i] != 2)
      throw std::invalid_argument("stage_strides entries must be 1 or 2");
    if (stage_dilations[i] < 1) throw std::invalid_argument("stage_dilations entries must be >= 1");
  }
}

std::string to_string(ModelKind kind) {
  return kind == ModelKind::fcn_segmenter ? "fcn_segmenter" : "patch_classifier";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "fcn_segmenter") return ModelKind::fcn_segmenter;
  if (s == "patch_classifier") return ModelKind::patch_classifier;
  throw std::invalid_argument("unknown model kind: " + s);
}

void NamedWeights::add(std::string name, const torch::Tensor& value) {
  if (contains(name)) throw std::invalid_argument("duplicate weight name: " + name);
  auto t = value.detach().to(torch::kFloat32).cpu().contiguous();
  if (!torch::isfinite(t).all().item<bool>())
    throw std::invalid_argument("non-finite values in weight: " + name);
  entries_.emplace_back(std::move(name), std::move(t));
}

const torch::Tensor* NamedWeights::find(const std::string& name) const {
  for (const auto& [key, value] : entries_)
    if (key == name) return &value;
  return nullptr;
}

std::vector<std::string> NamedWeights::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [key, value] : entries_) out.push_back(key);
  return out;
}

BottleneckImpl::BottleneckImpl(int in_channels, int planes, int stride, int dilation,
                               bool with_projection) {
  const int out_channels = planes * kExpansion;
  conv1_ = register_module("conv1", conv1x1(in_channels, planes));
  norm1_ = register_module("norm1", torch::nn::BatchNorm2d(planes));
  conv2_ = register_module("conv2", conv3x3(planes, planes, stride, dilation));
  norm2_ = register_module("norm2", torch::nn::BatchNorm2d(planes));
  conv3_ = register_module("conv3", conv1x1(planes, out_channels));
  norm3_ = register_module("norm3", torch::nn::BatchNorm2d(out_channels));
  if (with_projection) {
    proj_ = register_module("proj", conv1x1(in_channels, out_channels, stride));
    proj_norm_ = register_module("proj_norm", torch::nn::BatchNorm2d(out_channels));
  }
}

torch::Tensor BottleneckImpl::forward(torch::Tensor x) {
  auto identity = proj_ ? proj_norm_(proj_(x)) : x;
  auto out = norm1_(conv1_(x)).relu_();
  out = norm2_(conv2_(out)).relu_();
  out = norm3_(conv3_(out));
  out += identity;
  return out.relu_();
}

StemImpl::StemImpl() {
  conv_ = register_module(
      "conv", torch::nn::Conv2d(
                  torch::nn::Conv2dOptions(3, kStemChannels, 7).stride(2).padding(3).bias(false)));
  norm_ = register_module("norm", torch::nn::BatchNorm2d(kStemChannels));
}

torch::Tensor StemImpl::forward(torch::Tensor x) {
  x = norm_(conv_(x)).relu_();
  return torch::max_pool2d(x, /*kernel_size=*/3, /*stride=*/2, /*padding=*/1);
}

StageImpl::StageImpl(int in_channels, int planes, int blocks, int stride, int dilation) {
  for (int i = 0; i < blocks; ++i) {
    const bool first = i == 0;
    blocks_.push_back(register_module(
        "block" + std::to_string(i),
        Bottleneck(first ? in_channels : planes * BottleneckImpl::kExpansion, planes,
                   first ? stride : 1, dilation, /*with_projection=*/first)));
  }
}

torch::Tensor StageImpl::forward(torch::Tensor x) {
  for (auto& block : blocks_) x = block(x);
  return x;
}

ResNetBackboneImpl::ResNetBackboneImpl(const BackboneConfig& config) : config_(config) {
  config_.validate();
  stem_ = register_module("stem", Stem());
  int in_channels = kStemChannels;
  for (int s = 0; s < 4; ++s) {
    stages_.push_back(register_module(
        "stage" + std::to_string(s + 1),
        Stage(in_channels, kStagePlanes[s], config_.block_counts[s], config_.stage_strides[s],
              config_.stage_dilations[s])));
    in_channels = kStagePlanes[s] * BottleneckImpl::kExpansion;
  }
}

torch::Tensor ResNetBackboneImpl::forward(torch::Tensor x) {
  const auto os = static_cast<int64_t>(config_.output_stride());
  if (x.dim() != 4 || x.size(1) != 3)
    throw std::invalid_argument("backbone input must be (B, 3, H, W)");
  if (x.size(2) % os != 0 || x.size(3) % os != 0) {
    std::ostringstream msg;
    msg << "backbone input " << x.size(2) << "x" << x.size(3)
        << " must have height and width divisible by " << os;
    throw std::invalid_argument(msg.str());
  }
  x = stem_(x);
  for (auto& stage : stages_) x = stage->forward(x);
  return x;
}

FcnSegmenterImpl::FcnSegmenterImpl(const ModelSpec& spec) : spec_(spec) {
  if (spec_.kind != ModelKind::fcn_segmenter)
    throw std::invalid_argument("ModelSpec.kind must be fcn_segmenter");
  backbone_ = register_module("backbone", ResNetBackbone(spec_.backbone));
  score_ = register_module(
      "score", torch::nn::Conv2d(torch::nn::Conv2dOptions(ResNetBackboneImpl::kFeatureChannels,
                                                          spec_.num_classes, 1)));
}

torch::Tensor FcnSegmenterImpl::forward(torch::Tensor x) {
  const auto height = x.size(2);
  const auto width = x.size(3);
  auto logits = score_(backbone_->forward(std::move(x)));
  namespace F = torch::nn::functional;
  return F::interpolate(logits, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{height, width})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

PatchClassifierImpl::PatchClassifierImpl(const ModelSpec& spec) : spec_(spec) {
  if (spec_.kind != ModelKind::patch_classifier)
    throw std::invalid_argument("ModelSpec.kind must be patch_classifier");
  backbone_ = register_module("backbone", ResNetBackbone(spec_.backbone));
  fc_ = register_module("fc", torch::nn::Linear(ResNetBackboneImpl::kFeatureChannels, 1));
}

torch::Tensor PatchClassifierImpl::forward(torch::Tensor x) {
  auto features = backbone_->forward(std::move(x));
  auto pooled = torch::adaptive_avg_pool2d(features, {1, 1}).flatten(1);
  return fc_(pooled).squeeze(-1);
}

ResNetBackbone build_backbone(const BackboneConfig& config) { return ResNetBackbone(config); }

FcnSegmenter build_fcn(const ModelSpec& spec) { return FcnSegmenter(spec); }

PatchClassifier build_classifier(const ModelSpec& spec) { return PatchClassifier(spec); }

std::vector<std::string> canonical_backbone_names(const BackboneConfig& config) {
  std::vector<std::string> names;
  auto add_norm = [&](const std::string& prefix) {
    names.push_back(prefix + ".weight");
    names.push_back(prefix + ".bias");
    names.push_back(prefix + ".running_mean");
    names.push_back(prefix + ".running_var");
  };
  names.push_back("stem.conv.weight");
  add_norm("stem.norm");
  for (int s = 1; s <= 4; ++s) {
    for (int b = 0; b < config.block_counts[s - 1]; ++b) {
      const std::string block = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      for (int c = 1; c <= 3; ++c) {
        names.push_back(block + ".conv" + std::to_string(c) + ".weight");
        add_norm(block + ".norm" + std::to_string(c));
      }
      if (b == 0) {
        names.push_back(block + ".proj.weight");
        add_norm(block + ".proj_norm");
      }
    }
  }
  return names;
}

NamedWeights extract_backbone_weights(ResNetBackbone backbone) {
  NamedWeights out;
  const auto params = backbone->named_parameters(/*recurse=*/true);
  const auto buffers = backbone->named_buffers(/*recurse=*/true);
  for (const auto& name : canonical_backbone_names(backbone->config())) {
    const torch::Tensor* found = params.find(name);
    if (!found) found = buffers.find(name);
    if (!found) throw std::logic_error("backbone is missing canonical key: " + name);
    out.add(name, found->clone());
  }
  return out;
}

NamedWeights extract_backbone_weights(FcnSegmenter model) {
  return extract_backbone_weights(model->backbone());
}

NamedWeights extract_backbone_weights(PatchClassifier model) {
  return extract_backbone_weights(model->backbone());
}

void inject_backbone_weights(ResNetBackbone backbone, const NamedWeights& weights, bool strict) {
  const auto canonical = canonical_backbone_names(backbone->config());
  auto params = backbone->named_parameters(/*recurse=*/true);
  auto buffers = backbone->named_buffers(/*recurse=*/true);

  auto target = [&](const std::string& name) -> torch::Tensor* {
    if (auto* p = params.find(name)) return p;
    return buffers.find(name);
  };

  std::vector<std::string> missing, extra, mismatched;
  for (const auto& name : canonical)
    if (!weights.contains(name)) missing.push_back(name);
  for (const auto& [name, value] : weights.entries()) {
    torch::Tensor* dst = target(name);
    if (!dst || std::find(canonical.begin(), canonical.end(), name) == canonical.end()) {
      extra.push_back(name);
      continue;
    }
    if (dst->sizes() != value.sizes()) mismatched.push_back(name);
  }

  if (strict && (!missing.empty() || !extra.empty() || !mismatched.empty())) {
    std::ostringstream msg;
    msg << "strict backbone injection failed:";
    auto list = [&](const char* label, const std::vector<std::string>& v) {
      if (v.empty()) return;
      msg << " " << label << " [";
      for (size_t i = 0; i < v.size(); ++i) msg << (i ? ", " : "") << v[i];
      msg << "]";
    };
    list("missing", missing);
    list("unexpected", extra);
    list("shape-mismatched", mismatched);
    throw std::runtime_error(msg.str());
  }
  if (!strict) {
    for (const auto& name : missing)
      std::cerr << "warning: injection skipping missing key " << name << "\n";
    for (const auto& name : extra)
      std::cerr << "warning: injection ignoring unexpected key " << name << "\n";
    for (const auto& name : mismatched)
      std::cerr << "warning: injection skipping shape-mismatched key " << name << "\n";
  }

  torch::NoGradGuard no_grad;
  for (const auto& [name, value] : weights.entries()) {
    if (std::find(extra.begin(), extra.end(), name) != extra.end()) continue;
    if (std::find(mismatched.begin(), mismatched.end(), name) != mismatched.end()) continue;
    target(name)->copy_(value);
  }
}

void inject_backbone_weights(FcnSegmenter model, const NamedWeights& weights, bool strict) {
  inject_backbone_weights(model->backbone(), weights, strict);
}

void inject_backbone_weights(PatchClassifier model, const NamedWeights& weights, bool strict) {
  inject_backbone_weights(model->backbone(), weights, strict);
}

NamedWeights load_pretrained_backbone(const std::filesystem::path& path,
                                      const BackboneConfig& config) {
  auto [meta, stored] = load_checkpoint(path);
  (void)meta;
  const auto canonical = canonical_backbone_names(config);
  NamedWeights out;
  for (const auto& [name, value] : stored.entries()) {
    std::string key = name;
    if (key.rfind("backbone.", 0) == 0) key = key.substr(9);
    if (std::find(canonical.begin(), canonical.end(), key) == canonical.end()) {
      std::cerr << "warning: dropping non-backbone key from pretrained file: " << name << "\n";
      continue;
    }
    out.add(key, value);
  }
  return out;
}

void random_init(torch::nn::Module& module, uint64_t seed) {
  torch::NoGradGuard no_grad;
  torch::manual_seed(seed);
  for (const auto& m : module.modules(/*include_self=*/true)) {
    if (auto* conv = m->as<torch::nn::Conv2d>()) {
      torch::nn::init::kaiming_normal_(conv->weight, /*a=*/0.0, torch::kFanIn, torch::kReLU);
      if (conv->options.bias()) torch::nn::init::zeros_(conv->bias);
    } else if (auto* norm = m->as<torch::nn::BatchNorm2d>()) {
      torch::nn::init::ones_(norm->weight);
      torch::nn::init::zeros_(norm->bias);
      norm->running_mean.zero_();
      norm->running_var.fill_(1.0);
      norm->num_batches_tracked.zero_();
    } else if (auto* linear = m->as<torch::nn::Linear>()) {
      torch::nn::init::kaiming_normal_(linear->weight, /*a=*/0.0, torch::kFanIn, torch::kReLU);
      if (linear->options.bias()) torch::nn::init::zeros_(linear->bias);
    }
  }
}

}  // namespace polypseg::models
