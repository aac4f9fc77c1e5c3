#pragma once

#include <filesystem>
#include <string>
#include <utility>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "polypseg/models.hpp"

namespace polypseg::models {

/// Checkpoint files are single-file archives: a fixed magic, a JSON metadata
/// record, then named little-endian float32 arrays with explicit shape
/// headers. The same format serves pretrained backbone input and training
/// output.
struct CheckpointMeta {
  int format_version = 1;
  std::string model_kind;  // "fcn_segmenter" | "patch_classifier" | "backbone"
  cv::Size input_size{0, 0};
  std::string created_by;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const NamedWeights& weights);

/// Throws std::runtime_error on missing, truncated or malformed files.
std::pair<CheckpointMeta, NamedWeights> load_checkpoint(const std::filesystem::path& path);

/// All parameters and normalization statistics of a model under its own
/// hierarchical names (e.g. "backbone.stem.conv.weight", "score.weight").
/// Integer bookkeeping buffers (num_batches_tracked) are not part of the
/// transferable state.
NamedWeights model_state(torch::nn::Module& module);

/// Writes `weights` back into the module by name. Strict mode requires the
/// exact same name set and shapes as model_state(module).
void load_model_state(torch::nn::Module& module, const NamedWeights& weights, bool strict = true);

}  // namespace polypseg::models
