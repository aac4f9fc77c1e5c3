#include "polypseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iostream>
#include <vector>

#include <json.hpp>

namespace polypseg::models {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const NamedWeights& weights) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());

  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);

  nlohmann::json j = {{"format_version", meta.format_version},
                      {"model_kind", meta.model_kind},
                      {"input_size", {{"height", meta.input_size.height},
                                      {"width", meta.input_size.width}}},
                      {"created_by", meta.created_by}};
  const std::string meta_str = j.dump();
  write_pod(out, static_cast<uint32_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  write_pod(out, static_cast<uint64_t>(weights.size()));
  for (const auto& [name, tensor] : weights.entries()) {
    write_pod(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, static_cast<uint32_t>(tensor.dim()));
    for (int64_t d = 0; d < tensor.dim(); ++d) write_pod(out, static_cast<uint64_t>(tensor.size(d)));
    const auto bytes = static_cast<std::streamsize>(tensor.numel() * sizeof(float));
    out.write(reinterpret_cast<const char*>(tensor.data_ptr<float>()), bytes);
  }
  if (!out) throw std::runtime_error("failed while writing checkpoint: " + path.string());
}

std::pair<CheckpointMeta, NamedWeights> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());

  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path.string());
  const auto version = read_pod<uint32_t>(in, "version");
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  const auto meta_len = read_pod<uint32_t>(in, "metadata length");
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), meta_len);
  if (!in) throw std::runtime_error("checkpoint truncated while reading metadata");

  CheckpointMeta meta;
  try {
    const auto j = nlohmann::json::parse(meta_str);
    meta.format_version = j.at("format_version").get<int>();
    meta.model_kind = j.at("model_kind").get<std::string>();
    meta.input_size.height = j.at("input_size").at("height").get<int>();
    meta.input_size.width = j.at("input_size").at("width").get<int>();
    meta.created_by = j.value("created_by", "");
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint metadata: " + std::string(e.what()));
  }

  const auto n_entries = read_pod<uint64_t>(in, "entry count");
  NamedWeights weights;
  for (uint64_t i = 0; i < n_entries; ++i) {
    const auto name_len = read_pod<uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw std::runtime_error("checkpoint truncated while reading entry name");

    const auto ndim = read_pod<uint32_t>(in, "rank");
    if (ndim > 8) throw std::runtime_error("implausible tensor rank in checkpoint: " + name);
    std::vector<int64_t> dims(ndim);
    int64_t numel = 1;
    for (auto& d : dims) {
      d = static_cast<int64_t>(read_pod<uint64_t>(in, "dimension"));
      if (d < 0 || d > (int64_t{1} << 32)) throw std::runtime_error("implausible dimension in " + name);
      numel *= d;
    }
    auto tensor = torch::empty(dims, torch::kFloat32);
    in.read(reinterpret_cast<char*>(tensor.data_ptr<float>()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint truncated while reading data of " + name);
    weights.add(std::move(name), tensor);
  }
  return {meta, std::move(weights)};
}

NamedWeights model_state(torch::nn::Module& module) {
  NamedWeights out;
  for (const auto& item : module.named_parameters(/*recurse=*/true))
    out.add(item.key(), item.value().clone());
  for (const auto& item : module.named_buffers(/*recurse=*/true)) {
    if (item.key().ends_with("num_batches_tracked")) continue;
    out.add(item.key(), item.value().clone());
  }
  return out;
}

void load_model_state(torch::nn::Module& module, const NamedWeights& weights, bool strict) {
  auto params = module.named_parameters(/*recurse=*/true);
  auto buffers = module.named_buffers(/*recurse=*/true);
  auto target = [&](const std::string& name) -> torch::Tensor* {
    if (auto* p = params.find(name)) return p;
    torch::Tensor* b = buffers.find(name);
    if (b && name.ends_with("num_batches_tracked")) return nullptr;
    return b;
  };

  size_t expected = params.size();
  for (const auto& item : buffers)
    if (!item.key().ends_with("num_batches_tracked")) ++expected;

  if (strict && weights.size() != expected)
    throw std::runtime_error("state size mismatch: model has " + std::to_string(expected) +
                             " arrays, checkpoint has " + std::to_string(weights.size()));

  torch::NoGradGuard no_grad;
  for (const auto& [name, value] : weights.entries()) {
    torch::Tensor* dst = target(name);
    if (!dst) {
      if (strict) throw std::runtime_error("checkpoint key not present in model: " + name);
      std::cerr << "warning: ignoring checkpoint key " << name << "\n";
      continue;
    }
    if (dst->sizes() != value.sizes()) {
      if (strict) throw std::runtime_error("shape mismatch for key: " + name);
      std::cerr << "warning: skipping shape-mismatched key " << name << "\n";
      continue;
    }
    dst->copy_(value);
  }
}

}  // namespace polypseg::models
