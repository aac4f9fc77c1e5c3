#include <fstream>
#include <iostream>

#include <json.hpp>

#include "polypseg/checkpoint.hpp"
#include "polypseg/training.hpp"

namespace polypseg::training {

namespace fs = std::filesystem;
using nlohmann::json;

Scheme scheme_from_string(const std::string& s) {
  if (s == "s0_baseline") return Scheme::s0_baseline;
  if (s == "scheme1") return Scheme::scheme1;
  if (s == "scheme2") return Scheme::scheme2;
  if (s == "scheme1_extended") return Scheme::scheme1_extended;
  throw std::invalid_argument("unknown scheme: " + s);
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::s0_baseline: return "s0_baseline";
    case Scheme::scheme1: return "scheme1";
    case Scheme::scheme2: return "scheme2";
    case Scheme::scheme1_extended: return "scheme1_extended";
  }
  return "scheme1";
}

int ExperimentConfig::scaled_epochs(const OptimizerSpec& opt) const {
  return std::max(1, static_cast<int>(std::lround(opt.epochs * epoch_scale)));
}

namespace {

cv::Size parse_size(const json& j) {
  if (j.is_number_integer()) {
    const int s = j.get<int>();
    return {s, s};
  }
  if (j.is_array() && j.size() == 2)  // stored as [height, width]
    return {j[1].get<int>(), j[0].get<int>()};
  throw std::invalid_argument("size must be an integer or a [height, width] pair");
}

json dump_size(cv::Size size) { return json::array({size.height, size.width}); }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam_amsgrad") return OptimizerKind::adam_amsgrad;
  throw std::invalid_argument("unknown optimizer kind: " + s);
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adam_amsgrad";
}

LrSchedule schedule_from_string(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine_decay") return LrSchedule::cosine_decay;
  throw std::invalid_argument("unknown lr schedule: " + s);
}

std::string to_string(LrSchedule schedule) {
  return schedule == LrSchedule::constant ? "constant" : "cosine_decay";
}

void parse_optimizer(const json& j, OptimizerSpec& spec) {
  if (j.contains("optimizer")) spec.kind = optimizer_kind_from_string(j.at("optimizer"));
  if (j.contains("lr")) spec.lr = j.at("lr").get<double>();
  if (j.contains("momentum")) spec.momentum = j.at("momentum").get<double>();
  if (j.contains("schedule")) spec.schedule = schedule_from_string(j.at("schedule"));
  if (j.contains("epochs")) spec.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) spec.batch_size = j.at("batch_size").get<int>();
}

json dump_optimizer(const OptimizerSpec& spec) {
  return json{{"optimizer", to_string(spec.kind)}, {"lr", spec.lr},
              {"momentum", spec.momentum},        {"schedule", to_string(spec.schedule)},
              {"epochs", spec.epochs},            {"batch_size", spec.batch_size}};
}

}  // namespace

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed config " + path.string() + ": " + e.what());
  }

  ExperimentConfig cfg;
  if (j.contains("scheme")) cfg.scheme = scheme_from_string(j.at("scheme"));
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.contains("root")) cfg.dataset_root = d.at("root").get<std::string>();
    if (d.contains("layout"))
      cfg.dataset_layout = datasets::layout_from_string(d.at("layout").get<std::string>());
  }
  if (j.contains("input_size")) cfg.input_size = parse_size(j.at("input_size"));
  if (j.contains("classifier_input_size"))
    cfg.classifier_input_size = parse_size(j.at("classifier_input_size"));
  if (j.contains("pretrained_path"))
    cfg.pretrained_path = j.at("pretrained_path").get<std::string>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("epoch_scale")) cfg.epoch_scale = j.at("epoch_scale").get<double>();
  if (j.contains("fcn")) parse_optimizer(j.at("fcn"), cfg.fcn_opt);
  if (j.contains("cnn")) parse_optimizer(j.at("cnn"), cfg.cnn_opt);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    if (a.contains("scale_min")) cfg.augment.scale_min = a.at("scale_min").get<double>();
    if (a.contains("scale_max")) cfg.augment.scale_max = a.at("scale_max").get<double>();
    if (a.contains("rotation_max_deg"))
      cfg.augment.rotation_max_deg = a.at("rotation_max_deg").get<double>();
    if (a.contains("hflip")) cfg.augment.hflip = a.at("hflip").get<bool>();
    if (a.contains("vflip")) cfg.augment.vflip = a.at("vflip").get<bool>();
    if (a.contains("shift_frac")) cfg.augment.shift_frac = a.at("shift_frac").get<double>();
    if (a.contains("pad_value")) cfg.augment.pad_value = a.at("pad_value").get<uint8_t>();
    if (a.contains("patches")) cfg.augment_patches = a.at("patches").get<bool>();
  }
  if (j.contains("bg_patches_per_image"))
    cfg.bg_patches_per_image = j.at("bg_patches_per_image").get<int>();
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();

  cfg.fcn_opt.validate();
  cfg.cnn_opt.validate();
  cfg.augment.validate();
  return cfg;
}

void save_experiment_config(const ExperimentConfig& cfg, const fs::path& path) {
  json j;
  j["scheme"] = to_string(cfg.scheme);
  j["dataset"] = {{"root", cfg.dataset_root.string()},
                  {"layout", datasets::to_string(cfg.dataset_layout)}};
  j["input_size"] = dump_size(cfg.input_size);
  j["classifier_input_size"] = dump_size(cfg.classifier_input_size);
  j["pretrained_path"] = cfg.pretrained_path.string();
  j["seed"] = cfg.seed;
  j["epoch_scale"] = cfg.epoch_scale;
  j["fcn"] = dump_optimizer(cfg.fcn_opt);
  j["cnn"] = dump_optimizer(cfg.cnn_opt);
  j["augment"] = {{"scale_min", cfg.augment.scale_min},
                  {"scale_max", cfg.augment.scale_max},
                  {"rotation_max_deg", cfg.augment.rotation_max_deg},
                  {"hflip", cfg.augment.hflip},
                  {"vflip", cfg.augment.vflip},
                  {"shift_frac", cfg.augment.shift_frac},
                  {"pad_value", cfg.augment.pad_value},
                  {"patches", cfg.augment_patches}};
  j["bg_patches_per_image"] = cfg.bg_patches_per_image;
  j["output_dir"] = cfg.output_dir.string();

  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path.string());
  out << j.dump(2) << "\n";
}

const StageArtifact* SchemeResult::find(const std::string& name) const {
  for (const auto& stage : stages)
    if (stage.name == name) return &stage;
  return nullptr;
}

PatchSets make_patch_sets(const DatasetSplit& data, int bg_per_image, uint64_t seed) {
  PatchSets sets;
  auto collect = [&](const std::vector<Sample>& samples, std::vector<Patch>& out,
                     uint64_t split_tag) {
    for (size_t i = 0; i < samples.size(); ++i) {
      const auto& sample = samples[i];
      auto polyp = datasets::generate_polyp_patches(sample);
      out.insert(out.end(), polyp.begin(), polyp.end());
      const int short_side = std::min(sample.image.rows, sample.image.cols);
      const int max_px = std::max(1, short_side / 2);
      const int min_px = std::min(32, max_px);
      std::mt19937 rng(derive_seed(seed, "bg_patches", split_tag, i));
      auto background =
          datasets::generate_background_patches(sample, bg_per_image, {min_px, max_px}, rng);
      out.insert(out.end(), background.begin(), background.end());
    }
  };
  collect(data.train, sets.train, 0);
  collect(data.val, sets.val, 1);
  return sets;
}

namespace {

struct SchemeRunner {
  const ExperimentConfig& cfg;
  const DatasetSplit& data;
  PatchSets patches;
  SchemeResult result;
  int stage_index = 0;

  models::ModelSpec fcn_spec() const {
    return {models::ModelKind::fcn_segmenter, 2, cfg.input_size, {}};
  }
  models::ModelSpec cnn_spec() const {
    return {models::ModelKind::patch_classifier, 2, cfg.classifier_input_size, {}};
  }

  void write_manifest() const {
    json stages = json::array();
    for (const auto& stage : result.stages) {
      stages.push_back({{"name", stage.name},
                        {"init_checkpoint", stage.init_checkpoint.string()},
                        {"best_checkpoint", stage.best_checkpoint.string()},
                        {"final_checkpoint", stage.final_checkpoint.string()},
                        {"history", stage.history_csv.string()}});
    }
    const fs::path reports = cfg.output_dir / "reports";
    fs::create_directories(reports);
    std::ofstream out(reports / "stages.json");
    out << json{{"scheme", to_string(cfg.scheme)}, {"stages", stages}}.dump(2) << "\n";
  }

  void record(const std::string& name, const TrainResult& train_result) {
    result.stages.push_back(StageArtifact{name, train_result.init_checkpoint,
                                          train_result.best_checkpoint,
                                          train_result.final_checkpoint,
                                          train_result.history_csv});
    write_manifest();
  }

  models::NamedWeights backbone_of(const std::string& stage_name) {
    const StageArtifact* stage = result.find(stage_name);
    if (!stage) throw std::logic_error("stage not trained yet: " + stage_name);
    return models::load_pretrained_backbone(stage->best_checkpoint);
  }

  void run_fcn_stage(const std::string& name, const models::NamedWeights* donor) {
    auto model = models::build_fcn(fcn_spec());
    models::random_init(*model, derive_seed(cfg.seed, "init", stage_index));
    if (donor) models::inject_backbone_weights(model, *donor, /*strict=*/true);

    OptimizerSpec opt = cfg.fcn_opt;
    opt.epochs = cfg.scaled_epochs(cfg.fcn_opt);
    const uint64_t stage_seed = derive_seed(cfg.seed, "stage", stage_index);
    record(name, train_segmentation(model, data, opt, cfg.augment, stage_seed, cfg.output_dir,
                                    name));
    ++stage_index;
  }

  void run_cnn_stage(const std::string& name, const models::NamedWeights& donor) {
    auto model = models::build_classifier(cnn_spec());
    models::random_init(*model, derive_seed(cfg.seed, "init", stage_index));
    models::inject_backbone_weights(model, donor, /*strict=*/true);

    OptimizerSpec opt = cfg.cnn_opt;
    opt.epochs = cfg.scaled_epochs(cfg.cnn_opt);
    const uint64_t stage_seed = derive_seed(cfg.seed, "stage", stage_index);
    const std::optional<datasets::AugmentConfig> aug =
        cfg.augment_patches ? std::optional(cfg.augment) : std::nullopt;
    record(name, train_classifier(model, patches.train, patches.val, opt, aug, stage_seed,
                                  cfg.output_dir, name));
    ++stage_index;
  }
};

}  // namespace

SchemeResult run_scheme(Scheme scheme, const DatasetSplit& data, const ExperimentConfig& cfg) {
  const bool needs_pretrained = scheme != Scheme::s0_baseline;
  if (needs_pretrained) {
    if (cfg.pretrained_path.empty())
      throw std::runtime_error("scheme " + to_string(scheme) +
                               " requires pretrained_path in the config");
    if (!fs::exists(cfg.pretrained_path))
      throw std::runtime_error("pretrained weights not found: " + cfg.pretrained_path.string());
  }
  if (cfg.output_dir.empty()) throw std::runtime_error("output_dir must be set");

  SchemeRunner runner{cfg, data};
  const bool needs_patches = scheme != Scheme::s0_baseline;
  if (needs_patches)
    runner.patches = make_patch_sets(data, cfg.bg_patches_per_image, cfg.seed);

  switch (scheme) {
    case Scheme::s0_baseline: {
      runner.run_fcn_stage("S0", nullptr);
      break;
    }
    case Scheme::scheme1:
    case Scheme::scheme1_extended: {
      const auto pretrained = models::load_pretrained_backbone(cfg.pretrained_path);
      runner.run_fcn_stage("S1", &pretrained);
      {
        const auto s1 = runner.backbone_of("S1");
        runner.run_cnn_stage("C2", s1);
      }
      {
        const auto c2 = runner.backbone_of("C2");
        runner.run_fcn_stage("S3", &c2);
      }
      if (scheme == Scheme::scheme1_extended) {
        {
          const auto s3 = runner.backbone_of("S3");
          runner.run_cnn_stage("C2b", s3);
        }
        {
          const auto c2b = runner.backbone_of("C2b");
          runner.run_fcn_stage("S4", &c2b);
        }
      }
      break;
    }
    case Scheme::scheme2: {
      const auto pretrained = models::load_pretrained_backbone(cfg.pretrained_path);
      runner.run_cnn_stage("C1", pretrained);
      {
        const auto c1 = runner.backbone_of("C1");
        runner.run_fcn_stage("S2", &c1);
      }
      {
        const auto s2 = runner.backbone_of("S2");
        runner.run_cnn_stage("C3", s2);
      }
      break;
    }
  }
  return std::move(runner.result);
}

}  // namespace polypseg::training
