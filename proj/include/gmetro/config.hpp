#pragma once

#include "gmetro/evaluation.hpp"
#include "gmetro/synthetic.hpp"
#include "gmetro/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gmetro {

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct DatasetSource {
  std::filesystem::path path;            // on-disk dataset directory
  std::optional<SyntheticSpec> synthetic;  // generator for gen-data (and for a missing path)
};

struct EvalSettings {
  Metric metric = Metric::accuracy;
  int batch_size = 64;
  std::uint64_t eval_seed = 0;
  int invariance_trials = 100;
  int invariance_max_instances = 64;
  InvarianceNorm invariance_norm = InvarianceNorm::row_min_max;
  int probe_instances = 64;
};

/// Target for shift discovery: another dataset on disk, or the source test
/// partition with planted transform kinds. Neither means the clean test set.
struct DiscoverSettings {
  std::optional<std::filesystem::path> target_dataset;
  std::vector<TransformKind> planted;
};

struct ExperimentConfig {
  std::string name;
  TaskKind task = TaskKind::node;
  DatasetSource dataset;
  TransformSet transforms;
  int k = 2;
  nn::EncoderArch encoder;
  std::optional<nn::EncoderArch> gate_encoder;
  ExpertMode expert_mode = ExpertMode::independent_encoders;
  AggregationMode aggregation = AggregationMode::softmax_sum;
  TrainConfig train;  // method and seed are set per run
  std::vector<Method> methods;
  Method baseline = Method::erm;
  std::vector<std::uint64_t> seeds;
  EvalSettings eval;
  DiscoverSettings discover;
  std::filesystem::path output_dir;

  nlohmann::json resolved;  // preset merged with the user document
  std::string hash;         // of `resolved` without output_dir and seeds

  ModelConfig model_config(int in_dim, int num_classes) const;
};

/// Named defaults: "synthetic-node" and "synthetic-graph".
nlohmann::json preset(std::string_view name);
std::vector<std::string> preset_names();

/// Merges the document over its preset (if any), then parses and validates.
/// Relative paths resolve against `base_dir`. Every problem found is
/// reported together in one ConfigError.
ExperimentConfig parse_config(const nlohmann::json& document, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& file);

/// 16 hex digits of FNV-1a over the canonical dump.
std::string config_hash(const nlohmann::json& resolved);

}  // namespace gmetro
