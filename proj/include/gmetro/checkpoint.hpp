#pragma once

#include "gmetro/moe.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace gmetro {

inline constexpr int kCheckpointFormatVersion = 1;

/// Free-form provenance stored next to the parameters.
struct CheckpointInfo {
  std::string method;
  std::string config_hash;
  std::uint64_t seed = 0;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
};

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  std::vector<std::string> transform_index;
  CheckpointInfo info;
};

nlohmann::json checkpoint_to_json(const Model& model, const std::vector<std::string>& transform_index,
                                  const CheckpointInfo& info);
LoadedCheckpoint checkpoint_from_json(const nlohmann::json& j,
                                      const std::vector<std::string>* expected_index = nullptr);

void save_checkpoint(const std::filesystem::path& file, const Model& model,
                     const std::vector<std::string>& transform_index, const CheckpointInfo& info);
/// Throws when the file is missing, malformed, of another format version, or
/// when `expected_index` is given and the stored transform index differs.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& file,
                                 const std::vector<std::string>* expected_index = nullptr);

}  // namespace gmetro
