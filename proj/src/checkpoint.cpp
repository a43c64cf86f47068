#include "gmetro/checkpoint.hpp"

#include <fstream>

namespace gmetro {

using nlohmann::json;

json checkpoint_to_json(const Model& model, const std::vector<std::string>& transform_index,
                        const CheckpointInfo& info) {
  json params = json::array();
  for (const auto& p : model.parameters().items()) {
    const Matrix& m = p.var.value();
    std::vector<double> data(m.data(), m.data() + m.size());
    params.push_back({{"name", p.name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}});
  }
  return {{"format_version", kCheckpointFormatVersion},
          {"model_kind", std::string(model.kind())},
          {"config", to_json(model.config())},
          {"transform_index", transform_index},
          {"method", info.method},
          {"config_hash", info.config_hash},
          {"seed", info.seed},
          {"best_epoch", info.best_epoch},
          {"best_val_accuracy", info.best_val_accuracy},
          {"parameters", std::move(params)}};
}

LoadedCheckpoint checkpoint_from_json(const json& j, const std::vector<std::string>* expected_index) {
  if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw Error("unsupported checkpoint format version");
  LoadedCheckpoint out;
  out.transform_index = j.at("transform_index").get<std::vector<std::string>>();
  if (expected_index && *expected_index != out.transform_index) {
    std::string want, got;
    for (const auto& s : *expected_index) want += (want.empty() ? "" : ",") + s;
    for (const auto& s : out.transform_index) got += (got.empty() ? "" : ",") + s;
    throw Error("transform index map mismatch: checkpoint has [" + got + "], config has [" + want + "]");
  }
  out.info.method = j.value("method", "");
  out.info.config_hash = j.value("config_hash", "");
  out.info.seed = j.value("seed", std::uint64_t{0});
  out.info.best_epoch = j.value("best_epoch", -1);
  out.info.best_val_accuracy = j.value("best_val_accuracy", 0.0);
  out.model = make_model(j.at("model_kind").get<std::string>(), model_config_from_json(j.at("config")), 0);
  auto& items = out.model->parameters().items();
  const auto& stored = j.at("parameters");
  if (stored.size() != items.size()) throw Error("checkpoint parameter count does not match the model");
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& s = stored[i];
    if (s.at("name").get<std::string>() != items[i].name)
      throw Error("checkpoint parameter '" + s.at("name").get<std::string>() + "' does not match '" +
                  items[i].name + "'");
    const auto rows = s.at("rows").get<Eigen::Index>();
    const auto cols = s.at("cols").get<Eigen::Index>();
    const auto data = s.at("data").get<std::vector<double>>();
    if (rows != items[i].var.rows() || cols != items[i].var.cols() ||
        static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw Error("checkpoint parameter shape mismatch for '" + items[i].name + "'");
    items[i].var.mutable_value() = Eigen::Map<const Matrix>(data.data(), rows, cols);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& file, const Model& model,
                     const std::vector<std::string>& transform_index, const CheckpointInfo& info) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << checkpoint_to_json(model, transform_index, info).dump() << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file, const std::vector<std::string>* expected_index) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("checkpoint not found: " + file.string());
  return checkpoint_from_json(json::parse(in), expected_index);
}

}  // namespace gmetro
