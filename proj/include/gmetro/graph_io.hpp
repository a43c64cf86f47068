#pragma once

#include "gmetro/graph.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace gmetro {

/// On-disk dataset layout, version 1.
///
///   node task:  nodes.csv  id,f0..f{d_v-1},label,split
///               edges.csv  src,dst[,e0..e{d_e-1}]
///               meta.json
///   graph task: graphs.jsonl  one graph object per line (see graph_to_json)
///               meta.json
///
/// meta.json: {"format_version":1,"task_kind":..,"d_v":..,"d_e":..,
///             "num_classes":..,"directed":..}
inline constexpr int kDatasetFormatVersion = 1;

struct DatasetMeta {
  int format_version = kDatasetFormatVersion;
  TaskKind task = TaskKind::graph;
  int d_v = 0;
  int d_e = 0;
  int num_classes = 0;
  bool directed = false;
};

nlohmann::json graph_to_json(const Graph& g, Split split = Split::none);
Graph graph_from_json(const nlohmann::json& j, Split* split = nullptr);

/// Shortest round-trip decimal form of a double.
std::string format_double(double x);
double parse_double(std::string_view s);

void write_dataset(const std::filesystem::path& dir, const DatasetSplit& data);
DatasetMeta read_meta(const std::filesystem::path& dir);
/// Reads a dataset directory; split tags stored on disk are honoured.
DatasetSplit read_dataset(const std::filesystem::path& dir);

/// Unlabeled or labeled graphs without split semantics (e.g. target data).
std::vector<Graph> read_graphs_jsonl(const std::filesystem::path& file);

}  // namespace gmetro
