#pragma once

#include "gmetro/graph.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace gmetro {

enum class Generator { sbm, erdos_renyi };
enum class LabelRule { community, feature_threshold, motif_count };

std::string_view to_string(Generator g);
std::string_view to_string(LabelRule r);
Generator parse_generator(std::string_view s);
LabelRule parse_label_rule(std::string_view s);

/// Desk-scale stand-in for benchmark data.
///
/// Node task: one graph of `num_nodes` nodes. Graph task: `num_graphs`
/// graphs with sizes drawn from [min_nodes, max_nodes].
///
/// Label rules:
///   community          node task: the node's block; graph task: the number
///                      of planted blocks minus one (class c has c+1 blocks)
///   feature_threshold  quantile bin of the closed-neighbourhood mean of
///                      feature 0 (node) or the graph mean of feature 0
///   motif_count        quantile bin of triangles through the node / in the graph
///
/// Features are N(0, feature_noise^2) plus feature_signal on coordinate
/// (block mod feature_dim).
struct SyntheticSpec {
  TaskKind task = TaskKind::node;
  Generator generator = Generator::sbm;
  int num_nodes = 200;
  int num_graphs = 300;
  int min_nodes = 12;
  int max_nodes = 24;
  int communities = 2;
  int feature_dim = 8;
  double p_in = 0.1;
  double p_out = 0.01;
  double p_edge = 0.05;  // erdos_renyi
  double feature_signal = 1.0;
  double feature_noise = 1.0;
  LabelRule label_rule = LabelRule::community;
  int num_classes = 2;  // quantile rules; community uses `communities`
  SplitFractions fractions;
  std::uint64_t seed = 0;

  int classes() const { return label_rule == LabelRule::community ? communities : num_classes; }
  std::vector<std::string> validate() const;
};

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, const SyntheticSpec& base = {});

DatasetSplit generate_synthetic(const SyntheticSpec& spec);
/// Generates and writes the on-disk dataset format.
DatasetSplit write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

/// Triangles through each node of an undirected graph.
std::vector<int> node_triangles(const Graph& g);

}  // namespace gmetro
