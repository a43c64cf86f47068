#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <compare>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gmetro {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A referenced dataset or checkpoint does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

enum class TaskKind { node, graph };
enum class Split : std::uint8_t { none, train, val, test };
enum class PoolMode { add, mean };

std::string_view to_string(TaskKind t);
std::string_view to_string(Split s);
std::string_view to_string(PoolMode p);
TaskKind parse_task_kind(std::string_view s);
Split parse_split(std::string_view s);
PoolMode parse_pool_mode(std::string_view s);

struct Edge {
  int src = 0;
  int dst = 0;
  auto operator<=>(const Edge&) const = default;
};

/// Attributed graph. Node ids are dense 0..N-1. Undirected graphs store both
/// directions of every edge; transforms treat such a pair as one unit.
/// Values are treated as immutable once built; transforms return new graphs.
struct Graph {
  Matrix node_features;                       // N x d_v
  std::vector<Edge> edges;                    // directed storage
  std::optional<Matrix> edge_features;        // E x d_e, row-aligned with edges
  std::optional<std::vector<int>> node_labels;
  std::optional<int> graph_label;
  std::optional<std::vector<Split>> node_split;  // one split tag per node
  bool directed = false;

  int num_nodes() const { return static_cast<int>(node_features.rows()); }
  int num_edges() const { return static_cast<int>(edges.size()); }
  int feature_dim() const { return static_cast<int>(node_features.cols()); }
  int edge_feature_dim() const { return edge_features ? static_cast<int>(edge_features->cols()) : 0; }

  bool operator==(const Graph&) const = default;
};

/// Empty iff every structural invariant holds.
std::vector<std::string> validate_graph(const Graph& g);
/// Also requires the label matching `task` (and only that one).
std::vector<std::string> validate_graph(const Graph& g, TaskKind task);

/// Node task: one graph whose nodes carry split tags.
/// Graph task: three disjoint collections of graphs.
struct DatasetSplit {
  TaskKind task = TaskKind::graph;
  int num_classes = 0;
  std::vector<Graph> train, val, test;  // graph task
  Graph graph;                          // node task

  const std::vector<Graph>& graphs(Split s) const;
  std::vector<Graph>& graphs(Split s);
  std::vector<int> nodes(Split s) const;  // node task
  int size(Split s) const;
  int feature_dim() const;
  int edge_feature_dim() const;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Seeded partition of a graph collection (graph task).
DatasetSplit split_dataset(std::vector<Graph> graphs, int num_classes, SplitFractions fractions,
                           std::uint64_t seed);
/// Seeded partition of the nodes of one graph (node task); overwrites node_split.
DatasetSplit split_dataset(Graph graph, int num_classes, SplitFractions fractions, std::uint64_t seed);

/// Split sizes (train, val, test) for n items.
std::array<int, 3> split_sizes(int n, SplitFractions fractions);

/// Column-wise sum or mean of node representations.
RowVector pool(const Matrix& node_reps, PoolMode mode);

/// Unit index per stored edge: both directions of an undirected edge share one
/// unit id. Units are numbered in order of first appearance.
std::vector<int> edge_units(const Graph& g, int* num_units = nullptr);

int infer_num_classes(const std::vector<Graph>& graphs);

}  // namespace gmetro
