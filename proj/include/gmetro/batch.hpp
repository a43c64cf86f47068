#pragma once

#include "gmetro/graph.hpp"

#include <Eigen/SparseCore>

#include <span>
#include <vector>

namespace gmetro {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Message-passing view of a (possibly batched) graph, built once and shared
/// by every encoder that runs over it.
struct PreparedGraph {
  Matrix x;                         // N x d_v
  int num_nodes = 0;
  int num_graphs = 1;
  std::vector<int> graph_of_node;   // segment id per node
  // Incoming adjacency with one self loop per node, CSR by target.
  std::vector<int> in_offsets;
  std::vector<int> in_sources;
  SparseMatrix gcn_norm;            // D^-1/2 (A+I) D^-1/2
  SparseMatrix sum_adj;             // A + I
};

PreparedGraph prepare_graph(const Graph& g);
/// Disjoint union; node rows are concatenated in order.
PreparedGraph prepare_union(std::span<const Graph* const> graphs);

/// The unit fed to a model: a prepared graph plus the rows to score.
/// Graph task: one output row per member graph. Node task: one row per
/// evaluated node; `origin` maps each row back to the source node id.
struct Batch {
  TaskKind task = TaskKind::graph;
  PreparedGraph graph;
  std::vector<int> rows;
  std::vector<int> origin;
  std::vector<int> labels;  // empty when unlabeled

  int size() const { return task == TaskKind::graph ? graph.num_graphs : static_cast<int>(rows.size()); }
};

Batch make_graph_batch(std::span<const Graph* const> graphs);
Batch make_graph_batch(std::span<const Graph> graphs);

/// Rows are the nodes tagged `which`; with Split::none every node is scored.
/// `node_origin` (optional) gives the source id of every node of `g`.
Batch make_node_batch(const Graph& g, Split which, std::span<const int> node_origin = {});

}  // namespace gmetro
