#include "gmetro/graph.hpp"

#include "gmetro/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <utility>

namespace gmetro {

std::string_view to_string(TaskKind t) { return t == TaskKind::node ? "node" : "graph"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::none: break;
  }
  return "none";
}

std::string_view to_string(PoolMode p) { return p == PoolMode::add ? "add" : "mean"; }

TaskKind parse_task_kind(std::string_view s) {
  if (s == "node") return TaskKind::node;
  if (s == "graph") return TaskKind::graph;
  throw Error("unknown task kind '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "none" || s.empty()) return Split::none;
  throw Error("unknown split '" + std::string(s) + "'");
}

PoolMode parse_pool_mode(std::string_view s) {
  if (s == "add") return PoolMode::add;
  if (s == "mean") return PoolMode::mean;
  throw Error("unknown pool mode '" + std::string(s) + "'");
}

std::vector<std::string> validate_graph(const Graph& g) {
  std::vector<std::string> out;
  const int n = g.num_nodes();
  for (const Edge& e : g.edges) {
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
      out.emplace_back("edge endpoint out of range");
      break;
    }
  }
  if (g.edge_features && g.edge_features->rows() != g.num_edges())
    out.emplace_back("edge feature row mismatch");
  if (g.node_labels && static_cast<int>(g.node_labels->size()) != n)
    out.emplace_back("node label count mismatch");
  if (g.node_labels && g.graph_label) out.emplace_back("both node and graph labels present");
  if (g.node_split && static_cast<int>(g.node_split->size()) != n)
    out.emplace_back("node split count mismatch");
  if (!g.node_features.allFinite()) out.emplace_back("non-finite node feature");
  if (g.edge_features && !g.edge_features->allFinite()) out.emplace_back("non-finite edge feature");
  if (!g.directed && out.empty()) {
    std::multiset<std::pair<int, int>> fwd;
    for (const Edge& e : g.edges) fwd.emplace(e.src, e.dst);
    for (const Edge& e : g.edges) {
      if (fwd.count({e.dst, e.src}) != fwd.count({e.src, e.dst})) {
        out.emplace_back("undirected graph missing reverse edge");
        break;
      }
    }
  }
  return out;
}

std::vector<std::string> validate_graph(const Graph& g, TaskKind task) {
  auto out = validate_graph(g);
  if (task == TaskKind::node && !g.node_labels) out.emplace_back("node task graph without node labels");
  if (task == TaskKind::graph && !g.graph_label) out.emplace_back("graph task graph without graph label");
  return out;
}

const std::vector<Graph>& DatasetSplit::graphs(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
    case Split::none: break;
  }
  throw Error("no graph collection for split 'none'");
}

std::vector<Graph>& DatasetSplit::graphs(Split s) {
  return const_cast<std::vector<Graph>&>(std::as_const(*this).graphs(s));
}

std::vector<int> DatasetSplit::nodes(Split s) const {
  std::vector<int> out;
  if (!graph.node_split) return out;
  const auto& tags = *graph.node_split;
  for (int i = 0; i < static_cast<int>(tags.size()); ++i)
    if (tags[i] == s) out.push_back(i);
  return out;
}

int DatasetSplit::size(Split s) const {
  return task == TaskKind::node ? static_cast<int>(nodes(s).size())
                                : static_cast<int>(graphs(s).size());
}

int DatasetSplit::feature_dim() const {
  if (task == TaskKind::node) return graph.feature_dim();
  return train.empty() ? 0 : train.front().feature_dim();
}

int DatasetSplit::edge_feature_dim() const {
  if (task == TaskKind::node) return graph.edge_feature_dim();
  return train.empty() ? 0 : train.front().edge_feature_dim();
}

namespace {

void check_fractions(SplitFractions f) {
  for (double x : {f.train, f.val, f.test})
    if (!(x > 0.0 && x < 1.0)) throw Error("split fractions must lie in (0,1)");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw Error("split fractions must sum to 1");
}

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, {0x5b117});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

std::array<int, 3> split_sizes(int n, SplitFractions f) {
  check_fractions(f);
  const int n_train = static_cast<int>(std::lround(f.train * n));
  const int n_val = static_cast<int>(std::lround(f.val * n));
  const int n_test = n - n_train - n_val;
  if (n_train <= 0 || n_val <= 0 || n_test <= 0) throw Error("split would leave an empty partition");
  return {n_train, n_val, n_test};
}

DatasetSplit split_dataset(std::vector<Graph> graphs, int num_classes, SplitFractions fractions,
                           std::uint64_t seed) {
  const int n = static_cast<int>(graphs.size());
  const auto sizes = split_sizes(n, fractions);
  const auto idx = shuffled_indices(n, seed);
  DatasetSplit out;
  out.task = TaskKind::graph;
  out.num_classes = num_classes;
  for (int i = 0; i < n; ++i) {
    Graph& g = graphs[idx[i]];
    if (i < sizes[0]) out.train.push_back(std::move(g));
    else if (i < sizes[0] + sizes[1]) out.val.push_back(std::move(g));
    else out.test.push_back(std::move(g));
  }
  return out;
}

DatasetSplit split_dataset(Graph graph, int num_classes, SplitFractions fractions, std::uint64_t seed) {
  const int n = graph.num_nodes();
  const auto sizes = split_sizes(n, fractions);
  const auto idx = shuffled_indices(n, seed);
  std::vector<Split> tags(n, Split::none);
  for (int i = 0; i < n; ++i)
    tags[idx[i]] = i < sizes[0] ? Split::train : (i < sizes[0] + sizes[1] ? Split::val : Split::test);
  graph.node_split = std::move(tags);
  DatasetSplit out;
  out.task = TaskKind::node;
  out.num_classes = num_classes;
  out.graph = std::move(graph);
  return out;
}

RowVector pool(const Matrix& node_reps, PoolMode mode) {
  if (node_reps.rows() == 0) throw Error("cannot pool an empty node set");
  RowVector s = node_reps.colwise().sum();
  if (mode == PoolMode::mean) s /= static_cast<double>(node_reps.rows());
  return s;
}

std::vector<int> edge_units(const Graph& g, int* num_units) {
  std::vector<int> unit(g.edges.size(), -1);
  int next = 0;
  if (g.directed) {
    std::iota(unit.begin(), unit.end(), 0);
    next = static_cast<int>(unit.size());
  } else {
    // Pair the k-th (u,v) with the k-th (v,u) so multi-edges stay balanced.
    std::map<std::pair<int, int>, std::vector<int>> open;
    for (int i = 0; i < static_cast<int>(g.edges.size()); ++i) {
      const Edge e = g.edges[i];
      if (e.src == e.dst) {
        unit[i] = next++;
        continue;
      }
      auto it = open.find({e.dst, e.src});
      if (it != open.end() && !it->second.empty()) {
        unit[i] = it->second.back();
        it->second.pop_back();
      } else {
        unit[i] = next;
        open[{e.src, e.dst}].push_back(next++);
      }
    }
  }
  if (num_units) *num_units = next;
  return unit;
}

int infer_num_classes(const std::vector<Graph>& graphs) {
  int mx = -1;
  for (const Graph& g : graphs) {
    if (g.graph_label) mx = std::max(mx, *g.graph_label);
    if (g.node_labels)
      for (int y : *g.node_labels) mx = std::max(mx, y);
  }
  return mx + 1;
}

}  // namespace gmetro
