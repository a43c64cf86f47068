#include "gmetro/batch.hpp"

#include <cmath>
#include <numeric>

namespace gmetro {

PreparedGraph prepare_union(std::span<const Graph* const> graphs) {
  PreparedGraph p;
  int n = 0;
  int d = -1;
  std::size_t m = 0;
  for (const Graph* g : graphs) {
    if (d >= 0 && g->feature_dim() != d) throw Error("feature dimension differs within a batch");
    d = g->feature_dim();
    n += g->num_nodes();
    m += g->edges.size();
  }
  if (n == 0) throw Error("cannot prepare an empty graph");
  p.num_nodes = n;
  p.num_graphs = static_cast<int>(graphs.size());
  p.x.resize(n, d);
  p.graph_of_node.resize(n);

  std::vector<int> src, dst;
  src.reserve(m + n);
  dst.reserve(m + n);
  int offset = 0;
  for (int gi = 0; gi < p.num_graphs; ++gi) {
    const Graph& g = *graphs[gi];
    p.x.middleRows(offset, g.num_nodes()) = g.node_features;
    std::fill_n(p.graph_of_node.begin() + offset, g.num_nodes(), gi);
    for (const Edge& e : g.edges) {
      if (e.src == e.dst) continue;  // self loops are re-added uniformly below
      src.push_back(e.src + offset);
      dst.push_back(e.dst + offset);
    }
    offset += g.num_nodes();
  }
  for (int i = 0; i < n; ++i) {
    src.push_back(i);
    dst.push_back(i);
  }

  p.in_offsets.assign(n + 1, 0);
  for (int t : dst) ++p.in_offsets[t + 1];
  std::partial_sum(p.in_offsets.begin(), p.in_offsets.end(), p.in_offsets.begin());
  p.in_sources.resize(src.size());
  std::vector<int> fill(p.in_offsets.begin(), p.in_offsets.end() - 1);
  for (std::size_t e = 0; e < src.size(); ++e) p.in_sources[fill[dst[e]]++] = src[e];

  std::vector<double> deg(n);
  for (int i = 0; i < n; ++i) deg[i] = p.in_offsets[i + 1] - p.in_offsets[i];
  std::vector<Eigen::Triplet<double>> norm, sum;
  norm.reserve(src.size());
  sum.reserve(src.size());
  for (std::size_t e = 0; e < src.size(); ++e) {
    norm.emplace_back(dst[e], src[e], 1.0 / std::sqrt(deg[dst[e]] * deg[src[e]]));
    sum.emplace_back(dst[e], src[e], 1.0);
  }
  p.gcn_norm.resize(n, n);
  p.gcn_norm.setFromTriplets(norm.begin(), norm.end());
  p.sum_adj.resize(n, n);
  p.sum_adj.setFromTriplets(sum.begin(), sum.end());
  return p;
}

PreparedGraph prepare_graph(const Graph& g) {
  const Graph* one[] = {&g};
  return prepare_union(one);
}

Batch make_graph_batch(std::span<const Graph* const> graphs) {
  Batch b;
  b.task = TaskKind::graph;
  b.graph = prepare_union(graphs);
  bool labeled = true;
  for (const Graph* g : graphs) labeled = labeled && g->graph_label.has_value();
  if (labeled)
    for (const Graph* g : graphs) b.labels.push_back(*g->graph_label);
  return b;
}

Batch make_graph_batch(std::span<const Graph> graphs) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const Graph& g : graphs) ptrs.push_back(&g);
  return make_graph_batch(std::span<const Graph* const>(ptrs));
}

Batch make_node_batch(const Graph& g, Split which, std::span<const int> node_origin) {
  Batch b;
  b.task = TaskKind::node;
  b.graph = prepare_graph(g);
  for (int i = 0; i < g.num_nodes(); ++i) {
    const bool take = which == Split::none || (g.node_split && (*g.node_split)[i] == which);
    if (!take) continue;
    b.rows.push_back(i);
    b.origin.push_back(node_origin.empty() ? i : node_origin[i]);
    if (g.node_labels) b.labels.push_back((*g.node_labels)[i]);
  }
  return b;
}

}  // namespace gmetro
