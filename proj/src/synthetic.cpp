#include "gmetro/synthetic.hpp"

#include "gmetro/graph_io.hpp"
#include "gmetro/rng.hpp"

#include <algorithm>
#include <numeric>

namespace gmetro {

std::string_view to_string(Generator g) { return g == Generator::sbm ? "sbm" : "erdos_renyi"; }

std::string_view to_string(LabelRule r) {
  switch (r) {
    case LabelRule::community: return "community";
    case LabelRule::feature_threshold: return "feature_threshold";
    case LabelRule::motif_count: return "motif_count";
  }
  return "?";
}

Generator parse_generator(std::string_view s) {
  if (s == "sbm") return Generator::sbm;
  if (s == "erdos_renyi" || s == "er") return Generator::erdos_renyi;
  throw Error("unknown generator: " + std::string(s));
}

LabelRule parse_label_rule(std::string_view s) {
  if (s == "community") return LabelRule::community;
  if (s == "feature_threshold") return LabelRule::feature_threshold;
  if (s == "motif_count") return LabelRule::motif_count;
  throw Error("unknown label rule: " + std::string(s));
}

std::vector<std::string> SyntheticSpec::validate() const {
  std::vector<std::string> errs;
  auto prob = [&](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) errs.push_back(std::string(name) + " must be in [0, 1]");
  };
  prob(p_in, "p_in");
  prob(p_out, "p_out");
  prob(p_edge, "p_edge");
  if (feature_dim < 1) errs.push_back("feature_dim must be >= 1");
  if (!(feature_noise >= 0.0)) errs.push_back("feature_noise must be >= 0");
  if (classes() < 2) errs.push_back("at least two classes are required");
  if (label_rule == LabelRule::community && generator != Generator::sbm)
    errs.push_back("community labels need the sbm generator");
  if (task == TaskKind::node) {
    if (num_nodes < 2) errs.push_back("num_nodes must be >= 2");
    if (num_nodes < classes()) errs.push_back("num_nodes must be at least the number of classes");
  } else {
    if (num_graphs < 3) errs.push_back("num_graphs must be >= 3");
    if (min_nodes < 1 || max_nodes < min_nodes) errs.push_back("node range must satisfy 1 <= min_nodes <= max_nodes");
    if (label_rule == LabelRule::community && min_nodes < communities)
      errs.push_back("min_nodes must be at least the number of communities");
  }
  return errs;
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"task", to_string(s.task)},
          {"generator", to_string(s.generator)},
          {"num_nodes", s.num_nodes},
          {"num_graphs", s.num_graphs},
          {"min_nodes", s.min_nodes},
          {"max_nodes", s.max_nodes},
          {"communities", s.communities},
          {"feature_dim", s.feature_dim},
          {"p_in", s.p_in},
          {"p_out", s.p_out},
          {"p_edge", s.p_edge},
          {"feature_signal", s.feature_signal},
          {"feature_noise", s.feature_noise},
          {"label_rule", to_string(s.label_rule)},
          {"num_classes", s.num_classes},
          {"split", {s.fractions.train, s.fractions.val, s.fractions.test}},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, const SyntheticSpec& base) {
  SyntheticSpec s = base;
  if (j.contains("task")) s.task = parse_task_kind(j.at("task").get<std::string>());
  if (j.contains("generator")) s.generator = parse_generator(j.at("generator").get<std::string>());
  if (j.contains("label_rule")) s.label_rule = parse_label_rule(j.at("label_rule").get<std::string>());
  auto num = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  num("num_nodes", s.num_nodes);
  num("num_graphs", s.num_graphs);
  num("min_nodes", s.min_nodes);
  num("max_nodes", s.max_nodes);
  num("communities", s.communities);
  num("feature_dim", s.feature_dim);
  num("p_in", s.p_in);
  num("p_out", s.p_out);
  num("p_edge", s.p_edge);
  num("feature_signal", s.feature_signal);
  num("feature_noise", s.feature_noise);
  num("num_classes", s.num_classes);
  num("seed", s.seed);
  if (j.contains("split")) {
    const auto& f = j.at("split");
    s.fractions = {f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>()};
  }
  return s;
}

namespace {

// Undirected graph over `blocks` (block id per node), both directions stored.
Graph sample_structure(const std::vector<int>& blocks, double p_in, double p_out, Rng& rng) {
  const int n = static_cast<int>(blocks.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Graph g;
  g.directed = false;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (u(rng) < (blocks[a] == blocks[b] ? p_in : p_out)) {
        g.edges.push_back({a, b});
        g.edges.push_back({b, a});
      }
  return g;
}

std::vector<int> balanced_blocks(int n, int blocks, Rng& rng) {
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = i % blocks;
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

Matrix sample_features(const std::vector<int>& blocks, const SyntheticSpec& s, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix x(static_cast<Eigen::Index>(blocks.size()), s.feature_dim);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(i, c) = s.feature_noise * noise(rng);
    x(i, blocks[i] % s.feature_dim) += s.feature_signal;
  }
  return x;
}

// Class by rank: the lowest n/C values get class 0 and so on; ties by index.
std::vector<int> quantile_bins(const std::vector<double>& values, int classes) {
  const int n = static_cast<int>(values.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
  std::vector<int> out(n);
  for (int r = 0; r < n; ++r) out[order[r]] = static_cast<int>(static_cast<long>(r) * classes / n);
  return out;
}

std::vector<std::vector<int>> adjacency(const Graph& g) {
  std::vector<std::vector<int>> adj(g.num_nodes());
  for (const Edge& e : g.edges)
    if (e.src != e.dst) adj[e.src].push_back(e.dst);
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  return adj;
}

std::vector<double> neighbourhood_mean(const Graph& g, int col) {
  const auto adj = adjacency(g);
  std::vector<double> out(g.num_nodes());
  for (int v = 0; v < g.num_nodes(); ++v) {
    double sum = g.node_features(v, col);
    for (int u : adj[v]) sum += g.node_features(u, col);
    out[v] = sum / static_cast<double>(adj[v].size() + 1);
  }
  return out;
}

Graph sample_graph(const SyntheticSpec& s, int n, int blocks, Rng& rng, std::vector<int>* block_of) {
  std::vector<int> b = s.generator == Generator::sbm ? balanced_blocks(n, blocks, rng) : std::vector<int>(n, 0);
  Graph g = s.generator == Generator::sbm ? sample_structure(b, s.p_in, s.p_out, rng)
                                          : sample_structure(b, s.p_edge, s.p_edge, rng);
  g.node_features = sample_features(b, s, rng);
  if (block_of) *block_of = std::move(b);
  return g;
}

}  // namespace

std::vector<int> node_triangles(const Graph& g) {
  const auto adj = adjacency(g);
  std::vector<int> out(g.num_nodes(), 0);
  for (int v = 0; v < g.num_nodes(); ++v)
    for (std::size_t i = 0; i < adj[v].size(); ++i)
      for (std::size_t j = i + 1; j < adj[v].size(); ++j)
        if (std::binary_search(adj[adj[v][i]].begin(), adj[adj[v][i]].end(), adj[v][j])) ++out[v];
  return out;
}

DatasetSplit generate_synthetic(const SyntheticSpec& spec) {
  if (auto errs = spec.validate(); !errs.empty()) throw Error("invalid synthetic spec: " + errs.front());
  Rng rng = make_rng(spec.seed, {0x57e});
  const int classes = spec.classes();

  if (spec.task == TaskKind::node) {
    std::vector<int> blocks;
    Graph g = sample_graph(spec, spec.num_nodes, spec.communities, rng, &blocks);
    std::vector<int> labels;
    switch (spec.label_rule) {
      case LabelRule::community: labels = blocks; break;
      case LabelRule::feature_threshold: labels = quantile_bins(neighbourhood_mean(g, 0), classes); break;
      case LabelRule::motif_count: {
        const auto tri = node_triangles(g);
        labels = quantile_bins(std::vector<double>(tri.begin(), tri.end()), classes);
        break;
      }
    }
    g.node_labels = std::move(labels);
    return split_dataset(std::move(g), classes, spec.fractions, derive_seed(spec.seed, {1}));
  }

  std::uniform_int_distribution<int> size(spec.min_nodes, spec.max_nodes);
  std::vector<Graph> graphs;
  std::vector<double> stat;
  for (int i = 0; i < spec.num_graphs; ++i) {
    const int n = size(rng);
    const int cls = i % classes;
    const int blocks = spec.label_rule == LabelRule::community ? cls + 1 : spec.communities;
    Graph g = sample_graph(spec, n, blocks, rng, nullptr);
    if (spec.label_rule == LabelRule::community) {
      g.graph_label = cls;
    } else if (spec.label_rule == LabelRule::feature_threshold) {
      stat.push_back(g.node_features.col(0).mean());
    } else {
      const auto tri = node_triangles(g);
      stat.push_back(std::accumulate(tri.begin(), tri.end(), 0.0) / 3.0);
    }
    graphs.push_back(std::move(g));
  }
  if (spec.label_rule != LabelRule::community) {
    const auto bins = quantile_bins(stat, classes);
    for (std::size_t i = 0; i < graphs.size(); ++i) graphs[i].graph_label = bins[i];
  }
  return split_dataset(std::move(graphs), classes, spec.fractions, derive_seed(spec.seed, {1}));
}

DatasetSplit write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  DatasetSplit d = generate_synthetic(spec);
  write_dataset(dir, d);
  return d;
}

}  // namespace gmetro
