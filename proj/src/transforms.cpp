#include "gmetro/transforms.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>
#include <unordered_set>

namespace gmetro {

namespace {

constexpr std::array<TransformKind, 11> kAllKinds = {
    TransformKind::mask_edge_feat,  TransformKind::noisy_edge_feat, TransformKind::edge_feat_shift,
    TransformKind::mask_node_feat,  TransformKind::noisy_node_feat, TransformKind::node_feat_shift,
    TransformKind::add_edge,        TransformKind::drop_edge,       TransformKind::drop_node,
    TransformKind::drop_path,       TransformKind::random_subgraph,
};

bool is_probability_kind(TransformKind k) {
  switch (k) {
    case TransformKind::mask_edge_feat:
    case TransformKind::mask_node_feat:
    case TransformKind::add_edge:
    case TransformKind::drop_edge:
    case TransformKind::drop_node:
    case TransformKind::drop_path:
      return true;
    default:
      return false;
  }
}

}  // namespace

std::string_view to_string(TransformKind k) {
  switch (k) {
    case TransformKind::identity: return "identity";
    case TransformKind::mask_edge_feat: return "mask_edge_feat";
    case TransformKind::noisy_edge_feat: return "noisy_edge_feat";
    case TransformKind::edge_feat_shift: return "edge_feat_shift";
    case TransformKind::mask_node_feat: return "mask_node_feat";
    case TransformKind::noisy_node_feat: return "noisy_node_feat";
    case TransformKind::node_feat_shift: return "node_feat_shift";
    case TransformKind::add_edge: return "add_edge";
    case TransformKind::drop_edge: return "drop_edge";
    case TransformKind::drop_node: return "drop_node";
    case TransformKind::drop_path: return "drop_path";
    case TransformKind::random_subgraph: return "random_subgraph";
  }
  return "identity";
}

TransformKind parse_transform_kind(std::string_view s) {
  if (s == "identity") return TransformKind::identity;
  for (TransformKind k : kAllKinds)
    if (to_string(k) == s) return k;
  throw Error("unknown transform kind '" + std::string(s) + "'");
}

std::span<const TransformKind> all_transform_kinds() { return kAllKinds; }

bool needs_edge_features(TransformKind k) {
  return k == TransformKind::mask_edge_feat || k == TransformKind::noisy_edge_feat ||
         k == TransformKind::edge_feat_shift;
}

bool is_integer_parameterized(TransformKind k) { return k == TransformKind::random_subgraph; }

TransformSpec default_spec(TransformKind k) {
  TransformSpec s;
  s.kind = k;
  switch (k) {
    case TransformKind::noisy_edge_feat:
    case TransformKind::noisy_node_feat:
      s.domain = {0.05, 0.3};
      break;
    case TransformKind::edge_feat_shift:
    case TransformKind::node_feat_shift:
      s.domain = {0.1, 0.5};
      break;
    case TransformKind::random_subgraph:
      s.domain = {1.0, 2.0};
      break;
    case TransformKind::identity:
      s.domain = {0.0, 0.0};
      break;
    default:
      s.domain = {0.3, 0.5};
      break;
  }
  return s;
}

std::vector<std::string> validate_spec(const TransformSpec& s) {
  std::vector<std::string> out;
  const std::string name(to_string(s.kind));
  if (!std::isfinite(s.domain.lo) || !std::isfinite(s.domain.hi) || s.domain.lo > s.domain.hi)
    out.push_back(name + ": domain must be a finite interval with lo <= hi");
  if (is_probability_kind(s.kind) && (s.domain.lo < 0.0 || s.domain.hi > 1.0))
    out.push_back(name + ": probability domain must lie in [0,1]");
  if ((s.kind == TransformKind::noisy_node_feat || s.kind == TransformKind::noisy_edge_feat) && s.domain.lo < 0.0)
    out.push_back(name + ": noise standard deviation must be >= 0");
  if (is_integer_parameterized(s.kind) &&
      (s.domain.lo < 1.0 || std::floor(s.domain.lo) != s.domain.lo || std::floor(s.domain.hi) != s.domain.hi))
    out.push_back(name + ": hop count domain must be integers >= 1");
  return out;
}

std::vector<int> CompositeTransform::components() const {
  std::vector<int> c;
  for (const auto& s : steps) c.push_back(s.component);
  std::sort(c.begin(), c.end());
  return c;
}

TransformSet::TransformSet(std::vector<TransformSpec> specs) : specs_(std::move(specs)) {
  std::set<TransformKind> seen;
  for (const auto& s : specs_) {
    if (s.kind == TransformKind::identity) throw Error("identity is implicit and cannot be listed");
    if (!seen.insert(s.kind).second) throw Error("transform kind listed twice: " + std::string(to_string(s.kind)));
    auto problems = validate_spec(s);
    if (!problems.empty()) throw Error(problems.front());
  }
}

TransformSet TransformSet::synthetic_default() {
  return TransformSet({default_spec(TransformKind::random_subgraph), default_spec(TransformKind::drop_node),
                       default_spec(TransformKind::drop_edge), default_spec(TransformKind::add_edge),
                       default_spec(TransformKind::noisy_node_feat)});
}

const TransformSpec& TransformSet::spec(int component) const {
  if (component < 1 || component > size()) throw Error("component index out of range");
  return specs_[component - 1];
}

std::vector<std::string> TransformSet::index_map() const {
  std::vector<std::string> out{"identity"};
  for (const auto& s : specs_) out.emplace_back(to_string(s.kind));
  return out;
}

bool excluded_kind_pair(TransformKind a, TransformKind b) {
  auto is = [&](TransformKind x, TransformKind y) { return (a == x && b == y) || (a == y && b == x); };
  return is(TransformKind::add_edge, TransformKind::drop_edge) ||
         is(TransformKind::random_subgraph, TransformKind::drop_node);
}

bool TransformSet::excluded_pair(int a, int b) const { return excluded_kind_pair(spec(a).kind, spec(b).kind); }

bool TransformSet::valid_combination(std::span<const int> components) const {
  for (std::size_t i = 0; i < components.size(); ++i) {
    if (components[i] < 1 || components[i] > size()) return false;
    for (std::size_t j = i + 1; j < components.size(); ++j) {
      if (components[i] == components[j]) return false;
      if (excluded_pair(components[i], components[j])) return false;
    }
  }
  return true;
}

CompositeTransform TransformSet::composite(std::span<const int> components) const {
  if (!valid_combination(components)) throw Error("invalid transform combination");
  CompositeTransform c;
  for (int comp : components) c.steps.push_back({comp, spec(comp)});
  return c;
}

nlohmann::json TransformSet::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : specs_) {
    nlohmann::json j{{"kind", std::string(to_string(s.kind))}, {"domain", {s.domain.lo, s.domain.hi}}};
    if (s.kind == TransformKind::mask_node_feat || s.kind == TransformKind::mask_edge_feat)
      j["fill_value"] = s.fill_value;
    arr.push_back(std::move(j));
  }
  return arr;
}

TransformSet TransformSet::from_json(const nlohmann::json& j) {
  std::vector<TransformSpec> specs;
  for (const auto& item : j) {
    TransformSpec s = item.is_string() ? default_spec(parse_transform_kind(item.get<std::string>()))
                                       : default_spec(parse_transform_kind(item.at("kind").get<std::string>()));
    if (item.is_object()) {
      if (item.contains("domain")) s.domain = {item["domain"].at(0).get<double>(), item["domain"].at(1).get<double>()};
      if (item.contains("fill_value")) s.fill_value = item["fill_value"].get<double>();
    }
    specs.push_back(s);
  }
  return TransformSet(std::move(specs));
}

MixtureLabel mixture_label(const CompositeTransform& c, int num_components) {
  MixtureLabel bits(num_components + 1, 0);
  if (c.empty()) {
    bits[0] = 1;
    return bits;
  }
  for (const auto& s : c.steps) {
    if (s.component < 1 || s.component > num_components) throw Error("component index out of range");
    bits[s.component] = 1;
  }
  return bits;
}

namespace {

void combinations_of_size(const TransformSet& set, int size, int start, std::vector<int>& cur,
                          std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == size) {
    out.push_back(cur);
    return;
  }
  for (int c = start; c <= set.size(); ++c) {
    bool ok = true;
    for (int x : cur) ok = ok && !set.excluded_pair(x, c);
    if (!ok) continue;
    cur.push_back(c);
    combinations_of_size(set, size, c + 1, cur, out);
    cur.pop_back();
  }
}

std::vector<std::vector<int>> valid_combinations(const TransformSet& set, int size) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  combinations_of_size(set, size, 1, cur, out);
  return out;
}

}  // namespace

CompositeTransform sample_composite(const TransformSet& set, int k, Rng& rng) {
  if (k < 1 || k > set.size()) throw Error("composite size k must satisfy 1 <= k <= K");
  std::vector<std::vector<std::vector<int>>> by_size;
  for (int s = 1; s <= k; ++s) {
    auto combos = valid_combinations(set, s);
    if (!combos.empty()) by_size.push_back(std::move(combos));
  }
  std::uniform_int_distribution<std::size_t> pick_size(0, by_size.size() - 1);
  const auto& combos = by_size[pick_size(rng)];
  std::uniform_int_distribution<std::size_t> pick(0, combos.size() - 1);
  std::vector<int> chosen = combos[pick(rng)];
  std::shuffle(chosen.begin(), chosen.end(), rng);
  return set.composite(chosen);
}

std::vector<Environment> enumerate_environments(const TransformSet& set, int k) {
  if (k < 0) throw Error("k must be >= 0");
  std::vector<Environment> envs;
  envs.push_back({0, "i.i.d. (0)", {}});
  for (int s = 1; s <= std::min(k, set.size()); ++s) {
    auto combos = valid_combinations(set, s);
    std::sort(combos.begin(), combos.end(), [](const auto& a, const auto& b) {
      return std::lexicographical_compare(a.rbegin(), a.rend(), b.rbegin(), b.rend());
    });
    for (const auto& c : combos) {
      Environment e;
      e.id = static_cast<int>(envs.size());
      if (s == 1) {
        e.name = std::string(to_string(set.spec(c[0]).kind)) + " (" + std::to_string(c[0]) + ")";
      } else {
        e.name = "(";
        for (std::size_t i = 0; i < c.size(); ++i) e.name += (i ? ", " : "") + std::to_string(c[i]);
        e.name += ")";
      }
      e.composite = set.composite(c);
      envs.push_back(std::move(e));
    }
  }
  return envs;
}

nlohmann::json environments_to_json(const std::vector<Environment>& envs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : envs) {
    nlohmann::json kinds = nlohmann::json::array();
    for (const auto& s : e.composite.steps) kinds.push_back(std::string(to_string(s.spec.kind)));
    arr.push_back({{"id", e.id}, {"name", e.name}, {"components", e.composite.components()}, {"kinds", kinds}});
  }
  return arr;
}

namespace {

TransformResult induced(const TransformResult& in, const std::vector<int>& keep) {
  const Graph& g = in.graph;
  std::vector<int> remap(g.num_nodes(), -1);
  for (std::size_t i = 0; i < keep.size(); ++i) remap[keep[i]] = static_cast<int>(i);
  TransformResult out;
  Graph& h = out.graph;
  h.directed = g.directed;
  h.graph_label = g.graph_label;
  h.node_features.resize(static_cast<Eigen::Index>(keep.size()), g.feature_dim());
  if (g.node_labels) h.node_labels.emplace();
  if (g.node_split) h.node_split.emplace();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    h.node_features.row(static_cast<Eigen::Index>(i)) = g.node_features.row(keep[i]);
    out.node_origin.push_back(in.node_origin[keep[i]]);
    if (g.node_labels) h.node_labels->push_back((*g.node_labels)[keep[i]]);
    if (g.node_split) h.node_split->push_back((*g.node_split)[keep[i]]);
  }
  std::vector<int> kept_edges;
  for (int e = 0; e < g.num_edges(); ++e) {
    const int a = remap[g.edges[e].src];
    const int b = remap[g.edges[e].dst];
    if (a < 0 || b < 0) continue;
    h.edges.push_back({a, b});
    kept_edges.push_back(e);
  }
  if (g.edge_features) {
    Matrix ef(static_cast<Eigen::Index>(kept_edges.size()), g.edge_feature_dim());
    for (std::size_t i = 0; i < kept_edges.size(); ++i) ef.row(static_cast<Eigen::Index>(i)) = g.edge_features->row(kept_edges[i]);
    h.edge_features = std::move(ef);
  }
  return out;
}

TransformResult filter_edges(const TransformResult& in, const std::vector<char>& keep_edge) {
  TransformResult out{in.graph, in.node_origin};
  Graph& h = out.graph;
  const Graph& g = in.graph;
  h.edges.clear();
  std::vector<int> kept;
  for (int e = 0; e < g.num_edges(); ++e) {
    if (!keep_edge[e]) continue;
    h.edges.push_back(g.edges[e]);
    kept.push_back(e);
  }
  if (g.edge_features) {
    Matrix ef(static_cast<Eigen::Index>(kept.size()), g.edge_feature_dim());
    for (std::size_t i = 0; i < kept.size(); ++i) ef.row(static_cast<Eigen::Index>(i)) = g.edge_features->row(kept[i]);
    h.edge_features = std::move(ef);
  }
  return out;
}

std::vector<std::vector<int>> out_neighbors(const Graph& g) {
  std::vector<std::vector<int>> adj(g.num_nodes());
  for (const Edge& e : g.edges) adj[e.src].push_back(e.dst);
  return adj;
}

std::vector<int> bfs_ball(const std::vector<std::vector<int>>& adj, int seed, int hops) {
  std::vector<int> order{seed};
  std::vector<int> dist(adj.size(), -1);
  dist[seed] = 0;
  for (std::size_t head = 0; head < order.size(); ++head) {
    const int u = order[head];
    if (dist[u] == hops) continue;
    for (int v : adj[u]) {
      if (dist[v] >= 0) continue;
      dist[v] = dist[u] + 1;
      order.push_back(v);
    }
  }
  return order;
}

void perturb_entries(Matrix& m, TransformKind kind, double p, double fill, Rng& rng) {
  switch (kind) {
    case TransformKind::mask_node_feat:
    case TransformKind::mask_edge_feat: {
      std::bernoulli_distribution hit(p);
      for (Eigen::Index i = 0; i < m.size(); ++i)
        if (hit(rng)) m.data()[i] = fill;
      break;
    }
    case TransformKind::noisy_node_feat:
    case TransformKind::noisy_edge_feat: {
      if (p <= 0.0) break;
      std::normal_distribution<double> noise(0.0, p);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += noise(rng);
      break;
    }
    default:
      m.array() += p;
      break;
  }
}

TransformResult drop_edge(const TransformResult& in, double p, Rng& rng) {
  int units = 0;
  const auto unit = edge_units(in.graph, &units);
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<char> keep_unit(units);
  for (auto& k : keep_unit) k = keep(rng);
  std::vector<char> keep_edge(unit.size());
  for (std::size_t e = 0; e < unit.size(); ++e) keep_edge[e] = keep_unit[unit[e]];
  return filter_edges(in, keep_edge);
}

TransformResult add_edge(const TransformResult& in, double p, Rng& rng) {
  TransformResult out = in;
  Graph& g = out.graph;
  const int n = g.num_nodes();
  int units = 0;
  edge_units(g, &units);
  if (n < 2) return out;
  std::set<std::pair<int, int>> present;
  for (const Edge& e : g.edges) present.emplace(g.directed ? e.src : std::min(e.src, e.dst),
                                                g.directed ? e.dst : std::max(e.src, e.dst));
  const double max_pairs = g.directed ? double(n) * (n - 1) : double(n) * (n - 1) / 2.0;
  std::bernoulli_distribution add(p);
  std::uniform_int_distribution<int> node(0, n - 1);
  std::vector<Edge> added;
  for (int u = 0; u < units; ++u) {
    if (!add(rng)) continue;
    if (static_cast<double>(present.size()) >= max_pairs) break;
    for (int attempt = 0; attempt < 64; ++attempt) {
      int a = node(rng);
      int b = node(rng);
      if (a == b) continue;
      if (!g.directed && a > b) std::swap(a, b);
      if (!present.emplace(a, b).second) continue;
      added.push_back({a, b});
      if (!g.directed) added.push_back({b, a});
      break;
    }
  }
  g.edges.insert(g.edges.end(), added.begin(), added.end());
  if (g.edge_features) {
    Matrix ef = Matrix::Zero(g.num_edges(), g.edge_feature_dim());
    ef.topRows(in.graph.num_edges()) = *in.graph.edge_features;
    g.edge_features = std::move(ef);
  }
  return out;
}

TransformResult drop_node(const TransformResult& in, double p, Rng& rng) {
  const int n = in.graph.num_nodes();
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<int> kept;
  for (int attempt = 0; attempt < 32 && kept.empty(); ++attempt) {
    for (int i = 0; i < n; ++i)
      if (keep(rng)) kept.push_back(i);
  }
  if (kept.empty()) kept.push_back(std::uniform_int_distribution<int>(0, n - 1)(rng));
  return induced(in, kept);
}

TransformResult drop_path(const TransformResult& in, double p, Rng& rng) {
  const Graph& g = in.graph;
  int units = 0;
  const auto unit = edge_units(g, &units);
  const int budget = static_cast<int>(std::ceil(p * units - 1e-12));
  if (budget <= 0 || units == 0) return in;
  std::vector<std::vector<std::pair<int, int>>> adj(g.num_nodes());
  for (int e = 0; e < g.num_edges(); ++e)
    if (g.edges[e].src != g.edges[e].dst) adj[g.edges[e].src].emplace_back(g.edges[e].dst, unit[e]);
  std::vector<int> starts;
  for (int i = 0; i < g.num_nodes(); ++i)
    if (!adj[i].empty()) starts.push_back(i);
  if (starts.empty()) return in;
  int cur = starts[std::uniform_int_distribution<std::size_t>(0, starts.size() - 1)(rng)];
  std::vector<char> visited(g.num_nodes(), 0), removed(units, 0);
  visited[cur] = 1;
  for (int step = 0; step < budget; ++step) {
    const auto& nb = adj[cur];
    if (nb.empty()) break;
    const auto [next, u] = nb[std::uniform_int_distribution<std::size_t>(0, nb.size() - 1)(rng)];
    if (visited[next]) break;
    removed[u] = 1;
    visited[next] = 1;
    cur = next;
  }
  std::vector<char> keep_edge(unit.size());
  for (std::size_t e = 0; e < unit.size(); ++e) keep_edge[e] = !removed[unit[e]];
  return filter_edges(in, keep_edge);
}

TransformResult random_subgraph(const TransformResult& in, int hops, Rng& rng, const ApplyOptions& opts) {
  const Graph& g = in.graph;
  const auto adj = out_neighbors(g);
  if (opts.task == TaskKind::graph) {
    const int seed = std::uniform_int_distribution<int>(0, g.num_nodes() - 1)(rng);
    return induced(in, bfs_ball(adj, seed, hops));
  }
  // Node task: disjoint union of one ego network per target.
  std::vector<int> centers;
  if (opts.subgraph_targets.empty()) {
    centers.resize(g.num_nodes());
    std::iota(centers.begin(), centers.end(), 0);
  } else {
    std::unordered_set<int> wanted(opts.subgraph_targets.begin(), opts.subgraph_targets.end());
    for (int i = 0; i < g.num_nodes(); ++i)
      if (wanted.count(in.node_origin[i])) centers.push_back(i);
  }
  TransformResult out;
  Graph& h = out.graph;
  h.directed = g.directed;
  h.graph_label = g.graph_label;
  if (g.node_labels) h.node_labels.emplace();
  if (g.node_split) h.node_split.emplace();
  std::vector<Matrix> feats;
  std::vector<Matrix> efeats;
  int offset = 0;
  for (int c : centers) {
    TransformResult ego = induced(in, bfs_ball(adj, c, hops));
    Graph& eg = ego.graph;
    if (eg.node_split)
      for (std::size_t i = 1; i < eg.node_split->size(); ++i) (*eg.node_split)[i] = Split::none;
    feats.push_back(std::move(eg.node_features));
    for (const Edge& e : eg.edges) h.edges.push_back({e.src + offset, e.dst + offset});
    if (eg.edge_features) efeats.push_back(std::move(*eg.edge_features));
    if (eg.node_labels) h.node_labels->insert(h.node_labels->end(), eg.node_labels->begin(), eg.node_labels->end());
    if (eg.node_split) h.node_split->insert(h.node_split->end(), eg.node_split->begin(), eg.node_split->end());
    out.node_origin.insert(out.node_origin.end(), ego.node_origin.begin(), ego.node_origin.end());
    offset += static_cast<int>(ego.node_origin.size());
  }
  h.node_features.resize(offset, g.feature_dim());
  int row = 0;
  for (const Matrix& f : feats) {
    h.node_features.middleRows(row, f.rows()) = f;
    row += static_cast<int>(f.rows());
  }
  if (g.edge_features) {
    Matrix ef(h.num_edges(), g.edge_feature_dim());
    int r = 0;
    for (const Matrix& f : efeats) {
      ef.middleRows(r, f.rows()) = f;
      r += static_cast<int>(f.rows());
    }
    h.edge_features = std::move(ef);
  }
  return out;
}

}  // namespace

TransformResult apply_with_strength(const TransformResult& in, const TransformSpec& spec, double strength,
                                    Rng& rng, const ApplyOptions& opts) {
  if (needs_edge_features(spec.kind) && !in.graph.edge_features)
    throw Error(std::string(to_string(spec.kind)) + " requires edge features");
  if (in.graph.num_nodes() == 0) throw Error("cannot transform an empty graph");
  switch (spec.kind) {
    case TransformKind::identity:
      return in;
    case TransformKind::mask_node_feat:
    case TransformKind::noisy_node_feat:
    case TransformKind::node_feat_shift: {
      TransformResult out = in;
      perturb_entries(out.graph.node_features, spec.kind, strength, spec.fill_value, rng);
      return out;
    }
    case TransformKind::mask_edge_feat:
    case TransformKind::noisy_edge_feat:
    case TransformKind::edge_feat_shift: {
      TransformResult out = in;
      perturb_entries(*out.graph.edge_features, spec.kind, strength, spec.fill_value, rng);
      return out;
    }
    case TransformKind::add_edge: return add_edge(in, strength, rng);
    case TransformKind::drop_edge: return drop_edge(in, strength, rng);
    case TransformKind::drop_node: return drop_node(in, strength, rng);
    case TransformKind::drop_path: return drop_path(in, strength, rng);
    case TransformKind::random_subgraph: return random_subgraph(in, static_cast<int>(strength), rng, opts);
  }
  return in;
}

TransformResult apply_tracked(const Graph& g, const CompositeTransform& c, Rng& rng, const ApplyOptions& opts) {
  TransformResult cur{g, std::vector<int>(g.num_nodes())};
  std::iota(cur.node_origin.begin(), cur.node_origin.end(), 0);
  for (const auto& step : c.steps) {
    const ParamDomain d = step.spec.domain;
    double strength;
    if (is_integer_parameterized(step.spec.kind)) {
      strength = std::uniform_int_distribution<int>(static_cast<int>(d.lo), static_cast<int>(d.hi))(rng);
    } else {
      strength = d.lo + (d.hi - d.lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }
    cur = apply_with_strength(cur, step.spec, strength, rng, opts);
  }
  return cur;
}

Graph apply(const Graph& g, const CompositeTransform& c, Rng& rng, const ApplyOptions& opts) {
  return apply_tracked(g, c, rng, opts).graph;
}

}  // namespace gmetro
