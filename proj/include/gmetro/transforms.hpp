#pragma once

#include "gmetro/graph.hpp"
#include "gmetro/rng.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace gmetro {

enum class TransformKind {
  identity,
  mask_edge_feat,
  noisy_edge_feat,
  edge_feat_shift,
  mask_node_feat,
  noisy_node_feat,
  node_feat_shift,
  add_edge,
  drop_edge,
  drop_node,
  drop_path,
  random_subgraph,
};

std::string_view to_string(TransformKind k);
TransformKind parse_transform_kind(std::string_view s);
/// The eleven non-identity kinds in library order.
std::span<const TransformKind> all_transform_kinds();
bool needs_edge_features(TransformKind k);
bool is_integer_parameterized(TransformKind k);

struct ParamDomain {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const ParamDomain&) const = default;
};

struct TransformSpec {
  TransformKind kind = TransformKind::identity;
  ParamDomain domain;
  double fill_value = 0.0;  // mask kinds only

  bool operator==(const TransformSpec&) const = default;
};

/// Default strength domain for a kind (drop/add/mask [0.3,0.5], noise std
/// [0.05,0.3], shift [0.1,0.5], subgraph hops {1,2}).
TransformSpec default_spec(TransformKind k);
/// Empty iff the spec is well formed.
std::vector<std::string> validate_spec(const TransformSpec& s);

/// One step of a composite: the spec plus its mixture-component index (1..K).
struct TransformStep {
  int component = 0;
  TransformSpec spec;
  bool operator==(const TransformStep&) const = default;
};

/// At most k distinct transforms applied in listed order; empty = identity.
struct CompositeTransform {
  std::vector<TransformStep> steps;
  bool empty() const { return steps.empty(); }
  /// Sorted component indices.
  std::vector<int> components() const;
  bool operator==(const CompositeTransform&) const = default;
};

/// The ordered active kind set; component i (1-based) is specs()[i-1] and
/// that index is shared by gate outputs, experts and mixture labels.
class TransformSet {
 public:
  TransformSet() = default;
  explicit TransformSet(std::vector<TransformSpec> specs);
  /// random_subgraph, drop_node, drop_edge, add_edge, noisy_node_feat.
  static TransformSet synthetic_default();

  int size() const { return static_cast<int>(specs_.size()); }
  const std::vector<TransformSpec>& specs() const { return specs_; }
  const TransformSpec& spec(int component) const;
  /// Component index names: "identity" first, then each kind.
  std::vector<std::string> index_map() const;

  /// Pairs never composed together: {add_edge, drop_edge} and
  /// {random_subgraph, drop_node}.
  bool excluded_pair(int a, int b) const;
  bool valid_combination(std::span<const int> components) const;
  CompositeTransform composite(std::span<const int> components) const;

  nlohmann::json to_json() const;
  static TransformSet from_json(const nlohmann::json& j);

 private:
  std::vector<TransformSpec> specs_;
};

bool excluded_kind_pair(TransformKind a, TransformKind b);

using MixtureLabel = std::vector<int>;  // K+1 bits

MixtureLabel mixture_label(const CompositeTransform& c, int num_components);

/// Uniform size in 1..k (over sizes that admit a valid combination), then a
/// uniform valid combination of that size, then a random order.
CompositeTransform sample_composite(const TransformSet& set, int k, Rng& rng);

struct Environment {
  int id = 0;
  std::string name;
  CompositeTransform composite;
};

/// Identity, then every valid combination of size 1..k; within a size,
/// combinations are in colexicographic order, e.g. (1,3),(2,3),(1,4),...
std::vector<Environment> enumerate_environments(const TransformSet& set, int k = 2);
nlohmann::json environments_to_json(const std::vector<Environment>& envs);

struct ApplyOptions {
  TaskKind task = TaskKind::graph;
  /// Node task: random_subgraph builds one ego network per listed node (all
  /// nodes when empty); the centre keeps its split tag, other copies get none.
  std::vector<int> subgraph_targets;
};

struct TransformResult {
  Graph graph;
  std::vector<int> node_origin;  // source node id per output node
};

TransformResult apply_tracked(const Graph& g, const CompositeTransform& c, Rng& rng,
                              const ApplyOptions& opts = {});
Graph apply(const Graph& g, const CompositeTransform& c, Rng& rng, const ApplyOptions& opts = {});

/// Single-step application with an explicit strength (no draw from the domain).
TransformResult apply_with_strength(const TransformResult& in, const TransformSpec& spec, double strength,
                                    Rng& rng, const ApplyOptions& opts = {});

}  // namespace gmetro
