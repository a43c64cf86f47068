#pragma once

#include "gmetro/autograd.hpp"
#include "gmetro/graph.hpp"
#include "gmetro/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <utility>

namespace gmetro::testing {

// Undirected graph from unit pairs, both directions stored.
inline Graph undirected(int n, const std::vector<std::pair<int, int>>& pairs, int dim = 3, std::uint64_t seed = 1) {
  Graph g;
  g.directed = false;
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  g.node_features.resize(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) g.node_features(i, j) = nd(rng);
  for (auto [a, b] : pairs) {
    g.edges.push_back({a, b});
    g.edges.push_back({b, a});
  }
  return g;
}

inline Graph ring(int n, int dim = 3, std::uint64_t seed = 1) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i) pairs.emplace_back(i, (i + 1) % n);
  return undirected(n, pairs, dim, seed);
}

// Random simple undirected graph with exactly `units` edges.
inline Graph random_graph(int n, int units, int dim, std::uint64_t seed) {
  Rng rng(seed);
  std::set<std::pair<int, int>> chosen;
  std::uniform_int_distribution<int> pick(0, n - 1);
  while (static_cast<int>(chosen.size()) < units) {
    int a = pick(rng), b = pick(rng);
    if (a == b) continue;
    chosen.emplace(std::min(a, b), std::max(a, b));
  }
  return undirected(n, {chosen.begin(), chosen.end()}, dim, seed + 1);
}

inline std::set<std::pair<int, int>> unit_set(const Graph& g) {
  std::set<std::pair<int, int>> s;
  for (const Edge& e : g.edges) s.emplace(std::min(e.src, e.dst), std::max(e.src, e.dst));
  return s;
}

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

// Central differences of f with respect to every entry of p, compared with
// the analytic gradient already accumulated in p. Returns the worst error.
inline double fd_check(ag::Var& p, const std::function<double()>& f, double eps = 1e-5) {
  const Matrix analytic = p.grad().size() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double orig = p.value()(i, j);
      p.mutable_value()(i, j) = orig + eps;
      const double up = f();
      p.mutable_value()(i, j) = orig - eps;
      const double down = f();
      p.mutable_value()(i, j) = orig;
      const double numeric = (up - down) / (2 * eps);
      worst = std::max(worst, rel_err(analytic(i, j), numeric));
    }
  return worst;
}

}  // namespace gmetro::testing
