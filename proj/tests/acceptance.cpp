// Acceptance run: one PASS/FAIL line per criterion.
//
//   gmetro_acceptance [--work DIR] [--configs DIR] [--only 1,2,...] [--reuse]
//
// Criteria 5-7 share one pipeline run per task (train, evaluate, invariance,
// discover through the CLI entry point) on configs/acceptance-{node,graph}.json.

#include "gmetro/checkpoint.hpp"
#include "gmetro/cli.hpp"
#include "gmetro/config.hpp"
#include "gmetro/evaluation.hpp"
#include "gmetro/graph_io.hpp"
#include "gmetro/synthetic.hpp"
#include "gmetro/training.hpp"
#include "objective_oracle.hpp"
#include "toy_data.hpp"

#include <CLI11.hpp>
#include <boost/math/distributions/binomial.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#ifndef GMETRO_CONFIG_DIR
#define GMETRO_CONFIG_DIR "configs"
#endif

using namespace gmetro;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fixed(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

class Stopwatch {
 public:
  double wall() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - w0_).count(); }
  double cpu() const { return static_cast<double>(std::clock() - c0_) / CLOCKS_PER_SEC; }

 private:
  std::chrono::steady_clock::time_point w0_ = std::chrono::steady_clock::now();
  std::clock_t c0_ = std::clock();
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------
// 1. Transform statistics

// Exact raw moments E[X^1..X^4] of a per-trial statistic.
using Raw = std::array<double, 4>;

struct MomentTest {
  std::string name;
  double z_mean = 0;
  double z_var = 0;
};

MomentTest moment_test(const std::string& name, const std::vector<double>& xs, const Raw& m) {
  const double n = static_cast<double>(xs.size());
  const double mu = m[0];
  const double var = m[1] - mu * mu;
  const double mu4 = m[3] - 4 * mu * m[2] + 6 * mu * mu * m[1] - 3 * std::pow(mu, 4);
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= n;
  double s2 = 0;
  for (double x : xs) s2 += (x - mean) * (x - mean);
  s2 /= n - 1;
  MomentTest t;
  t.name = name;
  t.z_mean = var > 0 ? std::fabs(mean - mu) / std::sqrt(var / n) : (mean == mu ? 0.0 : 1e9);
  const double var_se = std::sqrt(std::max(0.0, mu4 / n - var * var * (n - 3) / (n * (n - 1))));
  t.z_var = var_se > 0 ? std::fabs(s2 - var) / var_se : (s2 == var ? 0.0 : 1e9);
  return t;
}

// Moments of X ~ Binomial(n, q(p)) with p uniform on [lo, hi], by midpoint
// quadrature over p of the exact binomial pmf.
Raw binomial_mixture(int n, double lo, double hi, bool success_is_p) {
  Raw m{0, 0, 0, 0};
  const int grid = 2000;
  for (int g = 0; g < grid; ++g) {
    const double p = lo + (hi - lo) * (g + 0.5) / grid;
    const double q = success_is_p ? p : 1.0 - p;
    boost::math::binomial_distribution<double> bin(n, q);
    for (int x = 0; x <= n; ++x) {
      const double w = boost::math::pdf(bin, x) / grid;
      double xp = 1;
      for (int k = 0; k < 4; ++k) m[k] += w * (xp *= x);
    }
  }
  return m;
}

// E[s^(2k)] for s uniform on [lo, hi].
double uniform_even_moment(double lo, double hi, int k) {
  const int e = 2 * k + 1;
  return (std::pow(hi, e) - std::pow(lo, e)) / (e * (hi - lo));
}

Raw uniform_moments(double lo, double hi) {
  Raw m;
  for (int k = 1; k <= 4; ++k) m[k - 1] = (std::pow(hi, k + 1) - std::pow(lo, k + 1)) / ((k + 1) * (hi - lo));
  return m;
}

// Per-trial mean of eps^2 over M entries, eps ~ N(0, s^2), s uniform.
Raw noise_power_moments(int M, double lo, double hi) {
  Raw m;
  double chi = 1;  // E[(chi2_M / M)^k]
  for (int k = 1; k <= 4; ++k) {
    chi *= (M + 2.0 * (k - 1)) / M;
    m[k - 1] = uniform_even_moment(lo, hi, k) * chi;
  }
  return m;
}

// Per-trial mean of eps over M entries.
Raw noise_mean_moments(int M, double lo, double hi) {
  return {0.0, uniform_even_moment(lo, hi, 1) / M, 0.0, 3.0 * uniform_even_moment(lo, hi, 2) / (double(M) * M)};
}

// Removed units of drop_path on a cycle: the self-avoiding walk continues
// with probability 1/2 after its first step, up to the budget ceil(p * 100).
Raw drop_path_cycle_moments(double lo, double hi, int units) {
  Raw m{0, 0, 0, 0};
  const int grid = 2000;
  for (int g = 0; g < grid; ++g) {
    const double p = lo + (hi - lo) * (g + 0.5) / grid;
    const int budget = static_cast<int>(std::ceil(p * units - 1e-12));
    for (int r = 1; r <= budget; ++r) {
      const double pr = r < budget ? std::pow(0.5, r) : std::pow(0.5, budget - 1);
      double rp = 1;
      for (int k = 0; k < 4; ++k) m[k] += pr / grid * (rp *= r);
    }
  }
  return m;
}

Graph cycle_graph(int n) {
  Graph g;
  Rng rng(0xC1C);
  std::normal_distribution<double> nd(0, 1);
  g.node_features.resize(n, 4);
  for (Eigen::Index i = 0; i < g.node_features.size(); ++i) g.node_features.data()[i] = nd(rng);
  for (int i = 0; i < n; ++i) {
    g.edges.push_back({i, (i + 1) % n});
    g.edges.push_back({(i + 1) % n, i});
  }
  Matrix ef(g.num_edges(), 2);
  for (Eigen::Index i = 0; i < ef.size(); ++i) ef.data()[i] = nd(rng);
  g.edge_features = ef;
  g.graph_label = 0;
  return g;
}

Verdict criterion_transform_statistics() {
  Stopwatch sw;
  const int trials = 1000;
  const Graph g = cycle_graph(100);
  const int units = 100;
  std::vector<MomentTest> tests;

  auto run = [&](TransformKind kind, auto&& statistic) {
    const TransformSpec spec = default_spec(kind);
    const CompositeTransform c{{{1, spec}}};
    std::vector<double> xs;
    for (int t = 0; t < trials; ++t) {
      Rng rng = make_rng(0xACCE, {static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(t)});
      xs.push_back(statistic(apply(g, c, rng)));
    }
    return std::make_pair(spec, xs);
  };
  auto count_changed = [](const Matrix& before, const Matrix& after, double fill) {
    int n = 0;
    for (Eigen::Index i = 0; i < before.size(); ++i)
      if (after.data()[i] == fill && before.data()[i] != fill) ++n;
    return double(n);
  };
  auto noise = [](const Matrix& before, const Matrix& after, bool squared) {
    const Matrix d = after - before;
    return squared ? d.squaredNorm() / double(d.size()) : d.sum() / double(d.size());
  };

  {
    auto [s, xs] = run(TransformKind::drop_edge, [](const Graph& h) { return h.num_edges() / 2.0; });
    tests.push_back(moment_test("drop_edge kept units", xs, binomial_mixture(units, s.domain.lo, s.domain.hi, false)));
  }
  {
    auto [s, xs] = run(TransformKind::drop_node, [](const Graph& h) { return double(h.num_nodes()); });
    tests.push_back(moment_test("drop_node kept nodes", xs, binomial_mixture(100, s.domain.lo, s.domain.hi, false)));
  }
  {
    auto [s, xs] = run(TransformKind::add_edge, [&](const Graph& h) { return h.num_edges() / 2.0 - units; });
    tests.push_back(moment_test("add_edge added units", xs, binomial_mixture(units, s.domain.lo, s.domain.hi, true)));
  }
  {
    auto [s, xs] = run(TransformKind::mask_node_feat,
                       [&](const Graph& h) { return count_changed(g.node_features, h.node_features, 0.0); });
    const int n = static_cast<int>(g.node_features.size());
    tests.push_back(moment_test("mask_node_feat masked entries", xs, binomial_mixture(n, s.domain.lo, s.domain.hi, true)));
  }
  {
    auto [s, xs] = run(TransformKind::mask_edge_feat,
                       [&](const Graph& h) { return count_changed(*g.edge_features, *h.edge_features, 0.0); });
    const int n = static_cast<int>(g.edge_features->size());
    tests.push_back(moment_test("mask_edge_feat masked entries", xs, binomial_mixture(n, s.domain.lo, s.domain.hi, true)));
  }
  {
    auto [s, xs] = run(TransformKind::drop_path, [&](const Graph& h) { return units - h.num_edges() / 2.0; });
    tests.push_back(moment_test("drop_path removed units", xs, drop_path_cycle_moments(s.domain.lo, s.domain.hi, units)));
  }
  for (TransformKind kind : {TransformKind::noisy_node_feat, TransformKind::noisy_edge_feat}) {
    const bool node = kind == TransformKind::noisy_node_feat;
    const Matrix& before = node ? g.node_features : *g.edge_features;
    const int M = static_cast<int>(before.size());
    auto [s, power] = run(kind, [&](const Graph& h) { return noise(before, node ? h.node_features : *h.edge_features, true); });
    auto [s2, mean] = run(kind, [&](const Graph& h) { return noise(before, node ? h.node_features : *h.edge_features, false); });
    tests.push_back(moment_test(std::string(to_string(kind)) + " noise power", power,
                                noise_power_moments(M, s.domain.lo, s.domain.hi)));
    tests.push_back(moment_test(std::string(to_string(kind)) + " noise mean", mean,
                                noise_mean_moments(M, s2.domain.lo, s2.domain.hi)));
  }
  for (TransformKind kind : {TransformKind::node_feat_shift, TransformKind::edge_feat_shift}) {
    const bool node = kind == TransformKind::node_feat_shift;
    const Matrix& before = node ? g.node_features : *g.edge_features;
    auto [s, xs] = run(kind, [&](const Graph& h) { return noise(before, node ? h.node_features : *h.edge_features, false); });
    tests.push_back(moment_test(std::string(to_string(kind)) + " offset", xs, uniform_moments(s.domain.lo, s.domain.hi)));
  }

  double worst = 0;
  std::string worst_name;
  for (const auto& t : tests)
    for (double z : {t.z_mean, t.z_var})
      if (z > worst) {
        worst = z;
        worst_name = t.name;
      }
  const double secs = sw.wall();
  Verdict v;
  v.pass = worst <= 3.0 && secs < 60.0;
  v.detail = std::to_string(tests.size()) + " statistics x (mean, variance) over " + std::to_string(trials) +
             " draws; worst |z| = " + fixed(worst, 2) + " (" + worst_name + "), " + fixed(secs, 1) + " s";
  return v;
}

// ---------------------------------------------------------------------------
// 2. Labels and environment enumeration

Verdict criterion_enumeration() {
  const std::vector<TransformKind> five{TransformKind::random_subgraph, TransformKind::drop_node,
                                        TransformKind::drop_edge, TransformKind::add_edge,
                                        TransformKind::noisy_node_feat};
  auto excluded = [](TransformKind a, TransformKind b) {
    auto is = [&](TransformKind x, TransformKind y) { return (a == x && b == y) || (a == y && b == x); };
    return is(TransformKind::add_edge, TransformKind::drop_edge) ||
           is(TransformKind::random_subgraph, TransformKind::drop_node);
  };
  int sets = 0, checked = 0, mismatches = 0;
  std::string first_problem;
  auto fail = [&](const std::string& what) {
    if (first_problem.empty()) first_problem = what;
    ++mismatches;
  };

  for (int mask = 1; mask < 32; ++mask) {
    std::vector<TransformSpec> specs;
    for (int i = 0; i < 5; ++i)
      if (mask & (1 << i)) specs.push_back(default_spec(five[i]));
    const TransformSet set(specs);
    const int K = set.size();
    ++sets;

    // every subset of components of size <= 2, valid or not
    std::vector<std::vector<int>> subsets{{}};
    for (int a = 1; a <= K; ++a) subsets.push_back({a});
    for (int b = 2; b <= K; ++b)
      for (int a = 1; a < b; ++a) subsets.push_back({a, b});
    for (const auto& s : subsets) {
      const bool valid = s.size() < 2 || !excluded(specs[s[0] - 1].kind, specs[s[1] - 1].kind);
      if (set.valid_combination(s) != valid) fail("valid_combination disagrees");
      if (!valid) continue;
      MixtureLabel expect(K + 1, 0);
      if (s.empty()) expect[0] = 1;
      for (int c : s) expect[c] = 1;
      if (mixture_label(set.composite(s), K) != expect) fail("mixture label disagrees");
      ++checked;
    }

    for (int k = 1; k <= 2; ++k) {
      // identity, then valid subsets by size, colexicographic within a size
      std::vector<std::vector<int>> brute{{}};
      for (int a = 1; a <= K; ++a) brute.push_back({a});
      if (k >= 2)
        for (int b = 2; b <= K; ++b)
          for (int a = 1; a < b; ++a)
            if (!excluded(specs[a - 1].kind, specs[b - 1].kind)) brute.push_back({a, b});
      const auto envs = enumerate_environments(set, k);
      if (envs.size() != brute.size()) {
        fail("environment count " + std::to_string(envs.size()) + " vs " + std::to_string(brute.size()));
        continue;
      }
      std::set<std::string> names;
      for (std::size_t i = 0; i < envs.size(); ++i) {
        if (envs[i].id != static_cast<int>(i)) fail("environment ids not dense");
        if (envs[i].composite.components() != brute[i]) fail("environment order or content");
        MixtureLabel expect(K + 1, 0);
        if (brute[i].empty()) expect[0] = 1;
        for (int c : brute[i]) expect[c] = 1;
        if (mixture_label(envs[i].composite, K) != expect) fail("environment label");
        names.insert(envs[i].name);
      }
      if (names.size() != envs.size()) fail("duplicate environment names");
    }
  }

  const TransformSet def = TransformSet::synthetic_default();
  const auto envs = enumerate_environments(def, 2);
  const bool shape = envs.size() == 14 && envs.front().name == "i.i.d. (0)" && envs.back().name == "(4, 5)";
  if (!shape) fail("default set does not give 14 environments from i.i.d. (0) to (4, 5)");

  // sampler support equals the 13 shifted environments
  std::map<std::vector<int>, int> seen;
  Rng rng(0x5A11);
  for (int t = 0; t < 20000; ++t) seen[sample_composite(def, 2, rng).components()]++;
  if (seen.size() != 13) fail("sampler support has " + std::to_string(seen.size()) + " combinations");
  for (std::size_t i = 1; i < envs.size(); ++i)
    if (!seen.count(envs[i].composite.components())) fail("sampler never drew " + envs[i].name);

  Verdict v;
  v.pass = mismatches == 0;
  v.detail = std::to_string(sets) + " active sets, " + std::to_string(checked) +
             " labels and both k = 1, 2 enumerations against brute force; default set gives " +
             std::to_string(envs.size()) + " environments" +
             (mismatches ? "; " + std::to_string(mismatches) + " mismatches, first: " + first_problem : "");
  return v;
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness

Verdict criterion_gradients() {
  Stopwatch sw;
  struct Variant {
    TaskKind task;
    nn::ConvKind conv;
    ExpertMode mode;
    const char* name;
  };
  const std::vector<Variant> variants{
      {TaskKind::graph, nn::ConvKind::gat, ExpertMode::independent_encoders, "graph/gat"},
      {TaskKind::node, nn::ConvKind::gat, ExpertMode::independent_encoders, "node/gat"},
      {TaskKind::graph, nn::ConvKind::gin, ExpertMode::shared_encoder_with_heads, "graph/gin/shared"},
      {TaskKind::node, nn::ConvKind::gcn, ExpertMode::independent_encoders, "node/gcn"},
  };
  const TransformSet set = TransformSet::synthetic_default();
  double worst = 0, l2_gate = 0, total_vs_l1 = 0;
  std::size_t most_params = 0;
  std::string worst_at;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const Variant& var = variants[i];
    ModelConfig cfg = testing::small_config(var.task, 3, 2, set.size());
    cfg.encoder.conv = var.conv;
    cfg.expert_mode = var.mode;
    MoeModel model(cfg, 100 + i);
    const testing::ObjectiveToy toy = testing::make_toy(var.task, set, 7 + i);
    const testing::GradientReport rep = testing::check_objective_gradients(model, toy, 1.0);
    if (rep.worst_rel_error > worst) {
      worst = rep.worst_rel_error;
      worst_at = std::string(var.name) + " " + rep.worst_param;
    }
    l2_gate = std::max(l2_gate, rep.gate_grad_from_l2);
    total_vs_l1 = std::max(total_vs_l1, rep.gate_total_vs_l1);
    most_params = std::max(most_params, rep.parameters);
  }
  const double secs = sw.wall();
  Verdict v;
  v.pass = worst <= 1e-4 && l2_gate == 0.0 && total_vs_l1 <= 1e-8 && most_params <= 2000 && secs < 120;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%zu variants, <= %zu parameters, 5-node graphs; worst rel error %.2e (%s); gate grad of L2 part "
                "max %.1e; gate total vs L1 %.1e; %.1f s",
                variants.size(), most_params, worst, worst_at.c_str(), l2_gate, total_vs_l1, secs);
  v.detail = buf;
  return v;
}

// ---------------------------------------------------------------------------
// 4. Aggregation algebra

Verdict criterion_aggregation() {
  double worst = 0;
  bool verbatim = true;
  Rng rng(0xA66);
  std::normal_distribution<double> nd(0, 1);
  auto rnd = [&](int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
  };
  ExpertOutputs z;
  for (int i = 0; i < 3; ++i) z.experts.push_back(rnd(4, 5));

  // equal scores: plain average
  GatingOutput eq{Matrix::Constant(4, 3, 0.7)};
  Matrix avg = (z.experts[0] + z.experts[1] + z.experts[2]) / 3.0;
  worst = std::max(worst, (aggregate(eq, z, AggregationMode::softmax_sum) - avg).cwiseAbs().maxCoeff());

  // scores log(1), log(2), log(3): weights 1/6, 2/6, 3/6
  GatingOutput lg{Matrix(4, 3)};
  for (int r = 0; r < 4; ++r) lg.scores.row(r) << std::log(1.0), std::log(2.0), std::log(3.0);
  Matrix w = (z.experts[0] + 2 * z.experts[1] + 3 * z.experts[2]) / 6.0;
  worst = std::max(worst, (aggregate(lg, z, AggregationMode::softmax_sum) - w).cwiseAbs().maxCoeff());

  // two-way: sigmoid of the score gap
  ExpertOutputs two{{z.experts[0], z.experts[1]}};
  GatingOutput gap{Matrix(4, 2)};
  for (int r = 0; r < 4; ++r) gap.scores.row(r) << 1.5 + r, -0.5;
  Matrix expect(4, 5);
  for (int r = 0; r < 4; ++r) {
    const double a = 1.0 / (1.0 + std::exp(-(2.0 + r)));
    expect.row(r) = a * z.experts[0].row(r) + (1 - a) * z.experts[1].row(r);
  }
  worst = std::max(worst, (aggregate(gap, two, AggregationMode::softmax_sum) - expect).cwiseAbs().maxCoeff());

  // argmax returns the chosen expert's row bit for bit; ties go to the lowest index
  GatingOutput pick{rnd(4, 3)};
  pick.scores(3, 0) = pick.scores(3, 1) = pick.scores(3, 2) = 0.25;
  const Matrix sel = aggregate(pick, z, AggregationMode::argmax_select);
  for (int r = 0; r < 4; ++r) {
    Eigen::Index best = 0;
    pick.scores.row(r).maxCoeff(&best);
    if (r == 3) best = 0;
    verbatim = verbatim && sel.row(r) == z.experts[best].row(r);
  }

  // the differentiable path agrees with the value path
  std::vector<ag::Var> vars;
  for (const Matrix& m : z.experts) vars.push_back(ag::constant(m));
  worst = std::max(worst, (ag::softmax_mix(ag::constant(lg.scores), vars).value() - w).cwiseAbs().maxCoeff());
  verbatim = verbatim && ag::select_mix(ag::constant(pick.scores), vars).value() == sel;

  Verdict v;
  v.pass = worst <= 1e-12 && verbatim;
  char buf[256];
  std::snprintf(buf, sizeof buf, "closed-form softmax cases max error %.1e; argmax rows verbatim: %s", worst,
                verbatim ? "yes" : "no");
  v.detail = buf;
  return v;
}

// ---------------------------------------------------------------------------
// 5-7. Desk-scale pipeline

struct TaskRun {
  std::string task;
  fs::path dir;
  fs::path config;
  ExperimentConfig cfg;
  double cpu = 0;   // train + evaluate
  double wall = 0;
  bool ok = false;
  std::string error;
};

int cli(const std::vector<std::string>& args, std::string* err = nullptr) {
  std::ostringstream out, e;
  const int code = run_cli(args, out, e);
  if (err) *err = e.str();
  std::cout << out.str() << std::flush;
  if (code) std::cerr << e.str();
  return code;
}

nlohmann::json acceptance_document(const fs::path& configs, const std::string& task, const fs::path& dir) {
  nlohmann::json doc = nlohmann::json::parse(slurp(configs / ("acceptance-" + task + ".json")));
  doc["dataset"]["path"] = (dir / "data").string();
  doc["output_dir"] = (dir / "runs").string();
  return doc;
}

TaskRun run_pipeline(const fs::path& configs, const fs::path& work, const std::string& task, bool reuse) {
  TaskRun r;
  r.task = task;
  r.dir = work / task;
  fs::create_directories(r.dir);
  r.config = r.dir / "config.json";
  std::ofstream(r.config) << acceptance_document(configs, task, r.dir).dump(2) << "\n";
  r.cfg = load_config(r.config);
  const std::string c = r.config.string();
  auto step = [&](const std::string& cmd) {
    std::string err;
    if (cli({cmd, "--config", c}, &err) != 0) {
      r.error = cmd + ": " + err;
      return false;
    }
    return true;
  };
  bool have = reuse;
  for (auto s : r.cfg.seeds)
    for (const char* m : {"graphmetro", "erm"})
      have = have && fs::exists(r.cfg.output_dir / m / ("seed_" + std::to_string(s)) / "env_results.csv");
  if (!have) {
    if (!step("gen-data")) return r;
    Stopwatch sw;
    if (!step("train") || !step("evaluate")) return r;
    r.cpu = sw.cpu();
    r.wall = sw.wall();
    std::ofstream(r.dir / "timing.txt") << r.cpu << " " << r.wall << "\n";
    if (!step("invariance") || !step("discover")) return r;
  } else {
    std::ifstream(r.dir / "timing.txt") >> r.cpu >> r.wall;
  }
  r.ok = true;
  return r;
}

fs::path seed_dir(const TaskRun& r, const std::string& method, std::uint64_t seed) {
  return r.cfg.output_dir / method / ("seed_" + std::to_string(seed));
}

// Mean over shifted environments (env_id != 0) of one run.
double shifted_mean(const fs::path& csv) {
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  double sum = 0;
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = parse_csv_row(line);
    if (std::stoi(f.at(3)) == 0) continue;
    sum += parse_double(f.at(6));
    ++n;
  }
  if (n != 13) throw Error(csv.string() + " has " + std::to_string(n) + " shifted environments, expected 13");
  return sum / n;
}

Verdict criterion_generalization(const std::vector<TaskRun>& runs) {
  Verdict v{true, ""};
  double cpu = 0, wall = 0;
  for (const TaskRun& r : runs) {
    if (!r.ok) return {false, r.task + " pipeline failed: " + r.error};
    std::vector<double> margins;
    for (auto s : r.cfg.seeds)
      margins.push_back(shifted_mean(seed_dir(r, "graphmetro", s) / "env_results.csv") -
                        shifted_mean(seed_dir(r, "erm", s) / "env_results.csv"));
    double mean = 0;
    int positive = 0;
    std::string per;
    for (double m : margins) {
      mean += m / margins.size();
      positive += m > 0;
      per += (per.empty() ? "" : " ") + fixed(100 * m, 1);
    }
    const bool ok = margins.size() == 5 && mean >= 0.02 && positive >= 4;
    v.pass = v.pass && ok;
    v.detail += r.task + ": margin " + fixed(100 * mean, 2) + " pts [" + per + "], " + std::to_string(positive) +
                "/5 positive; ";
    cpu += r.cpu;
    wall += r.wall;
  }
  v.pass = v.pass && cpu < 1800;
  v.detail += "train+evaluate " + fixed(cpu / 60, 1) + " CPU min (" + fixed(wall / 60, 1) + " wall)";
  return v;
}

int component_of(const ExperimentConfig& cfg, TransformKind kind) {
  for (int i = 1; i <= cfg.transforms.size(); ++i)
    if (cfg.transforms.spec(i).kind == kind) return i;
  throw Error("kind not in the active set");
}

Verdict criterion_gating(const std::vector<TaskRun>& runs) {
  Verdict v{true, ""};
  for (const TaskRun& r : runs) {
    if (!r.ok) return {false, r.task + " pipeline failed: " + r.error};
    const int target = component_of(r.cfg, TransformKind::drop_edge);
    double bits = 0, argmax = 0, lowest = 1;
    int ranked_first = 0;
    for (auto s : r.cfg.seeds) {
      const auto j = nlohmann::json::parse(slurp(seed_dir(r, "graphmetro", s) / "shift_report.json"));
      const double b = j.at("gating_bit_accuracy").get<double>();
      bits += b / r.cfg.seeds.size();
      lowest = std::min(lowest, b);
      argmax += j.at("gating_argmax_accuracy").get<double>() / r.cfg.seeds.size();
      const auto probs = j.at("mean_probabilities").get<std::vector<double>>();
      int top = 1;
      for (int i = 2; i < static_cast<int>(probs.size()); ++i)
        if (probs[i] > probs[top]) top = i;
      ranked_first += top == target;
    }
    const int n = static_cast<int>(r.cfg.seeds.size());
    const bool ok = bits >= 0.80 && ranked_first == n;
    v.pass = v.pass && ok;
    v.detail += r.task + ": bit accuracy " + fixed(bits, 3) + " (min " + fixed(lowest, 3) + ", argmax " +
                fixed(argmax, 3) + "), drop_edge first " + std::to_string(ranked_first) + "/" + std::to_string(n) +
                "; ";
  }
  v.detail += "all-zero gate scores " + fixed(5.0 / 6.0, 3) + " bit accuracy";
  return v;
}

Matrix read_matrix_csv(const fs::path& file) {
  std::istringstream in(slurp(file));
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = parse_csv_row(line);
    rows.emplace_back();
    for (std::size_t k = 3; k < f.size(); ++k) rows.back().push_back(parse_double(f[k]));
  }
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

int diagonal_rows(const Matrix& m) {
  int n = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double off = (m.row(i).sum() - m(i, i)) / static_cast<double>(m.cols() - 1);
    n += m(i, i) < off;
  }
  return n;
}

// All experts tied to the reference and every transform at zero strength.
double tied_control(const TaskRun& r) {
  LoadedCheckpoint ck = load_checkpoint(seed_dir(r, "graphmetro", r.cfg.seeds.front()) / "checkpoint.json");
  auto* moe = dynamic_cast<MoeModel*>(ck.model.get());
  if (!moe) throw Error("not a mixture checkpoint");
  moe->tie_experts_to_reference();
  std::vector<TransformSpec> specs;
  for (TransformKind k : {TransformKind::drop_edge, TransformKind::drop_node, TransformKind::add_edge,
                          TransformKind::noisy_node_feat, TransformKind::mask_node_feat}) {
    TransformSpec s = default_spec(k);
    s.domain = {0.0, 0.0};
    specs.push_back(s);
  }
  specs.resize(static_cast<std::size_t>(moe->config().num_components));
  const DatasetSplit data = read_dataset(r.cfg.dataset.path);
  const InvarianceMatrix im = invariance_matrix(*moe, data, TransformSet(specs), 0, {10, 64, InvarianceNorm::row_min_max, 1});
  return im.raw.cwiseAbs().maxCoeff();
}

Verdict criterion_invariance(const std::vector<TaskRun>& runs) {
  Verdict v{true, ""};
  for (const TaskRun& r : runs) {
    if (!r.ok) return {false, r.task + " pipeline failed: " + r.error};
    Matrix mean;
    std::string per;
    for (auto s : r.cfg.seeds) {
      const Matrix m = read_matrix_csv(seed_dir(r, "graphmetro", s) / "invariance_matrix.csv");
      mean = mean.size() ? Matrix(mean + m) : m;
      per += (per.empty() ? "" : " ") + std::to_string(diagonal_rows(m));
    }
    mean /= static_cast<double>(r.cfg.seeds.size());
    const int rows = diagonal_rows(mean);
    const double control = tied_control(r);
    const bool ok = rows >= 3 && control == 0.0;
    v.pass = v.pass && ok;
    v.detail += r.task + ": seed-mean matrix " + std::to_string(rows) + "/" + std::to_string(mean.rows()) +
                " rows diagonal-below-mean (per seed " + per + "), tied control max " + fixed(control, 1) + "; ";
  }
  return v;
}

// Shift discovery on the clean source and on a 50/50 planted mixture; reported, not scored.
void discovery_notes(const std::vector<TaskRun>& runs) {
  for (const TaskRun& r : runs) {
    if (!r.ok) continue;
    const DatasetSplit data = read_dataset(r.cfg.dataset.path);
    const auto labels = r.cfg.transforms.index_map();
    const int a = component_of(r.cfg, TransformKind::drop_edge);
    const int b = component_of(r.cfg, TransformKind::noisy_node_feat);
    int clean_top = 0, pair_top = 0;
    for (auto s : r.cfg.seeds) {
      LoadedCheckpoint ck = load_checkpoint(seed_dir(r, "graphmetro", s) / "checkpoint.json");
      const auto& moe = dynamic_cast<const MoeModel&>(*ck.model);
      const auto clean = partition_batches(data, Split::test, 64);
      const ShiftReport rc = discover_shifts(moe, clean, labels);
      clean_top += std::max_element(rc.mean_probabilities.begin(), rc.mean_probabilities.end()) ==
                   rc.mean_probabilities.begin();
      std::vector<Batch> mix = environment_batches(data, {1, "a", r.cfg.transforms.composite(std::vector<int>{a})}, s, 64);
      auto more = environment_batches(data, {2, "b", r.cfg.transforms.composite(std::vector<int>{b})}, s, 64);
      for (auto& x : more) mix.push_back(std::move(x));
      const ShiftReport rm = discover_shifts(moe, mix, labels);
      bool both = true;
      for (int i = 1; i < static_cast<int>(labels.size()); ++i)
        if (i != a && i != b)
          both = both && rm.mean_probabilities[a] > rm.mean_probabilities[i] &&
                 rm.mean_probabilities[b] > rm.mean_probabilities[i];
      pair_top += both;
    }
    std::cout << "note: " << r.task << " shift discovery: clean target puts identity first in " << clean_top << "/"
              << r.cfg.seeds.size() << " seeds; drop_edge + noisy_node_feat mixture puts both above the rest in "
              << pair_top << "/" << r.cfg.seeds.size() << "\n";
  }
}

// ---------------------------------------------------------------------------
// 8. Determinism

Verdict criterion_determinism(const std::vector<TaskRun>& runs, const fs::path& work) {
  int files = 0, differ = 0;
  std::string first;
  for (const TaskRun& r : runs) {
    if (!r.ok) return {false, r.task + " pipeline failed: " + r.error};
    const std::uint64_t seed = r.cfg.seeds.front();
    const fs::path again = work / (r.task + "-repeat");
    fs::remove_all(again);
    // The dataset is regenerated elsewhere under a copy of the config; the runs
    // reuse the original config (and so its hash) with only --out changed.
    nlohmann::json doc = nlohmann::json::parse(slurp(r.config));
    doc["dataset"]["path"] = (again / "data").string();
    fs::create_directories(again);
    const fs::path data_cfg = again / "data-config.json";
    std::ofstream(data_cfg) << doc.dump(2) << "\n";
    ::setenv("GMETRO_NUM_WORKERS", "2", 1);
    std::string err;
    if (cli({"gen-data", "--config", data_cfg.string()}, &err) != 0) {
      ::unsetenv("GMETRO_NUM_WORKERS");
      return {false, "repeat gen-data failed: " + err};
    }
    for (const char* cmd : {"train", "evaluate", "invariance", "discover"}) {
      const std::vector<std::string> args{cmd,     "--config", r.config.string(), "--out", (again / "runs").string(),
                                          "--seed", std::to_string(seed)};
      if (cli(args, &err) != 0) {
        ::unsetenv("GMETRO_NUM_WORKERS");
        return {false, std::string("repeat ") + cmd + " failed: " + err};
      }
    }
    ::unsetenv("GMETRO_NUM_WORKERS");
    auto compare = [&](const fs::path& a, const fs::path& b) {
      for (const auto& e : fs::recursive_directory_iterator(b)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), b);
        ++files;
        if (!fs::exists(a / rel) || slurp(a / rel) != slurp(e.path())) {
          ++differ;
          if (first.empty()) first = (a / rel).string();
        }
      }
    };
    compare(r.cfg.dataset.path, again / "data");
    compare(r.cfg.output_dir, again / "runs");
  }
  Verdict v;
  v.pass = differ == 0 && files > 0;
  v.detail = std::to_string(files) + " artifacts regenerated (seed 0, 2 workers), " + std::to_string(differ) +
             " differ" + (first.empty() ? "" : ", first: " + first);
  return v;
}

// ---------------------------------------------------------------------------
// 9. ERM-Aug with only the identity

Verdict criterion_erm_aug(const fs::path& configs, const fs::path& work) {
  int steps = 0;
  bool same = true;
  std::string detail;
  for (const std::string task : {"node", "graph"}) {
    const ExperimentConfig cfg = parse_config(acceptance_document(configs, task, work / task));
    const DatasetSplit data = generate_synthetic(*cfg.dataset.synthetic);
    const ModelConfig mc = cfg.model_config(data.feature_dim(), data.num_classes);
    TrainConfig tc = cfg.train;
    tc.epochs = 5;
    tc.seed = 3;
    const TransformSet identity_only;  // component 0 is always the identity
    std::vector<LossBreakdown> a, b;
    GnnClassifier erm(mc, derive_seed(tc.seed, {1})), aug(mc, derive_seed(tc.seed, {1}));
    tc.method = Method::erm;
    const TrainResult ra = train(erm, data, tc, identity_only, [&](const LossBreakdown& l) { a.push_back(l); });
    tc.method = Method::erm_aug;
    const TrainResult rb = train(aug, data, tc, identity_only, [&](const LossBreakdown& l) { b.push_back(l); });
    bool params = true;
    const auto& pa = erm.parameters().items();
    const auto& pb = aug.parameters().items();
    for (std::size_t i = 0; i < pa.size(); ++i) params = params && pa[i].var.value() == pb[i].var.value();
    const bool ok = a == b && ra.history == rb.history && params && !a.empty();
    same = same && ok;
    steps += static_cast<int>(a.size());
    detail += task + (ok ? " identical" : " differs") + "; ";
  }
  return {same, detail + std::to_string(steps) + " steps compared with final parameters"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GraphMETRO acceptance run"};
  fs::path work = fs::temp_directory_path() / "gmetro_acceptance";
  fs::path configs = GMETRO_CONFIG_DIR;
  std::vector<int> only;
  bool reuse = false;
  app.add_option("--work", work, "scratch directory for datasets and runs");
  app.add_option("--configs", configs, "directory holding acceptance-node.json and acceptance-graph.json");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_flag("--reuse", reuse, "reuse finished pipeline runs found in --work");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  const char* titles[] = {"",
                          "transform statistics",
                          "label and enumeration oracle",
                          "gradient correctness",
                          "aggregation algebra",
                          "desk-scale generalization",
                          "gating recovery",
                          "invariance matrix pattern",
                          "determinism",
                          "ERM-Aug degeneracy"};
  std::vector<std::pair<int, Verdict>> verdicts;
  auto record = [&](int id, const std::function<Verdict()>& f) {
    if (!wanted(id)) return;
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %d %s: %s (%s)\n", id, v.pass ? "PASS" : "FAIL", titles[id], v.detail.c_str());
    std::fflush(stdout);
    verdicts.emplace_back(id, v);
  };

  record(1, criterion_transform_statistics);
  record(2, criterion_enumeration);
  record(3, criterion_gradients);
  record(4, criterion_aggregation);

  std::vector<TaskRun> runs;
  if (wanted(5) || wanted(6) || wanted(7) || wanted(8)) {
    fs::create_directories(work);
    for (const std::string task : {"node", "graph"}) {
      try {
        runs.push_back(run_pipeline(configs, work, task, reuse));
      } catch (const std::exception& e) {
        TaskRun r;
        r.task = task;
        r.error = e.what();
        runs.push_back(r);
      }
    }
  }
  record(5, [&] { return criterion_generalization(runs); });
  record(6, [&] { return criterion_gating(runs); });
  record(7, [&] { return criterion_invariance(runs); });
  if (wanted(6)) {
    try {
      discovery_notes(runs);
    } catch (const std::exception& e) {
      std::cout << "note: shift discovery check failed: " << e.what() << "\n";
    }
  }
  record(8, [&] { return criterion_determinism(runs, work); });
  record(9, [&] { return criterion_erm_aug(configs, work); });

  int failed = 0;
  for (const auto& [id, v] : verdicts) failed += !v.pass;
  std::printf("acceptance: %zu criteria, %d failed\n", verdicts.size(), failed);
  return failed ? 1 : 0;
}
