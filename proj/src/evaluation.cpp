#include "gmetro/evaluation.hpp"

#include "gmetro/parallel.hpp"
#include "gmetro/training.hpp"

#include <algorithm>
#include <numeric>

namespace gmetro {

std::string_view to_string(Metric m) { return m == Metric::accuracy ? "accuracy" : "roc_auc"; }

Metric parse_metric(std::string_view s) {
  if (s == "accuracy" || s == "acc") return Metric::accuracy;
  if (s == "roc_auc" || s == "roc-auc" || s == "auc") return Metric::roc_auc;
  throw Error("unknown metric: " + std::string(s));
}

double accuracy(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size())) throw Error("accuracy: label count mismatch");
  if (labels.empty()) throw Error("accuracy: no instances");
  const std::vector<int> pred = ag::argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double roc_auc(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size())) throw Error("roc_auc: label count mismatch");
  if (logits.cols() > 2) throw Error("roc_auc: binary tasks only");
  const Eigen::Index n = logits.rows();
  std::vector<double> margin(n);
  for (Eigen::Index i = 0; i < n; ++i)
    margin[i] = logits.cols() == 2 ? logits(i, 1) - logits(i, 0) : logits(i, 0);

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return margin[a] < margin[b]; });
  std::vector<double> rank(n);
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j + 1 < n && margin[order[j + 1]] == margin[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index t = i; t <= j; ++t) rank[order[t]] = r;
    i = j + 1;
  }
  double pos = 0, neg = 0, rank_sum = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      ++pos;
      rank_sum += rank[i];
    } else {
      ++neg;
    }
  }
  if (pos == 0 || neg == 0) throw Error("roc_auc: both classes must be present");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double score(Metric m, const Matrix& logits, std::span<const int> labels) {
  return m == Metric::accuracy ? accuracy(logits, labels) : roc_auc(logits, labels);
}

namespace {

std::vector<Batch> chunk_graphs(const std::vector<Graph>& graphs, int batch_size) {
  std::vector<Batch> out;
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t lo = 0; lo < graphs.size(); lo += bs) {
    const std::size_t hi = std::min(graphs.size(), lo + bs);
    out.push_back(make_graph_batch(std::span<const Graph>(graphs.data() + lo, hi - lo)));
  }
  return out;
}

// Keeps the rows whose source node is flagged.
void restrict_rows(Batch& b, const std::vector<char>& keep) {
  std::vector<int> rows, origin, labels;
  for (std::size_t r = 0; r < b.rows.size(); ++r) {
    if (!keep.at(b.origin[r])) continue;
    rows.push_back(b.rows[r]);
    origin.push_back(b.origin[r]);
    if (!b.labels.empty()) labels.push_back(b.labels[r]);
  }
  b.rows = std::move(rows);
  b.origin = std::move(origin);
  b.labels = std::move(labels);
}

// Deterministic subset of test instances (graph indices or node ids).
std::vector<int> test_sample(const DatasetSplit& data, int max_instances, std::uint64_t seed) {
  std::vector<int> ids;
  if (data.task == TaskKind::graph) {
    ids.resize(data.graphs(Split::test).size());
    std::iota(ids.begin(), ids.end(), 0);
  } else {
    ids = data.nodes(Split::test);
  }
  if (ids.empty()) throw Error("test partition is empty");
  if (static_cast<int>(ids.size()) > max_instances) {
    Rng rng = make_rng(seed, {0x5a3});
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(max_instances);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

// One batch holding `ids` after `c` (a fresh stream per instance), matched to
// the clean instances by origin.
Batch transformed_sample(const DatasetSplit& data, const std::vector<int>& ids, const CompositeTransform& c,
                         std::uint64_t root) {
  if (data.task == TaskKind::graph) {
    const auto& test = data.graphs(Split::test);
    std::vector<Graph> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Rng rng = make_rng(root, {static_cast<std::uint64_t>(ids[i])});
      out.push_back(c.empty() ? test[ids[i]] : apply(test[ids[i]], c, rng, {TaskKind::graph, {}}));
    }
    return make_graph_batch(std::span<const Graph>(out));
  }
  std::vector<char> keep(data.graph.num_nodes(), 0);
  for (int v : ids) keep[v] = 1;
  Batch b;
  if (c.empty()) {
    b = make_node_batch(data.graph, Split::test);
  } else {
    Rng rng = make_rng(root, {0});
    TransformResult tr = apply_tracked(data.graph, c, rng, {TaskKind::node, ids});
    b = make_node_batch(tr.graph, Split::test, tr.node_origin);
  }
  restrict_rows(b, keep);
  return b;
}

std::vector<int> clean_rows_for(const Batch& clean, const Batch& shifted) {
  if (clean.task == TaskKind::graph) {
    std::vector<int> idx(shifted.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  std::vector<int> where(*std::max_element(clean.origin.begin(), clean.origin.end()) + 1, -1);
  for (std::size_t r = 0; r < clean.origin.size(); ++r) where[clean.origin[r]] = static_cast<int>(r);
  std::vector<int> idx;
  for (int o : shifted.origin) idx.push_back(where.at(o));
  return idx;
}

Matrix take_rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(r) = m.row(idx[r]);
  return out;
}

double representation_distance_value(TaskKind task, const Matrix& a, const Matrix& b) {
  ag::NoGradGuard guard;
  return representation_distance(task, ag::constant(a), ag::constant(b)).scalar();
}

}  // namespace

std::vector<Batch> partition_batches(const DatasetSplit& data, Split which, int batch_size) {
  if (data.task == TaskKind::graph) return chunk_graphs(data.graphs(which), batch_size);
  std::vector<Batch> out;
  out.push_back(make_node_batch(data.graph, which));
  return out;
}

Predictions predict(const Model& model, std::span<const Batch> batches) {
  ag::NoGradGuard guard;
  std::vector<Matrix> parts;
  Predictions p;
  Eigen::Index rows = 0;
  for (const Batch& b : batches) {
    if (b.size() == 0) continue;
    parts.push_back(model.logits(b, {}).value());
    rows += parts.back().rows();
    p.labels.insert(p.labels.end(), b.labels.begin(), b.labels.end());
  }
  p.logits.resize(rows, model.config().num_classes);
  Eigen::Index at = 0;
  for (const Matrix& m : parts) {
    p.logits.middleRows(at, m.rows()) = m;
    at += m.rows();
  }
  return p;
}

double evaluate_split(const Model& model, const DatasetSplit& data, Split which, Metric m, int batch_size) {
  const std::vector<Batch> batches = partition_batches(data, which, batch_size);
  Predictions p = predict(model, batches);
  return score(m, p.logits, p.labels);
}

std::vector<Batch> environment_batches(const DatasetSplit& data, const Environment& env, std::uint64_t seed,
                                       int batch_size, int workers) {
  const std::uint64_t root = derive_seed(seed, {static_cast<std::uint64_t>(env.id)});
  if (data.task == TaskKind::node) {
    if (env.composite.empty()) return partition_batches(data, Split::test, batch_size);
    Rng rng = make_rng(root, {0});
    TransformResult tr = apply_tracked(data.graph, env.composite, rng, {TaskKind::node, data.nodes(Split::test)});
    std::vector<Batch> out;
    out.push_back(make_node_batch(tr.graph, Split::test, tr.node_origin));
    return out;
  }
  const auto& test = data.graphs(Split::test);
  if (env.composite.empty()) return chunk_graphs(test, batch_size);
  std::vector<Graph> shifted(test.size());
  parallel_for(static_cast<int>(test.size()), workers, [&](int i) {
    Rng rng = make_rng(root, {static_cast<std::uint64_t>(i)});
    shifted[i] = apply(test[i], env.composite, rng, {TaskKind::graph, {}});
  });
  return chunk_graphs(shifted, batch_size);
}

std::vector<EnvResult> evaluate_environments(const Model& model, const DatasetSplit& data,
                                             const std::vector<Environment>& envs,
                                             std::span<const std::uint64_t> seeds, const EvalOptions& opts) {
  std::vector<EnvResult> out;
  for (std::uint64_t s : seeds) {
    for (const Environment& env : envs) {
      const std::vector<Batch> batches = environment_batches(data, env, s, opts.batch_size, opts.workers);
      Predictions p = predict(model, batches);
      EnvResult r;
      r.env_id = env.id;
      r.env_name = env.name;
      r.seed = s;
      r.metric = opts.metric;
      r.num_instances = static_cast<int>(p.labels.size());
      r.value = score(opts.metric, p.logits, p.labels);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::string_view to_string(InvarianceNorm n) { return n == InvarianceNorm::row_min_max ? "row_min_max" : "global_max"; }

InvarianceNorm parse_invariance_norm(std::string_view s) {
  if (s == "row_min_max") return InvarianceNorm::row_min_max;
  if (s == "global_max") return InvarianceNorm::global_max;
  throw Error("unknown invariance normalization: " + std::string(s));
}

Matrix normalize_invariance(const Matrix& raw, InvarianceNorm norm) {
  Matrix out = Matrix::Zero(raw.rows(), raw.cols());
  if (raw.size() == 0) return out;
  if (norm == InvarianceNorm::global_max) {
    const double mx = raw.maxCoeff();
    if (mx > 0) out = raw / mx;
    return out;
  }
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double lo = raw.row(i).minCoeff();
    const double hi = raw.row(i).maxCoeff();
    if (hi > lo) out.row(i) = (raw.row(i).array() - lo) / (hi - lo);
  }
  return out;
}

InvarianceMatrix invariance_matrix(const MoeModel& model, const DatasetSplit& data, const TransformSet& set,
                                   std::uint64_t seed, const InvarianceOptions& opts) {
  const int K = set.size();
  if (K < 1) throw Error("invariance matrix needs a non-empty transform set");
  if (model.config().num_components != K) throw Error("model and transform set disagree on K");
  if (opts.trials < 1) throw Error("trials must be >= 1");
  const TaskKind task = data.task;
  const std::vector<int> ids = test_sample(data, opts.max_instances, seed);
  const Batch clean = transformed_sample(data, ids, {}, 0);
  const Matrix reference = model.experts_forward(clean).experts[0];

  std::vector<Matrix> partial(opts.trials, Matrix::Zero(K, K));
  parallel_for(opts.trials, opts.workers, [&](int t) {
    for (int j = 1; j <= K; ++j) {
      const std::vector<int> comp{j};
      const std::uint64_t root = derive_seed(seed, {static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(t)});
      const Batch shifted = transformed_sample(data, ids, set.composite(comp), root);
      if (shifted.size() == 0) throw Error("transform removed every sampled instance");
      const Matrix target = take_rows(reference, clean_rows_for(clean, shifted));
      const ExpertOutputs z = model.experts_forward(shifted);
      for (int i = 1; i <= K; ++i)
        partial[t](i - 1, j - 1) = representation_distance_value(task, z.experts[i], target);
    }
  });
  InvarianceMatrix m;
  m.raw = Matrix::Zero(K, K);
  for (const Matrix& p : partial) m.raw += p;
  m.raw /= static_cast<double>(opts.trials);
  m.norm = opts.norm;
  m.normalized = normalize_invariance(m.raw, opts.norm);
  for (const TransformSpec& s : set.specs()) m.labels.emplace_back(to_string(s.kind));
  return m;
}

ShiftReport discover_shifts(const MoeModel& model, std::span<const Batch> batches,
                            const std::vector<std::string>& labels) {
  const int width = model.config().num_components + 1;
  RowVector sum = RowVector::Zero(width);
  int count = 0;
  for (const Batch& b : batches) {
    if (b.size() == 0) continue;
    const Matrix p = ag::sigmoid(model.gate_forward(b).scores);
    sum += p.colwise().sum();
    count += static_cast<int>(p.rows());
  }
  if (count == 0) throw Error("no instances to inspect");
  ShiftReport r;
  r.labels = labels;
  r.num_instances = count;
  for (int c = 0; c < width; ++c) r.mean_probabilities.push_back(sum(c) / count);
  return r;
}

nlohmann::json to_json(const ShiftReport& r) {
  nlohmann::json j;
  j["labels"] = r.labels;
  j["mean_probabilities"] = r.mean_probabilities;
  j["num_instances"] = r.num_instances;
  if (r.gating_bit_accuracy) j["gating_bit_accuracy"] = *r.gating_bit_accuracy;
  if (r.gating_argmax_accuracy) j["gating_argmax_accuracy"] = *r.gating_argmax_accuracy;
  return j;
}

GatingProbe probe_gating(const MoeModel& model, const DatasetSplit& data, const TransformSet& set,
                         std::uint64_t seed, int max_instances) {
  const int K = set.size();
  if (model.config().num_components != K) throw Error("model and transform set disagree on K");
  const std::vector<int> ids = test_sample(data, max_instances, seed);
  GatingProbe probe;
  double bit_hits = 0, bits = 0, planted_sum = 0;
  for (int c = 0; c <= K; ++c) {
    CompositeTransform comp;
    if (c > 0) {
      const std::vector<int> one{c};
      comp = set.composite(one);
    }
    const Batch b = transformed_sample(data, ids, comp, derive_seed(seed, {0x9a7e, static_cast<std::uint64_t>(c)}));
    const Matrix w = model.gate_forward(b).scores;
    const std::vector<int> top = ag::argmax_rows(w);
    int hits = 0;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      hits += top[r] == c;
      for (int col = 0; col <= K; ++col) {
        bit_hits += (w(r, col) > 0.0) == (col == c);
        ++bits;
      }
    }
    const double acc = w.rows() > 0 ? static_cast<double>(hits) / static_cast<double>(w.rows()) : 0.0;
    probe.per_component_argmax.push_back(acc);
    if (c > 0) planted_sum += acc;
    probe.num_probes += static_cast<int>(w.rows());
  }
  probe.bit_accuracy = bits > 0 ? bit_hits / bits : 0.0;
  probe.argmax_accuracy = K > 0 ? planted_sum / K : 0.0;
  return probe;
}

}  // namespace gmetro
