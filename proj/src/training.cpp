#include "gmetro/training.hpp"

#include "gmetro/evaluation.hpp"
#include "gmetro/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace gmetro {

using ag::Var;

std::string_view to_string(Method m) {
  switch (m) {
    case Method::graphmetro: return "graphmetro";
    case Method::erm: return "erm";
    case Method::erm_aug: return "erm_aug";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  if (s == "graphmetro") return Method::graphmetro;
  if (s == "erm") return Method::erm;
  if (s == "erm_aug" || s == "erm-aug") return Method::erm_aug;
  throw Error("unknown method: " + std::string(s));
}

std::vector<std::string> TrainConfig::validate(int num_components) const {
  std::vector<std::string> errs;
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) errs.push_back("learning_rate must be positive");
  if (gate_learning_rate && (!(*gate_learning_rate > 0.0) || !std::isfinite(*gate_learning_rate)))
    errs.push_back("gate_learning_rate must be positive");
  if (epochs < 1) errs.push_back("epochs must be >= 1");
  if (batch_size < 1) errs.push_back("batch_size must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) errs.push_back("lambda must be >= 0");
  if (weight_decay < 0.0) errs.push_back("weight_decay must be >= 0");
  if (max_subgraph_targets < 1) errs.push_back("max_subgraph_targets must be >= 1");
  if (divergence_patience < 1) errs.push_back("divergence_patience must be >= 1");
  if (workers < 1) errs.push_back("workers must be >= 1");
  if (method != Method::erm) {
    if (method == Method::graphmetro && num_components < 1)
      errs.push_back("graphmetro needs at least one transform");
    if (num_components > 0 && (k < 1 || k > num_components))
      errs.push_back("k must be in [1, " + std::to_string(num_components) + "]");
  }
  return errs;
}

double gating_loss(const Matrix& w, const Matrix& bits) {
  ag::NoGradGuard guard;
  return ag::bce_with_logits(ag::constant(w), bits).scalar();
}

double alignment_distance(const Matrix& a, const Matrix& b) {
  ag::NoGradGuard guard;
  return ag::frobenius_distance(ag::constant(a), ag::constant(b)).scalar();
}

Matrix mixture_bits(const std::vector<MixtureLabel>& per_instance, const Batch& b) {
  const int n = b.size();
  if (per_instance.empty()) throw Error("mixture_bits: no labels");
  const int width = static_cast<int>(per_instance.front().size());
  Matrix bits(n, width);
  for (int r = 0; r < n; ++r) {
    const MixtureLabel& m = per_instance.size() == 1 ? per_instance.front() : per_instance.at(r);
    for (int c = 0; c < width; ++c) bits(r, c) = m.at(c);
  }
  return bits;
}

LossBreakdown ObjectiveTerms::values() const {
  LossBreakdown out;
  out.l1_gating = l1 ? l1.scalar() : 0.0;
  out.l2_task = l2_task ? l2_task.scalar() : 0.0;
  out.l2_align = l2_align ? l2_align.scalar() : 0.0;
  out.total = total ? total.scalar() : 0.0;
  return out;
}

Var representation_distance(TaskKind task, const Var& a, const Var& b) {
  return task == TaskKind::node ? ag::frobenius_distance(a, b) : ag::row_distance_mean(a, b);
}

namespace {

Var mean_of(const Var& a, const Var& b) { return ag::scale(ag::add(a, b), 0.5); }

Matrix identity_bits(int rows, int width) {
  Matrix bits = Matrix::Zero(rows, width);
  bits.col(0).setOnes();
  return bits;
}

// Rows of the clean reference matching each shifted row.
std::vector<int> reference_rows(const Batch& clean, const Batch& shifted) {
  if (clean.task == TaskKind::graph) {
    if (shifted.size() != clean.size()) throw Error("shifted batch does not match its clean source");
    std::vector<int> idx(shifted.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  std::unordered_map<int, int> where;
  for (std::size_t r = 0; r < clean.origin.size(); ++r) where.emplace(clean.origin[r], static_cast<int>(r));
  std::vector<int> idx;
  idx.reserve(shifted.origin.size());
  for (int o : shifted.origin) {
    auto it = where.find(o);
    if (it == where.end()) throw Error("shifted node " + std::to_string(o) + " has no clean counterpart");
    idx.push_back(it->second);
  }
  return idx;
}

}  // namespace

namespace {

// The aggregation seen by the alignment term: expert 0 enters as a constant,
// so that term never moves the reference it is measured against.
Var alignment_mixture(const MoeModel& model, const ForwardPass& f) {
  std::vector<Var> experts = f.experts;
  experts[0] = ag::detach(experts[0]);
  return model.aggregate(ag::detach(f.scores), experts);
}

}  // namespace

ObjectiveTerms graphmetro_objective(const MoeModel& model, const Batch& clean, const ShiftedBatch& shifted,
                                    double lambda, const nn::ForwardContext& ctx) {
  if (!(lambda >= 0.0)) throw Error("lambda must be >= 0");
  const TaskKind task = model.config().task;
  const int width = model.config().num_components + 1;

  ForwardPass fc = model.forward(clean, ctx);
  Var reference = ag::detach(fc.experts[0]);
  Var l1 = ag::bce_with_logits(fc.scores, identity_bits(clean.size(), width));
  Var task_loss = ag::cross_entropy(fc.logits, clean.labels);
  Var align = representation_distance(task, alignment_mixture(model, fc), reference);

  if (shifted.batch.size() > 0) {
    if (shifted.bits.rows() != shifted.batch.size() || shifted.bits.cols() != width)
      throw Error("mixture bits do not match the shifted batch");
    ForwardPass fs = model.forward(shifted.batch, ctx);
    const std::vector<int> idx = reference_rows(clean, shifted.batch);
    Var target = task == TaskKind::node ? ag::gather_rows(reference, idx) : reference;
    l1 = mean_of(l1, ag::bce_with_logits(fs.scores, shifted.bits));
    task_loss = mean_of(task_loss, ag::cross_entropy(fs.logits, shifted.batch.labels));
    align = mean_of(align, representation_distance(task, alignment_mixture(model, fs), target));
  }

  ObjectiveTerms t;
  t.lambda = lambda;
  t.l1 = l1;
  t.l2_task = task_loss;
  t.l2_align = align;
  t.total = ag::add(ag::add(l1, task_loss), ag::scale(align, lambda));
  return t;
}

ObjectiveTerms erm_objective(const Model& model, const Batch& clean, const ShiftedBatch* shifted,
                             const nn::ForwardContext& ctx) {
  Var ce = ag::cross_entropy(model.logits(clean, ctx), clean.labels);
  if (shifted && shifted->batch.size() > 0)
    ce = mean_of(ce, ag::cross_entropy(model.logits(shifted->batch, ctx), shifted->batch.labels));
  ObjectiveTerms t;
  t.l2_task = ce;
  t.total = ce;
  return t;
}

ShiftSampler::ShiftSampler(const TransformSet& set, int k, int max_subgraph_targets, int workers)
    : set_(&set), k_(k), max_subgraph_targets_(max_subgraph_targets), workers_(std::max(1, workers)) {
  if (set.size() < 1) throw Error("shift sampler needs a non-empty transform set");
}

ShiftedBatch ShiftSampler::graphs(std::span<const Graph* const> sources, std::uint64_t root) const {
  const int n = static_cast<int>(sources.size());
  std::vector<Graph> out(n);
  std::vector<MixtureLabel> labels(n);
  parallel_for(n, workers_, [&](int i) {
    Rng rng = make_rng(root, {static_cast<std::uint64_t>(i)});
    CompositeTransform c = sample_composite(*set_, k_, rng);
    labels[i] = mixture_label(c, set_->size());
    out[i] = apply(*sources[i], c, rng, {TaskKind::graph, {}});
  });
  ShiftedBatch s;
  s.batch = make_graph_batch(std::span<const Graph>(out));
  s.bits = mixture_bits(labels, s.batch);
  return s;
}

ShiftedBatch ShiftSampler::nodes(const Graph& g, Split split, std::uint64_t root) const {
  Rng rng = make_rng(root, {0});
  CompositeTransform c = sample_composite(*set_, k_, rng);
  ApplyOptions opts{TaskKind::node, {}};
  const bool subgraph = std::any_of(c.steps.begin(), c.steps.end(), [](const TransformStep& s) {
    return s.spec.kind == TransformKind::random_subgraph;
  });
  if (subgraph) {
    std::vector<int> pool;
    for (int v = 0; v < g.num_nodes(); ++v)
      if (g.node_split && (*g.node_split)[v] == split) pool.push_back(v);
    std::shuffle(pool.begin(), pool.end(), rng);
    if (static_cast<int>(pool.size()) > max_subgraph_targets_) pool.resize(max_subgraph_targets_);
    std::sort(pool.begin(), pool.end());
    opts.subgraph_targets = std::move(pool);
  }
  TransformResult tr = apply_tracked(g, c, rng, opts);
  ShiftedBatch s;
  s.batch = make_node_batch(tr.graph, split, tr.node_origin);
  s.bits = mixture_bits({mixture_label(c, set_->size())}, s.batch);
  if (s.batch.size() == 0) s.bits.resize(0, set_->size() + 1);
  return s;
}

ObjectiveTerms total_objective(const MoeModel& model, std::span<const Graph* const> sources,
                               const ShiftSampler& sampler, double lambda, std::uint64_t root) {
  auto clean = std::make_shared<Batch>();
  auto shifted = std::make_shared<ShiftedBatch>();
  if (model.config().task == TaskKind::graph) {
    *clean = make_graph_batch(sources);
    *shifted = sampler.graphs(sources, root);
  } else {
    if (sources.size() != 1) throw Error("node task objective takes exactly one graph");
    *clean = make_node_batch(*sources[0], Split::train);
    *shifted = sampler.nodes(*sources[0], Split::train, root);
  }
  ObjectiveTerms t = graphmetro_objective(model, *clean, *shifted, lambda, {});
  t.inputs.push_back(clean);
  t.inputs.push_back(std::shared_ptr<const Batch>(shifted, &shifted->batch));
  return t;
}

TrainResult train(Model& model, const DatasetSplit& data, const TrainConfig& cfg, const TransformSet& set,
                  const std::function<void(const LossBreakdown&)>& on_step) {
  if (auto errs = cfg.validate(set.size()); !errs.empty()) throw Error("invalid training config: " + errs.front());
  if (data.task != model.config().task) throw Error("dataset task does not match the model");
  if (data.size(Split::train) == 0) throw Error("training partition is empty");
  if (data.size(Split::val) == 0) throw Error("validation partition is empty");
  const MoeModel* moe = dynamic_cast<const MoeModel*>(&model);
  if (cfg.method == Method::graphmetro && !moe) throw Error("graphmetro training needs a mixture model");
  if (cfg.method == Method::graphmetro && model.config().num_components != set.size())
    throw Error("model has " + std::to_string(model.config().num_components) + " components but the set has " +
                std::to_string(set.size()));

  const bool shifts = cfg.method != Method::erm && set.size() > 0;
  std::optional<ShiftSampler> sampler;
  if (shifts) sampler.emplace(set, cfg.k, cfg.max_subgraph_targets, cfg.workers);

  nn::AdamOptions adam{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay, {}};
  if (cfg.gate_learning_rate) adam.prefix_learning_rates.emplace_back("gate.", *cfg.gate_learning_rate);
  nn::Adam opt(model.parameters(), adam);
  const std::vector<Batch> train_eval = partition_batches(data, Split::train, 64);
  const std::vector<Batch> val_eval = partition_batches(data, Split::val, 64);

  std::vector<const Graph*> train_graphs;
  for (const Graph& g : data.graphs(Split::train)) train_graphs.push_back(&g);
  std::optional<Batch> node_clean;
  if (data.task == TaskKind::node) node_clean = make_node_batch(data.graph, Split::train);

  TrainResult result;
  std::vector<Matrix> best;
  int bad_steps = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto ep = static_cast<std::uint64_t>(epoch);
    std::vector<int> order(train_graphs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, {2, ep});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const int steps = data.task == TaskKind::node
                          ? 1
                          : static_cast<int>((order.size() + cfg.batch_size - 1) / cfg.batch_size);
    LossBreakdown sum;
    int finite_steps = 0;
    for (int step = 0; step < steps; ++step) {
      const auto st = static_cast<std::uint64_t>(step);
      const std::uint64_t shift_root = derive_seed(cfg.seed, {3, ep, st});
      Rng dropout_rng = make_rng(cfg.seed, {4, ep, st});
      nn::ForwardContext ctx{true, &dropout_rng};

      Batch clean_storage;
      const Batch* clean = nullptr;
      ShiftedBatch shifted;
      if (data.task == TaskKind::node) {
        clean = &*node_clean;
        if (shifts) shifted = sampler->nodes(data.graph, Split::train, shift_root);
      } else {
        std::vector<const Graph*> members;
        const std::size_t lo = static_cast<std::size_t>(step) * cfg.batch_size;
        const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
        for (std::size_t i = lo; i < hi; ++i) members.push_back(train_graphs[order[i]]);
        clean_storage = make_graph_batch(std::span<const Graph* const>(members));
        clean = &clean_storage;
        if (shifts) shifted = sampler->graphs(members, shift_root);
      }

      ObjectiveTerms terms = cfg.method == Method::graphmetro
                                 ? graphmetro_objective(*moe, *clean, shifted, cfg.lambda, ctx)
                                 : erm_objective(model, *clean, shifts ? &shifted : nullptr, ctx);
      const LossBreakdown lb = terms.values();
      if (on_step) on_step(lb);
      model.parameters().zero_grad();
      if (!std::isfinite(lb.total)) {
        if (++bad_steps >= cfg.divergence_patience)
          throw TrainingError("training diverged: non-finite loss for " + std::to_string(bad_steps) +
                              " consecutive steps (epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + ")");
        continue;
      }
      bad_steps = 0;
      ag::backward(terms.total);
      opt.step();
      sum.l1_gating += lb.l1_gating;
      sum.l2_task += lb.l2_task;
      sum.l2_align += lb.l2_align;
      sum.total += lb.total;
      ++finite_steps;
    }
    model.parameters().zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    if (finite_steps > 0) {
      const double d = finite_steps;
      rec.loss = {sum.l1_gating / d, sum.l2_task / d, sum.l2_align / d, sum.total / d};
    }
    {
      Predictions p = predict(model, train_eval);
      rec.train_accuracy = accuracy(p.logits, p.labels);
      Predictions q = predict(model, val_eval);
      rec.val_accuracy = accuracy(q.logits, q.labels);
    }
    result.history.push_back(rec);
    if (rec.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = epoch;
      best = model.parameters().snapshot();
    }
  }
  if (!best.empty()) model.parameters().restore(best);
  return result;
}

}  // namespace gmetro
