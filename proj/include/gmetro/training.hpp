#pragma once

#include "gmetro/moe.hpp"
#include "gmetro/transforms.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace gmetro {

enum class Method { graphmetro, erm, erm_aug };
std::string_view to_string(Method m);
Method parse_method(std::string_view s);

struct TrainConfig {
  Method method = Method::graphmetro;
  double learning_rate = 1e-3;
  std::optional<double> gate_learning_rate;  // defaults to learning_rate
  int epochs = 100;
  int batch_size = 32;          // graph task; node task trains on the full graph
  double lambda = 1.0;
  int k = 2;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  int max_subgraph_targets = 64;  // node task: ego networks built per step
  int divergence_patience = 3;
  int workers = 1;

  std::vector<std::string> validate(int num_components) const;
};

struct LossBreakdown {
  double l1_gating = 0.0;
  double l2_task = 0.0;
  double l2_align = 0.0;
  double total = 0.0;
  bool operator==(const LossBreakdown&) const = default;
};

/// Mean element-wise binary cross entropy of sigmoid(w) against the bits.
double gating_loss(const Matrix& w, const Matrix& bits);
/// (1/n) * ||a - b||_F, n = number of rows.
double alignment_distance(const Matrix& a, const Matrix& b);

/// One row of mixture bits per scored instance of `b`.
Matrix mixture_bits(const std::vector<MixtureLabel>& per_instance, const Batch& b);

/// A transformed training instance paired with its mixture bits.
struct ShiftedBatch {
  Batch batch;
  Matrix bits;  // rows match batch.size()
};

struct ObjectiveTerms {
  ag::Var l1;
  ag::Var l2_task;
  ag::Var l2_align;
  ag::Var total;
  double lambda = 1.0;
  // Batches the graph was built over; kept alive until backward has run.
  std::vector<std::shared_ptr<const Batch>> inputs;
  LossBreakdown values() const;
};

/// Distance between two stacks of representations for the task kind:
/// node task uses one (1/n)||.||_F over all rows, graph task averages the
/// per-graph (n = 1) distance.
ag::Var representation_distance(TaskKind task, const ag::Var& a, const ag::Var& b);

/// The GraphMETRO objective over a clean batch and its shifted counterpart:
/// gate BCE on both (clean rows carry the identity bit), task CE on the
/// aggregated representation, and alignment of that representation with the
/// detached reference expert output on the clean source (expert 0 is also a
/// constant inside that aggregation, so no alignment gradient reaches it). Each term is the
/// mean of its clean and shifted parts; total = L1 + L2_task + lambda * L2_align.
ObjectiveTerms graphmetro_objective(const MoeModel& model, const Batch& clean, const ShiftedBatch& shifted,
                                    double lambda, const nn::ForwardContext& ctx);

/// Cross entropy on the clean batch, averaged with the shifted batch when given.
ObjectiveTerms erm_objective(const Model& model, const Batch& clean, const ShiftedBatch* shifted,
                             const nn::ForwardContext& ctx);

/// Draws composites and builds the shifted counterpart of a batch of sources.
class ShiftSampler {
 public:
  ShiftSampler(const TransformSet& set, int k, int max_subgraph_targets, int workers);
  /// Graph task: one composite per source graph, seeded by (root, i).
  ShiftedBatch graphs(std::span<const Graph* const> sources, std::uint64_t root) const;
  /// Node task: one composite for the whole graph, scored on `split` nodes.
  ShiftedBatch nodes(const Graph& g, Split split, std::uint64_t root) const;
  const TransformSet& set() const { return *set_; }

 private:
  const TransformSet* set_;
  int k_;
  int max_subgraph_targets_;
  int workers_;
};

/// Samples the shift, builds both batches and evaluates the objective.
ObjectiveTerms total_objective(const MoeModel& model, std::span<const Graph* const> sources,
                               const ShiftSampler& sampler, double lambda, std::uint64_t root);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_accuracy = -1.0;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Trains in place and leaves the parameters of the epoch with the best clean
/// validation accuracy (earliest on ties) in the model. `on_step`, when set,
/// sees every step's loss breakdown in order.
TrainResult train(Model& model, const DatasetSplit& data, const TrainConfig& cfg, const TransformSet& set,
                  const std::function<void(const LossBreakdown&)>& on_step = {});

}  // namespace gmetro
