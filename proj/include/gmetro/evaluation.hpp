#pragma once

#include "gmetro/moe.hpp"
#include "gmetro/transforms.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace gmetro {

enum class Metric { accuracy, roc_auc };
std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);

/// Fraction of rows whose argmax matches the label.
double accuracy(const Matrix& logits, std::span<const int> labels);
/// Binary ROC-AUC from the positive-class margin (logit 1 - logit 0, or the
/// single column); tied scores count one half. Throws if a class is absent.
double roc_auc(const Matrix& logits, std::span<const int> labels);
double score(Metric m, const Matrix& logits, std::span<const int> labels);

/// Clean batches of one partition: chunks of `batch_size` graphs, or a single
/// full-graph batch scoring the partition's nodes.
std::vector<Batch> partition_batches(const DatasetSplit& data, Split which, int batch_size);

/// Stacked logits and labels of a sequence of batches, gradients off.
struct Predictions {
  Matrix logits;
  std::vector<int> labels;
};
Predictions predict(const Model& model, std::span<const Batch> batches);

double evaluate_split(const Model& model, const DatasetSplit& data, Split which, Metric m,
                      int batch_size = 64);

struct EnvResult {
  int env_id = 0;
  std::string env_name;
  std::uint64_t seed = 0;
  Metric metric = Metric::accuracy;
  double value = 0.0;
  int num_instances = 0;
};

struct EvalOptions {
  Metric metric = Metric::accuracy;
  int batch_size = 64;
  int workers = 1;
};

/// Test-partition score under each environment. Instance i of environment e
/// under seed s is transformed with a stream derived from (s, e, i), so
/// results do not depend on batch size or worker count. Results are ordered
/// by seed, then environment.
std::vector<EnvResult> evaluate_environments(const Model& model, const DatasetSplit& data,
                                             const std::vector<Environment>& envs,
                                             std::span<const std::uint64_t> seeds, const EvalOptions& opts = {});

/// Test-partition instances after one environment's transform, batched.
std::vector<Batch> environment_batches(const DatasetSplit& data, const Environment& env, std::uint64_t seed,
                                       int batch_size, int workers = 1);

enum class InvarianceNorm { row_min_max, global_max };
std::string_view to_string(InvarianceNorm n);
InvarianceNorm parse_invariance_norm(std::string_view s);

struct InvarianceMatrix {
  Matrix raw;         // K x K, raw(i-1, j-1) = E d(xi_i(tau_j(G)), xi_0(G))
  Matrix normalized;
  InvarianceNorm norm = InvarianceNorm::row_min_max;
  std::vector<std::string> labels;  // kind names, index order
};

struct InvarianceOptions {
  int trials = 100;
  int max_instances = 64;  // test graphs (graph task) or test nodes scored
  InvarianceNorm norm = InvarianceNorm::row_min_max;
  int workers = 1;
};

Matrix normalize_invariance(const Matrix& raw, InvarianceNorm norm);

InvarianceMatrix invariance_matrix(const MoeModel& model, const DatasetSplit& data, const TransformSet& set,
                                   std::uint64_t seed, const InvarianceOptions& opts = {});

/// Mean gate probabilities sigmoid(w) over a target collection.
struct ShiftReport {
  std::vector<double> mean_probabilities;  // K+1
  std::vector<std::string> labels;         // index map
  int num_instances = 0;
  std::optional<double> gating_bit_accuracy;
  std::optional<double> gating_argmax_accuracy;
};

ShiftReport discover_shifts(const MoeModel& model, std::span<const Batch> batches,
                            const std::vector<std::string>& labels);
nlohmann::json to_json(const ShiftReport& r);

/// Gate read-out on test instances with one planted transform each.
struct GatingProbe {
  double bit_accuracy = 0.0;     // element-wise over all K+1 bits
  double argmax_accuracy = 0.0;  // argmax of the scores equals the planted component
  std::vector<double> per_component_argmax;  // index 0 = untransformed instances
  int num_probes = 0;
};

GatingProbe probe_gating(const MoeModel& model, const DatasetSplit& data, const TransformSet& set,
                         std::uint64_t seed, int max_instances = 64);

}  // namespace gmetro
