#pragma once

#include "gmetro/batch.hpp"
#include "gmetro/nn.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace gmetro {

enum class ExpertMode { independent_encoders, shared_encoder_with_heads };
enum class AggregationMode { softmax_sum, argmax_select };

std::string_view to_string(ExpertMode m);
std::string_view to_string(AggregationMode m);
ExpertMode parse_expert_mode(std::string_view s);
AggregationMode parse_aggregation_mode(std::string_view s);

struct ModelConfig {
  TaskKind task = TaskKind::graph;
  int in_dim = 0;
  int num_classes = 2;
  int num_components = 5;                    // K
  nn::EncoderArch encoder;                   // expert (and ERM) encoder; hidden_dim is v
  std::optional<nn::EncoderArch> gate_encoder;  // defaults to `encoder`
  ExpertMode expert_mode = ExpertMode::independent_encoders;
  AggregationMode aggregation = AggregationMode::softmax_sum;

  int hidden_dim() const { return encoder.hidden_dim; }
  const nn::EncoderArch& gate_arch() const { return gate_encoder ? *gate_encoder : encoder; }
  std::vector<std::string> validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Common surface used by training and evaluation.
class Model {
 public:
  virtual ~Model() = default;
  virtual std::string_view kind() const = 0;
  /// Class logits, one row per scored instance of the batch.
  virtual ag::Var logits(const Batch& b, const nn::ForwardContext& ctx) const = 0;

  const ModelConfig& config() const { return config_; }
  nn::ParameterList& parameters() { return params_; }
  const nn::ParameterList& parameters() const { return params_; }

 protected:
  explicit Model(ModelConfig cfg) : config_(std::move(cfg)) {}
  ModelConfig config_;
  nn::ParameterList params_;
};

/// Single encoder + classifier; the ERM and ERM-Aug baselines.
class GnnClassifier : public Model {
 public:
  GnnClassifier(ModelConfig cfg, std::uint64_t init_seed);
  std::string_view kind() const override { return "gnn"; }
  ag::Var logits(const Batch& b, const nn::ForwardContext& ctx) const override;

 private:
  nn::Encoder encoder_;
  nn::Mlp classifier_;
};

/// Pre-sigmoid / pre-softmax component scores, one row of K+1 per instance.
struct GatingOutput {
  Matrix scores;
};

/// experts[i] holds z_i for every instance (rows), so instance r's (K+1) x v
/// block is {experts[i].row(r)}.
struct ExpertOutputs {
  std::vector<Matrix> experts;
  Matrix instance(Eigen::Index r) const;
};

struct ForwardPass {
  ag::Var logits;
  ag::Var scores;               // gate scores, attached to the gate parameters
  std::vector<ag::Var> experts;  // z_0 .. z_K
  ag::Var h;                     // aggregated representation
};

/// Aggregation of expert rows by gate scores (plain values).
Matrix aggregate(const GatingOutput& w, const ExpertOutputs& z, AggregationMode mode);

/// Gate + K+1 experts (expert 0 is the reference) + classifier.
class MoeModel : public Model {
 public:
  MoeModel(ModelConfig cfg, std::uint64_t init_seed);
  std::string_view kind() const override { return "moe"; }
  ag::Var logits(const Batch& b, const nn::ForwardContext& ctx) const override;

  GatingOutput gate_forward(const Batch& b) const;
  ExpertOutputs experts_forward(const Batch& b) const;
  Matrix classify(const Matrix& h) const;

  /// Full pass. The aggregation consumes a detached copy of the gate scores,
  /// so task and alignment losses never reach the gate parameters.
  ForwardPass forward(const Batch& b, const nn::ForwardContext& ctx) const;

  ag::Var gate_scores(const Batch& b, const nn::ForwardContext& ctx) const;
  std::vector<ag::Var> expert_representations(const Batch& b, const nn::ForwardContext& ctx) const;
  ag::Var aggregate(const ag::Var& scores, std::span<const ag::Var> experts) const;
  ag::Var classify(const ag::Var& h) const;

  /// Parameters whose names start with `prefix` ("gate.", "experts.0.", ...).
  std::vector<nn::NamedParameter> parameters_with_prefix(std::string_view prefix) const;
  std::size_t gate_parameter_count() const;
  std::size_t expert_parameter_count() const;

  /// Copies expert 0 into every other expert (independent mode only).
  void tie_experts_to_reference();

 private:
  ag::Var readout(const ag::Var& node_reps, const Batch& b, PoolMode pool) const;

  nn::Encoder gate_encoder_;
  nn::Linear gate_head_;
  std::vector<nn::Encoder> expert_encoders_;  // K+1 or 1 (shared)
  std::vector<nn::Mlp> expert_heads_;         // shared mode only
  nn::Mlp classifier_;
};

/// Builds the model variant named by `kind` ("moe" or "gnn").
std::unique_ptr<Model> make_model(std::string_view kind, const ModelConfig& cfg, std::uint64_t init_seed);

}  // namespace gmetro
