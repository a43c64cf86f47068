#include "gmetro/moe.hpp"

namespace gmetro {

using ag::Var;

std::string_view to_string(ExpertMode m) {
  return m == ExpertMode::independent_encoders ? "independent_encoders" : "shared_encoder_with_heads";
}

std::string_view to_string(AggregationMode m) {
  return m == AggregationMode::softmax_sum ? "softmax_sum" : "argmax_select";
}

ExpertMode parse_expert_mode(std::string_view s) {
  if (s == "independent_encoders") return ExpertMode::independent_encoders;
  if (s == "shared_encoder_with_heads") return ExpertMode::shared_encoder_with_heads;
  throw Error("unknown expert mode '" + std::string(s) + "'");
}

AggregationMode parse_aggregation_mode(std::string_view s) {
  if (s == "softmax_sum") return AggregationMode::softmax_sum;
  if (s == "argmax_select") return AggregationMode::argmax_select;
  throw Error("unknown aggregation mode '" + std::string(s) + "'");
}

std::vector<std::string> ModelConfig::validate() const {
  std::vector<std::string> out;
  if (num_components < 1) out.emplace_back("model: K must be >= 1");
  if (encoder.hidden_dim < 1) out.emplace_back("model: hidden_dim must be >= 1");
  if (encoder.layers < 1) out.emplace_back("model: encoder needs >= 1 layer");
  if (encoder.dropout < 0.0 || encoder.dropout >= 1.0) out.emplace_back("model: dropout must lie in [0,1)");
  if (gate_encoder && gate_encoder->layers < 1) out.emplace_back("model: gate encoder needs >= 1 layer");
  if (num_classes < 2) out.emplace_back("model: need at least 2 classes");
  if (in_dim < 1) out.emplace_back("model: input feature dimension must be >= 1");
  return out;
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j{{"task_kind", std::string(to_string(c.task))},
                   {"in_dim", c.in_dim},
                   {"num_classes", c.num_classes},
                   {"num_components", c.num_components},
                   {"encoder", nn::to_json(c.encoder)},
                   {"expert_mode", std::string(to_string(c.expert_mode))},
                   {"aggregation", std::string(to_string(c.aggregation))}};
  if (c.gate_encoder) j["gate_encoder"] = nn::to_json(*c.gate_encoder);
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.task = parse_task_kind(j.at("task_kind").get<std::string>());
  c.in_dim = j.at("in_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.num_components = j.at("num_components").get<int>();
  c.encoder = nn::encoder_arch_from_json(j.at("encoder"));
  if (j.contains("gate_encoder") && !j["gate_encoder"].is_null())
    c.gate_encoder = nn::encoder_arch_from_json(j["gate_encoder"], c.encoder);
  c.expert_mode = parse_expert_mode(j.at("expert_mode").get<std::string>());
  c.aggregation = parse_aggregation_mode(j.at("aggregation").get<std::string>());
  return c;
}

namespace {

Var readout_impl(const Var& node_reps, const Batch& b, PoolMode pool) {
  if (b.task == TaskKind::node) return ag::gather_rows(node_reps, b.rows);
  return ag::segment_pool(node_reps, b.graph.graph_of_node, b.graph.num_graphs, pool);
}

void check_batch(const ModelConfig& cfg, const Batch& b) {
  if (b.task != cfg.task) throw Error("batch task kind does not match the model");
  if (b.graph.x.cols() != cfg.in_dim) throw Error("feature dimension mismatch: model expects " +
                                                  std::to_string(cfg.in_dim) + ", batch has " +
                                                  std::to_string(b.graph.x.cols()));
}

}  // namespace

GnnClassifier::GnnClassifier(ModelConfig cfg, std::uint64_t init_seed) : Model(std::move(cfg)) {
  auto bad = config_.validate();
  if (!bad.empty()) throw Error(bad.front());
  Rng rng = make_rng(init_seed, {0x1417});
  const int v = config_.hidden_dim();
  encoder_ = nn::Encoder(config_.in_dim, config_.encoder, rng);
  classifier_ = nn::Mlp({v, v, config_.num_classes}, config_.encoder.activation, rng);
  encoder_.register_parameters(params_, "encoder.");
  classifier_.register_parameters(params_, "classifier.");
}

Var GnnClassifier::logits(const Batch& b, const nn::ForwardContext& ctx) const {
  check_batch(config_, b);
  Var reps = readout_impl(encoder_.forward(b.graph, ctx), b, config_.encoder.pool);
  return classifier_.forward(reps);
}

Matrix ExpertOutputs::instance(Eigen::Index r) const {
  Matrix z(static_cast<Eigen::Index>(experts.size()), experts.empty() ? 0 : experts[0].cols());
  for (std::size_t i = 0; i < experts.size(); ++i) z.row(static_cast<Eigen::Index>(i)) = experts[i].row(r);
  return z;
}

Matrix aggregate(const GatingOutput& w, const ExpertOutputs& z, AggregationMode mode) {
  if (static_cast<Eigen::Index>(z.experts.size()) != w.scores.cols()) throw Error("expert count mismatch");
  std::vector<const Matrix*> ptrs;
  for (const Matrix& m : z.experts) {
    if (m.rows() != w.scores.rows()) throw Error("expert row count mismatch");
    ptrs.push_back(&m);
  }
  if (mode == AggregationMode::softmax_sum) return ag::mix_softmax_value(w.scores, ptrs);
  const auto pick = ag::argmax_rows(w.scores);
  Matrix h(w.scores.rows(), z.experts.empty() ? 0 : z.experts[0].cols());
  for (Eigen::Index r = 0; r < h.rows(); ++r) h.row(r) = z.experts[pick[r]].row(r);
  return h;
}

MoeModel::MoeModel(ModelConfig cfg, std::uint64_t init_seed) : Model(std::move(cfg)) {
  auto bad = config_.validate();
  if (!bad.empty()) throw Error(bad.front());
  Rng rng = make_rng(init_seed, {0x30e});
  const int v = config_.hidden_dim();
  const int k1 = config_.num_components + 1;
  const auto& garch = config_.gate_arch();
  gate_encoder_ = nn::Encoder(config_.in_dim, garch, rng);
  gate_head_ = nn::Linear(garch.hidden_dim, k1, rng);
  gate_encoder_.register_parameters(params_, "gate.encoder.");
  gate_head_.register_parameters(params_, "gate.head.");
  if (config_.expert_mode == ExpertMode::independent_encoders) {
    for (int i = 0; i < k1; ++i) {
      expert_encoders_.emplace_back(config_.in_dim, config_.encoder, rng);
      expert_encoders_.back().register_parameters(params_, "experts." + std::to_string(i) + ".encoder.");
    }
  } else {
    expert_encoders_.emplace_back(config_.in_dim, config_.encoder, rng);
    expert_encoders_.back().register_parameters(params_, "experts.shared.encoder.");
    for (int i = 0; i < k1; ++i) {
      expert_heads_.emplace_back(std::vector<int>{v, v, v}, config_.encoder.activation, rng);
      expert_heads_.back().register_parameters(params_, "experts." + std::to_string(i) + ".head.");
    }
  }
  classifier_ = nn::Mlp({v, v, config_.num_classes}, config_.encoder.activation, rng);
  classifier_.register_parameters(params_, "classifier.");
}

Var MoeModel::readout(const Var& node_reps, const Batch& b, PoolMode pool) const {
  return readout_impl(node_reps, b, pool);
}

Var MoeModel::gate_scores(const Batch& b, const nn::ForwardContext& ctx) const {
  check_batch(config_, b);
  Var reps = readout(gate_encoder_.forward(b.graph, ctx), b, config_.gate_arch().pool);
  return gate_head_.forward(reps);
}

std::vector<Var> MoeModel::expert_representations(const Batch& b, const nn::ForwardContext& ctx) const {
  check_batch(config_, b);
  std::vector<Var> out;
  const PoolMode pool = config_.encoder.pool;
  if (config_.expert_mode == ExpertMode::independent_encoders) {
    for (const auto& enc : expert_encoders_) out.push_back(readout(enc.forward(b.graph, ctx), b, pool));
  } else {
    Var shared = readout(expert_encoders_.front().forward(b.graph, ctx), b, pool);
    for (const auto& head : expert_heads_) out.push_back(head.forward(shared));
  }
  return out;
}

Var MoeModel::aggregate(const Var& scores, std::span<const Var> experts) const {
  if (config_.aggregation == AggregationMode::softmax_sum) return ag::softmax_mix(scores, experts);
  return ag::select_mix(scores, experts);
}

Var MoeModel::classify(const Var& h) const { return classifier_.forward(h); }

ForwardPass MoeModel::forward(const Batch& b, const nn::ForwardContext& ctx) const {
  ForwardPass f;
  f.scores = gate_scores(b, ctx);
  f.experts = expert_representations(b, ctx);
  f.h = aggregate(ag::detach(f.scores), f.experts);
  f.logits = classify(f.h);
  return f;
}

Var MoeModel::logits(const Batch& b, const nn::ForwardContext& ctx) const { return forward(b, ctx).logits; }

GatingOutput MoeModel::gate_forward(const Batch& b) const {
  ag::NoGradGuard guard;
  return {gate_scores(b, {}).value()};
}

ExpertOutputs MoeModel::experts_forward(const Batch& b) const {
  ag::NoGradGuard guard;
  ExpertOutputs out;
  for (const Var& z : expert_representations(b, {})) out.experts.push_back(z.value());
  return out;
}

Matrix MoeModel::classify(const Matrix& h) const {
  ag::NoGradGuard guard;
  return classify(ag::constant(h)).value();
}

std::vector<nn::NamedParameter> MoeModel::parameters_with_prefix(std::string_view prefix) const {
  std::vector<nn::NamedParameter> out;
  for (const auto& p : params_.items())
    if (std::string_view(p.name).substr(0, prefix.size()) == prefix) out.push_back(p);
  return out;
}

std::size_t MoeModel::gate_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters_with_prefix("gate.")) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

std::size_t MoeModel::expert_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters_with_prefix("experts.")) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

void MoeModel::tie_experts_to_reference() {
  if (config_.expert_mode != ExpertMode::independent_encoders)
    throw Error("tie_experts_to_reference needs independent expert encoders");
  const auto ref = parameters_with_prefix("experts.0.");
  for (int i = 1; i <= config_.num_components; ++i) {
    auto other = parameters_with_prefix("experts." + std::to_string(i) + ".");
    for (std::size_t p = 0; p < ref.size(); ++p) other[p].var.mutable_value() = ref[p].var.value();
  }
}

std::unique_ptr<Model> make_model(std::string_view kind, const ModelConfig& cfg, std::uint64_t init_seed) {
  if (kind == "moe") return std::make_unique<MoeModel>(cfg, init_seed);
  if (kind == "gnn") return std::make_unique<GnnClassifier>(cfg, init_seed);
  throw Error("unknown model kind '" + std::string(kind) + "'");
}

}  // namespace gmetro
