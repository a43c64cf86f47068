#include "gmetro/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace gmetro {

namespace {

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "; " : "") + xs[i];
  return out;
}

nlohmann::json base_preset() {
  return {
      {"name", "experiment"},
      {"task", "node"},
      {"dataset", {{"path", "data/dataset"}, {"synthetic", nullptr}}},
      {"transforms",
       {{"kinds", {"random_subgraph", "drop_node", "drop_edge", "add_edge", "noisy_node_feat"}}, {"k", 2}}},
      {"model",
       {{"encoder", {{"conv", "gat"}, {"layers", 2}, {"hidden_dim", 64}, {"activation", "prelu"}, {"dropout", 0.0},
                     {"pool", "add"}}},
        {"gate_encoder", nullptr},
        {"expert_mode", "independent_encoders"},
        {"aggregation", "softmax_sum"}}},
      {"train",
       {{"learning_rate", 1e-3},
        {"gate_learning_rate", nullptr},
        {"epochs", 100},
        {"batch_size", 32},
        {"lambda", 1.0},
        {"weight_decay", 0.0},
        {"max_subgraph_targets", 64},
        {"divergence_patience", 3}}},
      {"methods", {"graphmetro", "erm"}},
      {"baseline", "erm"},
      {"seeds", {0, 1, 2, 3, 4}},
      {"eval",
       {{"metric", "accuracy"},
        {"batch_size", 64},
        {"eval_seed", 0},
        {"invariance_trials", 100},
        {"invariance_max_instances", 64},
        {"invariance_norm", "row_min_max"},
        {"probe_instances", 64}}},
      {"discover", {{"target_dataset", nullptr}, {"planted", nlohmann::json::array()}}},
      {"output_dir", "runs/experiment"},
  };
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error("invalid config: " + join(problems)), problems_(std::move(problems)) {}

std::vector<std::string> preset_names() { return {"synthetic-node", "synthetic-graph"}; }

nlohmann::json preset(std::string_view name) {
  nlohmann::json p = base_preset();
  if (name == "synthetic-node") {
    p.merge_patch({
        {"name", "synthetic-node"},
        {"task", "node"},
        {"dataset",
         {{"path", "data/synthetic-node"},
          {"synthetic", {{"task", "node"}, {"generator", "sbm"}, {"num_nodes", 1000}, {"communities", 4},
                         {"feature_dim", 16}, {"p_in", 0.02}, {"p_out", 0.004}, {"feature_signal", 0.6},
                         {"feature_noise", 1.0}, {"label_rule", "community"}, {"seed", 7}}}}},
        {"model", {{"encoder", {{"conv", "gat"}, {"layers", 3}, {"hidden_dim", 64}}}}},
        {"train", {{"learning_rate", 1e-3}, {"epochs", 100}}},
        {"output_dir", "runs/synthetic-node"},
    });
    return p;
  }
  if (name == "synthetic-graph") {
    p.merge_patch({
        {"name", "synthetic-graph"},
        {"task", "graph"},
        {"dataset",
         {{"path", "data/synthetic-graph"},
          {"synthetic", {{"task", "graph"}, {"generator", "sbm"}, {"num_graphs", 500}, {"min_nodes", 12},
                         {"max_nodes", 24}, {"communities", 3}, {"feature_dim", 8}, {"p_in", 0.7},
                         {"p_out", 0.05}, {"feature_signal", 0.0}, {"feature_noise", 1.0},
                         {"label_rule", "community"}, {"seed", 7}}}}},
        {"model", {{"encoder", {{"conv", "gat"}, {"layers", 2}, {"hidden_dim", 128}, {"pool", "add"}}}}},
        {"train", {{"learning_rate", 1e-3}, {"epochs", 100}, {"batch_size", 32}}},
        {"output_dir", "runs/synthetic-graph"},
    });
    return p;
  }
  throw ConfigError({"unknown preset: " + std::string(name)});
}

ModelConfig ExperimentConfig::model_config(int in_dim, int num_classes) const {
  ModelConfig m;
  m.task = task;
  m.in_dim = in_dim;
  m.num_classes = num_classes;
  m.num_components = transforms.size();
  m.encoder = encoder;
  m.gate_encoder = gate_encoder;
  m.expert_mode = expert_mode;
  m.aggregation = aggregation;
  return m;
}

std::string config_hash(const nlohmann::json& resolved) {
  nlohmann::json j = resolved;
  if (j.is_object()) {
    j.erase("output_dir");
    j.erase("seeds");
  }
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(const nlohmann::json& document, const std::filesystem::path& base_dir) {
  std::vector<std::string> errs;
  if (!document.is_object()) throw ConfigError({"config must be a JSON object"});

  nlohmann::json doc = base_preset();
  if (document.contains("preset")) {
    try {
      doc = preset(document.at("preset").get<std::string>());
    } catch (const std::exception& e) {
      errs.push_back(e.what());
    }
  }
  const std::set<std::string> known{"preset", "name",    "task",     "dataset", "transforms", "model", "train",
                                    "methods", "baseline", "seeds", "eval",    "discover",   "output_dir"};
  for (const auto& [key, value] : document.items())
    if (!known.count(key)) errs.push_back("unknown key: " + key);
  nlohmann::json user = document;
  user.erase("preset");
  doc.merge_patch(user);

  ExperimentConfig c;
  c.resolved = doc;
  auto section = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errs.push_back(std::string(what) + ": " + e.what());
    }
  };

  section("name", [&] { c.name = get_or<std::string>(doc, "name", "experiment"); });
  section("task", [&] { c.task = parse_task_kind(doc.at("task").get<std::string>()); });
  section("dataset", [&] {
    const auto& d = doc.at("dataset");
    c.dataset.path = resolve(base_dir, d.at("path").get<std::string>());
    if (d.contains("synthetic") && !d.at("synthetic").is_null()) {
      SyntheticSpec s = synthetic_spec_from_json(d.at("synthetic"));
      for (const auto& e : s.validate()) errs.push_back("dataset.synthetic: " + e);
      if (s.task != c.task) errs.push_back("dataset.synthetic: task differs from the experiment task");
      c.dataset.synthetic = s;
    }
  });
  section("transforms", [&] {
    const auto& t = doc.at("transforms");
    c.transforms = TransformSet::from_json(t.at("kinds"));
    c.k = get_or<int>(t, "k", 2);
    if (c.transforms.size() > 0 && (c.k < 1 || c.k > c.transforms.size()))
      errs.push_back("transforms.k must be in [1, " + std::to_string(c.transforms.size()) + "]");
  });
  section("model", [&] {
    const auto& m = doc.at("model");
    c.encoder = nn::encoder_arch_from_json(m.at("encoder"));
    if (m.contains("gate_encoder") && !m.at("gate_encoder").is_null())
      c.gate_encoder = nn::encoder_arch_from_json(m.at("gate_encoder"), c.encoder);
    c.expert_mode = parse_expert_mode(get_or<std::string>(m, "expert_mode", "independent_encoders"));
    c.aggregation = parse_aggregation_mode(get_or<std::string>(m, "aggregation", "softmax_sum"));
    ModelConfig probe = c.model_config(1, 2);
    probe.num_components = std::max(1, c.transforms.size());
    for (const auto& e : probe.validate()) errs.push_back("model: " + e);
  });
  section("train", [&] {
    const auto& t = doc.at("train");
    TrainConfig& tc = c.train;
    tc.learning_rate = get_or<double>(t, "learning_rate", tc.learning_rate);
    if (t.contains("gate_learning_rate") && !t["gate_learning_rate"].is_null())
      tc.gate_learning_rate = t["gate_learning_rate"].get<double>();
    tc.epochs = get_or<int>(t, "epochs", tc.epochs);
    tc.batch_size = get_or<int>(t, "batch_size", tc.batch_size);
    tc.lambda = get_or<double>(t, "lambda", tc.lambda);
    tc.weight_decay = get_or<double>(t, "weight_decay", tc.weight_decay);
    tc.max_subgraph_targets = get_or<int>(t, "max_subgraph_targets", tc.max_subgraph_targets);
    tc.divergence_patience = get_or<int>(t, "divergence_patience", tc.divergence_patience);
    tc.k = c.k;
    tc.method = Method::erm;
    for (const auto& e : tc.validate(c.transforms.size())) errs.push_back("train: " + e);
  });
  section("methods", [&] {
    for (const auto& m : doc.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    if (c.methods.empty()) errs.push_back("methods: at least one method is required");
    c.baseline = parse_method(get_or<std::string>(doc, "baseline", "erm"));
    for (Method m : c.methods)
      if (m == Method::graphmetro && c.transforms.size() == 0)
        errs.push_back("methods: graphmetro needs a non-empty transform set");
  });
  section("seeds", [&] {
    for (const auto& s : doc.at("seeds")) c.seeds.push_back(s.get<std::uint64_t>());
    if (c.seeds.empty()) errs.push_back("seeds: at least one seed is required");
  });
  section("eval", [&] {
    const auto& e = doc.at("eval");
    EvalSettings& ev = c.eval;
    ev.metric = parse_metric(get_or<std::string>(e, "metric", "accuracy"));
    ev.batch_size = get_or<int>(e, "batch_size", ev.batch_size);
    ev.eval_seed = get_or<std::uint64_t>(e, "eval_seed", ev.eval_seed);
    ev.invariance_trials = get_or<int>(e, "invariance_trials", ev.invariance_trials);
    ev.invariance_max_instances = get_or<int>(e, "invariance_max_instances", ev.invariance_max_instances);
    ev.invariance_norm = parse_invariance_norm(get_or<std::string>(e, "invariance_norm", "row_min_max"));
    ev.probe_instances = get_or<int>(e, "probe_instances", ev.probe_instances);
    if (ev.batch_size < 1) errs.push_back("eval.batch_size must be >= 1");
    if (ev.invariance_trials < 1) errs.push_back("eval.invariance_trials must be >= 1");
    if (ev.invariance_max_instances < 1) errs.push_back("eval.invariance_max_instances must be >= 1");
    if (ev.probe_instances < 1) errs.push_back("eval.probe_instances must be >= 1");
  });
  section("discover", [&] {
    const auto& d = doc.at("discover");
    if (d.contains("target_dataset") && !d.at("target_dataset").is_null())
      c.discover.target_dataset = resolve(base_dir, d.at("target_dataset").get<std::string>());
    if (d.contains("planted"))
      for (const auto& k : d.at("planted")) {
        const TransformKind kind = parse_transform_kind(k.get<std::string>());
        bool found = false;
        for (const auto& s : c.transforms.specs()) found = found || s.kind == kind;
        if (!found) errs.push_back("discover.planted: " + k.get<std::string>() + " is not in the transform set");
        c.discover.planted.push_back(kind);
      }
  });
  section("output_dir", [&] { c.output_dir = resolve(base_dir, doc.at("output_dir").get<std::string>()); });

  if (!errs.empty()) throw ConfigError(std::move(errs));
  c.hash = config_hash(doc);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError({"cannot open config file: " + file.string()});
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({"config is not valid JSON: " + std::string(e.what())});
  }
  return parse_config(doc);
}

}  // namespace gmetro
