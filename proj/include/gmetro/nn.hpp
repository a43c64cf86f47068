#pragma once

#include "gmetro/autograd.hpp"
#include "gmetro/batch.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace gmetro::nn {

using ag::Activation;
using ag::Var;

struct NamedParameter {
  std::string name;
  Var var;
};

/// Ordered, named view over every trainable tensor of a model.
class ParameterList {
 public:
  Var add(std::string name, Matrix init);
  void extend(const std::string& prefix, const ParameterList& other);

  const std::vector<NamedParameter>& items() const { return items_; }
  std::vector<NamedParameter>& items() { return items_; }
  std::size_t scalar_count() const;
  void zero_grad();

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

 private:
  std::vector<NamedParameter> items_;
};

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // dropout source; required when training with dropout > 0
};

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true);
  Var forward(const Var& x) const;
  void register_parameters(ParameterList& params, const std::string& prefix) const;
  int in_dim() const { return static_cast<int>(weight_.rows()); }
  int out_dim() const { return static_cast<int>(weight_.cols()); }

 private:
  Var weight_;  // in x out
  Var bias_;    // 1 x out, optional
};

/// Activation with its own parameters (only prelu has one).
class ActivationLayer {
 public:
  ActivationLayer() = default;
  explicit ActivationLayer(Activation kind);
  Var forward(const Var& x) const;
  void register_parameters(ParameterList& params, const std::string& prefix) const;

 private:
  Activation kind_ = Activation::identity;
  Var slope_;
};

/// Linear layers with an activation between consecutive layers.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& dims, Activation act, Rng& rng);
  Var forward(const Var& x) const;
  void register_parameters(ParameterList& params, const std::string& prefix) const;

 private:
  std::vector<Linear> layers_;
  std::vector<ActivationLayer> acts_;
};

enum class ConvKind { gat, gcn, gin };
ConvKind parse_conv_kind(std::string_view s);
std::string_view to_string(ConvKind c);

struct EncoderArch {
  ConvKind conv = ConvKind::gat;
  int layers = 2;
  int hidden_dim = 64;
  Activation activation = Activation::prelu;
  double dropout = 0.0;
  PoolMode pool = PoolMode::add;

  bool operator==(const EncoderArch&) const = default;
};

nlohmann::json to_json(const EncoderArch& a);
EncoderArch encoder_arch_from_json(const nlohmann::json& j, const EncoderArch& base = {});

/// Stack of message-passing layers, each followed by the activation.
class Encoder {
 public:
  Encoder() = default;
  Encoder(int in_dim, const EncoderArch& arch, Rng& rng);
  /// Node representations, num_nodes x hidden_dim.
  Var forward(const PreparedGraph& g, const ForwardContext& ctx) const;
  void register_parameters(ParameterList& params, const std::string& prefix) const;
  const EncoderArch& arch() const { return arch_; }

 private:
  struct Layer {
    Linear lin;
    Var att_src, att_dst;  // gat
    Var bias;              // gat / gcn
    Mlp gin_mlp;           // gin
    ActivationLayer act;
  };
  EncoderArch arch_;
  std::vector<Layer> layers_;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Parameters whose name starts with a listed prefix use that learning rate.
  std::vector<std::pair<std::string, double>> prefix_learning_rates;
};

class Adam {
 public:
  Adam(ParameterList& params, AdamOptions opts);
  void step();

 private:
  ParameterList* params_;
  AdamOptions opts_;
  std::vector<Matrix> m_, v_;
  std::vector<double> lr_;
  long step_ = 0;
};

Matrix glorot_uniform(int rows, int cols, Rng& rng);

}  // namespace gmetro::nn
