#include "gmetro/nn.hpp"

#include <cmath>

namespace gmetro::nn {

Var ParameterList::add(std::string name, Matrix init) {
  Var v = ag::parameter(std::move(init));
  items_.push_back({std::move(name), v});
  return v;
}

void ParameterList::extend(const std::string& prefix, const ParameterList& other) {
  for (const auto& p : other.items_) items_.push_back({prefix + p.name, p.var});
}

std::size_t ParameterList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

void ParameterList::zero_grad() {
  for (auto& p : items_) p.var.zero_grad();
}

std::vector<Matrix> ParameterList::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.var.value());
  return out;
}

void ParameterList::restore(const std::vector<Matrix>& values) {
  if (values.size() != items_.size()) throw Error("parameter snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) items_[i].var.mutable_value() = values[i];
}

Matrix glorot_uniform(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Linear::Linear(int in, int out, Rng& rng, bool bias) : weight_(ag::parameter(glorot_uniform(in, out, rng))) {
  if (bias) bias_ = ag::parameter(Matrix::Zero(1, out));
}

Var Linear::forward(const Var& x) const {
  Var y = ag::matmul(x, weight_);
  return bias_ ? ag::add_bias(y, bias_) : y;
}

void Linear::register_parameters(ParameterList& params, const std::string& prefix) const {
  params.items().push_back({prefix + "weight", weight_});
  if (bias_) params.items().push_back({prefix + "bias", bias_});
}

ActivationLayer::ActivationLayer(Activation kind) : kind_(kind) {
  if (kind == Activation::prelu) slope_ = ag::parameter(Matrix::Constant(1, 1, 0.25));
}

Var ActivationLayer::forward(const Var& x) const {
  switch (kind_) {
    case Activation::relu: return ag::relu(x);
    case Activation::elu: return ag::elu(x);
    case Activation::leaky_relu: return ag::leaky_relu(x, 0.01);
    case Activation::tanh: return ag::tanh(x);
    case Activation::prelu: return ag::prelu(x, slope_);
    case Activation::identity: break;
  }
  return x;
}

void ActivationLayer::register_parameters(ParameterList& params, const std::string& prefix) const {
  if (slope_) params.items().push_back({prefix + "slope", slope_});
}

Mlp::Mlp(const std::vector<int>& dims, Activation act, Rng& rng) {
  if (dims.size() < 2) throw Error("mlp needs at least input and output dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers_.emplace_back(dims[i], dims[i + 1], rng);
    if (i + 2 < dims.size()) acts_.emplace_back(act);
  }
}

Var Mlp::forward(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i < acts_.size()) h = acts_[i].forward(h);
  }
  return h;
}

void Mlp::register_parameters(ParameterList& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].register_parameters(params, prefix + "lin" + std::to_string(i) + ".");
    if (i < acts_.size()) acts_[i].register_parameters(params, prefix + "act" + std::to_string(i) + ".");
  }
}

ConvKind parse_conv_kind(std::string_view s) {
  if (s == "gat") return ConvKind::gat;
  if (s == "gcn") return ConvKind::gcn;
  if (s == "gin") return ConvKind::gin;
  throw Error("unknown conv kind '" + std::string(s) + "'");
}

std::string_view to_string(ConvKind c) {
  switch (c) {
    case ConvKind::gat: return "gat";
    case ConvKind::gcn: return "gcn";
    case ConvKind::gin: break;
  }
  return "gin";
}

nlohmann::json to_json(const EncoderArch& a) {
  return {{"conv", std::string(to_string(a.conv))},
          {"layers", a.layers},
          {"hidden_dim", a.hidden_dim},
          {"activation", std::string(ag::to_string(a.activation))},
          {"dropout", a.dropout},
          {"pool", std::string(to_string(a.pool))}};
}

EncoderArch encoder_arch_from_json(const nlohmann::json& j, const EncoderArch& base) {
  EncoderArch a = base;
  if (j.contains("conv")) a.conv = parse_conv_kind(j["conv"].get<std::string>());
  if (j.contains("layers")) a.layers = j["layers"].get<int>();
  if (j.contains("hidden_dim")) a.hidden_dim = j["hidden_dim"].get<int>();
  if (j.contains("activation")) a.activation = ag::parse_activation(j["activation"].get<std::string>());
  if (j.contains("dropout")) a.dropout = j["dropout"].get<double>();
  if (j.contains("pool")) a.pool = parse_pool_mode(j["pool"].get<std::string>());
  return a;
}

Encoder::Encoder(int in_dim, const EncoderArch& arch, Rng& rng) : arch_(arch) {
  if (arch.layers < 1 || arch.hidden_dim < 1) throw Error("encoder needs >= 1 layer and hidden_dim >= 1");
  int d = in_dim;
  for (int l = 0; l < arch.layers; ++l) {
    Layer layer;
    const int h = arch.hidden_dim;
    switch (arch.conv) {
      case ConvKind::gat:
        layer.lin = Linear(d, h, rng, false);
        layer.att_src = ag::parameter(glorot_uniform(1, h, rng));
        layer.att_dst = ag::parameter(glorot_uniform(1, h, rng));
        layer.bias = ag::parameter(Matrix::Zero(1, h));
        break;
      case ConvKind::gcn:
        layer.lin = Linear(d, h, rng, false);
        layer.bias = ag::parameter(Matrix::Zero(1, h));
        break;
      case ConvKind::gin:
        layer.gin_mlp = Mlp({d, h, h}, arch.activation, rng);
        break;
    }
    layer.act = ActivationLayer(arch.activation);
    layers_.push_back(std::move(layer));
    d = h;
  }
}

Var Encoder::forward(const PreparedGraph& g, const ForwardContext& ctx) const {
  Var h = ag::constant(g.x);
  for (const Layer& layer : layers_) {
    if (arch_.dropout > 0.0 && ctx.training) {
      if (!ctx.rng) throw Error("dropout requires a random source");
      h = ag::dropout(h, arch_.dropout, *ctx.rng);
    }
    switch (arch_.conv) {
      case ConvKind::gat:
        h = ag::add_bias(ag::gat_attention(layer.lin.forward(h), layer.att_src, layer.att_dst, g), layer.bias);
        break;
      case ConvKind::gcn:
        h = ag::add_bias(ag::spmm(g.gcn_norm, layer.lin.forward(h)), layer.bias);
        break;
      case ConvKind::gin:
        h = layer.gin_mlp.forward(ag::spmm(g.sum_adj, h));
        break;
    }
    h = layer.act.forward(h);
  }
  return h;
}

void Encoder::register_parameters(ParameterList& params, const std::string& prefix) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = prefix + "conv" + std::to_string(l) + ".";
    const Layer& layer = layers_[l];
    switch (arch_.conv) {
      case ConvKind::gat:
        layer.lin.register_parameters(params, p);
        params.items().push_back({p + "att_src", layer.att_src});
        params.items().push_back({p + "att_dst", layer.att_dst});
        params.items().push_back({p + "bias", layer.bias});
        break;
      case ConvKind::gcn:
        layer.lin.register_parameters(params, p);
        params.items().push_back({p + "bias", layer.bias});
        break;
      case ConvKind::gin:
        layer.gin_mlp.register_parameters(params, p + "mlp.");
        break;
    }
    layer.act.register_parameters(params, p + "act.");
  }
}

Adam::Adam(ParameterList& params, AdamOptions opts) : params_(&params), opts_(opts) {
  for (const auto& p : params.items()) {
    m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    double lr = opts_.learning_rate;
    for (const auto& [prefix, rate] : opts_.prefix_learning_rates)
      if (p.name.compare(0, prefix.size(), prefix) == 0) {
        lr = rate;
        break;
      }
    lr_.push_back(lr);
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  auto& items = params_->items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    Var& p = items[i].var;
    if (p.grad().size() == 0 && opts_.weight_decay == 0.0) continue;
    Matrix g = p.grad().size() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
    if (opts_.weight_decay != 0.0) g += opts_.weight_decay * p.value();
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        lr_[i] * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

}  // namespace gmetro::nn
