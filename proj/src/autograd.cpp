#include "gmetro/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace gmetro::ag {

namespace {

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<void(Node&)>;

Var make_op(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const Var& in : inputs) {
      if (in.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    for (const Var& in : inputs) n->parents.push_back(in.shared());
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

Var make_op(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return make_op(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

void accumulate(Node* n, const Matrix& g) {
  if (!n->requires_grad) return;
  if (n->grad.size() == 0) n->grad = g;
  else n->grad += g;
}

template <typename Expr>
void accumulate_expr(Node* n, const Expr& g) {
  if (!n->requires_grad) return;
  if (n->grad.size() == 0) n->grad = g.matrix();
  else n->grad += g.matrix();
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var detach(const Var& x) { return constant(x.value()); }

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw Error("backward needs a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  accumulate(root.node(), Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw Error("matmul shape mismatch");
  Matrix v = a.value() * b.value();
  Node* pa = a.node();
  Node* pb = b.node();
  return make_op(std::move(v), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) accumulate_expr(pa, self.grad * pb->value.transpose());
    if (pb->requires_grad) accumulate_expr(pb, pa->value.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("add shape mismatch");
  Node* pa = a.node();
  Node* pb = b.node();
  return make_op(a.value() + b.value(), {a, b}, [pa, pb](Node& self) {
    accumulate(pa, self.grad);
    accumulate(pb, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("sub shape mismatch");
  Node* pa = a.node();
  Node* pb = b.node();
  return make_op(a.value() - b.value(), {a, b}, [pa, pb](Node& self) {
    accumulate(pa, self.grad);
    accumulate_expr(pb, -self.grad);
  });
}

Var scale(const Var& a, double s) {
  Node* pa = a.node();
  return make_op(a.value() * s, {a}, [pa, s](Node& self) { accumulate_expr(pa, self.grad * s); });
}

Var add_bias(const Var& x, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw Error("bias shape mismatch");
  Matrix v = x.value();
  v.rowwise() += bias.value().row(0);
  Node* px = x.node();
  Node* pb = bias.node();
  return make_op(std::move(v), {x, bias}, [px, pb](Node& self) {
    accumulate(px, self.grad);
    if (pb->requires_grad) accumulate_expr(pb, self.grad.colwise().sum());
  });
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "elu") return Activation::elu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "prelu") return Activation::prelu;
  if (s == "identity") return Activation::identity;
  throw Error("unknown activation '" + std::string(s) + "'");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::elu: return "elu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    case Activation::prelu: return "prelu";
    case Activation::identity: break;
  }
  return "identity";
}

Var relu(const Var& x) {
  Node* px = x.node();
  return make_op(x.value().cwiseMax(0.0), {x}, [px](Node& self) {
    accumulate_expr(px, (px->value.array() > 0.0).cast<double>() * self.grad.array());
  });
}

Var elu(const Var& x) {
  Matrix v = x.value().unaryExpr([](double t) { return t > 0.0 ? t : std::expm1(t); });
  Node* px = x.node();
  return make_op(std::move(v), {x}, [px](Node& self) {
    Matrix d = px->value.unaryExpr([](double t) { return t > 0.0 ? 1.0 : std::exp(t); });
    accumulate_expr(px, d.cwiseProduct(self.grad));
  });
}

Var leaky_relu(const Var& x, double slope) {
  Matrix v = x.value().unaryExpr([slope](double t) { return t > 0.0 ? t : slope * t; });
  Node* px = x.node();
  return make_op(std::move(v), {x}, [px, slope](Node& self) {
    Matrix d = px->value.unaryExpr([slope](double t) { return t > 0.0 ? 1.0 : slope; });
    accumulate_expr(px, d.cwiseProduct(self.grad));
  });
}

Var tanh(const Var& x) {
  Matrix v = x.value().array().tanh().matrix();
  Node* px = x.node();
  return make_op(v, {x}, [px, v](Node& self) {
    accumulate_expr(px, ((1.0 - v.array().square()) * self.grad.array()).matrix());
  });
}

Var prelu(const Var& x, const Var& slope) {
  if (slope.rows() != 1 || slope.cols() != 1) throw Error("prelu slope must be 1x1");
  const double a = slope.scalar();
  Matrix v = x.value().unaryExpr([a](double t) { return t > 0.0 ? t : a * t; });
  Node* px = x.node();
  Node* ps = slope.node();
  return make_op(std::move(v), {x, slope}, [px, ps](Node& self) {
    const double a = ps->value(0, 0);
    if (px->requires_grad) {
      Matrix d = px->value.unaryExpr([a](double t) { return t > 0.0 ? 1.0 : a; });
      accumulate_expr(px, d.cwiseProduct(self.grad));
    }
    if (ps->requires_grad) {
      const double ds = (px->value.array() > 0.0).select(0.0, px->value.array() * self.grad.array()).sum();
      accumulate(ps, Matrix::Constant(1, 1, ds));
    }
  });
}

Var dropout(const Var& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw Error("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  Node* px = x.node();
  return make_op(x.value().cwiseProduct(mask), {x},
                 [px, mask](Node& self) { accumulate_expr(px, self.grad.cwiseProduct(mask)); });
}

Var spmm(const SparseMatrix& s, const Var& x) {
  if (s.cols() != x.rows()) throw Error("spmm shape mismatch");
  Node* px = x.node();
  const SparseMatrix* ps = &s;
  return make_op(Matrix(s * x.value()), {x},
                 [px, ps](Node& self) { accumulate_expr(px, ps->transpose() * self.grad); });
}

Var gat_attention(const Var& h, const Var& att_src, const Var& att_dst, const PreparedGraph& g,
                  double negative_slope) {
  const Eigen::Index n = h.rows();
  const Eigen::Index d = h.cols();
  if (n != g.num_nodes) throw Error("gat_attention node count mismatch");
  if (att_src.rows() != 1 || att_src.cols() != d || att_dst.rows() != 1 || att_dst.cols() != d)
    throw Error("attention vector shape mismatch");
  const Eigen::VectorXd s = h.value() * att_src.value().transpose();
  const Eigen::VectorXd t = h.value() * att_dst.value().transpose();
  const auto& off = g.in_offsets;
  const auto& src = g.in_sources;
  std::vector<double> alpha(src.size());
  std::vector<double> pre(src.size());
  Matrix out = Matrix::Zero(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int e = off[i]; e < off[i + 1]; ++e) {
      const double z = s[src[e]] + t[i];
      pre[e] = z;
      const double a = z > 0.0 ? z : negative_slope * z;
      alpha[e] = a;
      mx = std::max(mx, a);
    }
    double denom = 0.0;
    for (int e = off[i]; e < off[i + 1]; ++e) {
      alpha[e] = std::exp(alpha[e] - mx);
      denom += alpha[e];
    }
    for (int e = off[i]; e < off[i + 1]; ++e) {
      alpha[e] /= denom;
      out.row(i) += alpha[e] * h.value().row(src[e]);
    }
  }
  Node* ph = h.node();
  Node* ps = att_src.node();
  Node* pt = att_dst.node();
  return make_op(std::move(out), {h, att_src, att_dst},
                 [ph, ps, pt, &g, alpha = std::move(alpha), pre = std::move(pre), negative_slope](Node& self) {
    const Matrix& H = ph->value;
    const Matrix& G = self.grad;
    const Eigen::Index n = H.rows();
    const auto& off = g.in_offsets;
    const auto& src = g.in_sources;
    Matrix dh = Matrix::Zero(H.rows(), H.cols());
    Eigen::VectorXd ds = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd dt = Eigen::VectorXd::Zero(n);
    std::vector<double> dalpha;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int b = off[i];
      const int e_end = off[i + 1];
      dalpha.assign(e_end - b, 0.0);
      double weighted = 0.0;
      for (int e = b; e < e_end; ++e) {
        dalpha[e - b] = G.row(i).dot(H.row(src[e]));
        weighted += alpha[e] * dalpha[e - b];
        dh.row(src[e]) += alpha[e] * G.row(i);
      }
      for (int e = b; e < e_end; ++e) {
        const double de = alpha[e] * (dalpha[e - b] - weighted);
        const double dz = de * (pre[e] > 0.0 ? 1.0 : negative_slope);
        ds[src[e]] += dz;
        dt[i] += dz;
      }
    }
    if (ph->requires_grad) {
      dh += ds * ps->value.row(0);
      dh += dt * pt->value.row(0);
      accumulate(ph, dh);
    }
    if (ps->requires_grad) accumulate_expr(ps, ds.transpose() * H);
    if (pt->requires_grad) accumulate_expr(pt, dt.transpose() * H);
  });
}

Var segment_pool(const Var& x, std::span<const int> segment, int num_segments, PoolMode mode) {
  if (static_cast<Eigen::Index>(segment.size()) != x.rows()) throw Error("segment size mismatch");
  std::vector<double> count(num_segments, 0.0);
  for (int s : segment) count[s] += 1.0;
  for (double c : count)
    if (c == 0.0) throw Error("cannot pool an empty node set");
  Matrix out = Matrix::Zero(num_segments, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(segment[i]) += x.value().row(i);
  if (mode == PoolMode::mean)
    for (int s = 0; s < num_segments; ++s) out.row(s) /= count[s];
  Node* px = x.node();
  std::vector<int> seg(segment.begin(), segment.end());
  return make_op(std::move(out), {x}, [px, seg = std::move(seg), count = std::move(count), mode](Node& self) {
    Matrix dx(px->value.rows(), px->value.cols());
    for (Eigen::Index i = 0; i < dx.rows(); ++i) {
      dx.row(i) = self.grad.row(seg[i]);
      if (mode == PoolMode::mean) dx.row(i) /= count[seg[i]];
    }
    accumulate(px, dx);
  });
}

Var gather_rows(const Var& x, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= x.rows()) throw Error("gather row out of range");
    out.row(static_cast<Eigen::Index>(r)) = x.value().row(rows[r]);
  }
  Node* px = x.node();
  std::vector<int> idx(rows.begin(), rows.end());
  return make_op(std::move(out), {x}, [px, idx = std::move(idx)](Node& self) {
    Matrix dx = Matrix::Zero(px->value.rows(), px->value.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) dx.row(idx[r]) += self.grad.row(static_cast<Eigen::Index>(r));
    accumulate(px, dx);
  });
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix p(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    p.row(r) = (scores.row(r).array() - mx).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Matrix sigmoid(const Matrix& scores) {
  return scores.unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}

Matrix mix_softmax_value(const Matrix& scores, std::span<const Matrix* const> experts) {
  if (static_cast<Eigen::Index>(experts.size()) != scores.cols()) throw Error("expert count mismatch");
  const Matrix p = softmax_rows(scores);
  Matrix h = Matrix::Zero(scores.rows(), experts.empty() ? 0 : experts[0]->cols());
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (experts[i]->rows() != scores.rows() || experts[i]->cols() != h.cols()) throw Error("expert shape mismatch");
    h += p.col(static_cast<Eigen::Index>(i)).asDiagonal() * (*experts[i]);
  }
  return h;
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(scores.rows());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    int best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(r, c) > scores(r, best)) best = static_cast<int>(c);
    out[r] = best;
  }
  return out;
}

Var softmax_mix(const Var& scores, std::span<const Var> experts) {
  std::vector<const Matrix*> values;
  for (const Var& z : experts) values.push_back(&z.value());
  Matrix h = mix_softmax_value(scores.value(), values);
  std::vector<Var> inputs(experts.begin(), experts.end());
  inputs.push_back(scores);
  Matrix p = softmax_rows(scores.value());
  std::vector<Node*> pz;
  for (const Var& z : experts) pz.push_back(z.node());
  Node* pw = scores.node();
  return make_op(std::move(h), inputs, [pz = std::move(pz), pw, p = std::move(p)](Node& self) {
    const Matrix& G = self.grad;
    for (std::size_t i = 0; i < pz.size(); ++i)
      if (pz[i]->requires_grad) accumulate_expr(pz[i], p.col(static_cast<Eigen::Index>(i)).asDiagonal() * G);
    if (pw->requires_grad) {
      Matrix dp(p.rows(), p.cols());
      for (std::size_t i = 0; i < pz.size(); ++i)
        dp.col(static_cast<Eigen::Index>(i)) = G.cwiseProduct(pz[i]->value).rowwise().sum();
      Eigen::VectorXd inner = p.cwiseProduct(dp).rowwise().sum();
      Matrix dw = p.cwiseProduct(dp.colwise() - inner);
      accumulate(pw, dw);
    }
  });
}

Var select_mix(const Var& scores, std::span<const Var> experts) {
  if (static_cast<Eigen::Index>(experts.size()) != scores.cols()) throw Error("expert count mismatch");
  const auto pick = argmax_rows(scores.value());
  Matrix h(scores.rows(), experts.empty() ? 0 : experts[0].cols());
  for (Eigen::Index r = 0; r < h.rows(); ++r) h.row(r) = experts[pick[r]].value().row(r);
  std::vector<Node*> pz;
  for (const Var& z : experts) pz.push_back(z.node());
  return make_op(std::move(h), experts, [pz = std::move(pz), pick](Node& self) {
    for (std::size_t i = 0; i < pz.size(); ++i) {
      if (!pz[i]->requires_grad) continue;
      Matrix dz = Matrix::Zero(self.grad.rows(), self.grad.cols());
      for (Eigen::Index r = 0; r < dz.rows(); ++r)
        if (pick[r] == static_cast<int>(i)) dz.row(r) = self.grad.row(r);
      accumulate(pz[i], dz);
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Eigen::Index n = logits.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw Error("label count mismatch");
  if (n == 0) throw Error("cross entropy over an empty batch");
  Matrix p = softmax_rows(logits.value());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= logits.cols()) throw Error("label out of range");
    const double mx = logits.value().row(r).maxCoeff();
    const double lse = mx + std::log((logits.value().row(r).array() - mx).exp().sum());
    loss += lse - logits.value()(r, y);
  }
  loss /= static_cast<double>(n);
  Node* pl = logits.node();
  std::vector<int> y(labels.begin(), labels.end());
  return make_op(Matrix::Constant(1, 1, loss), {logits}, [pl, p = std::move(p), y = std::move(y)](Node& self) {
    Matrix d = p;
    for (std::size_t r = 0; r < y.size(); ++r) d(static_cast<Eigen::Index>(r), y[r]) -= 1.0;
    d *= self.grad(0, 0) / static_cast<double>(y.size());
    accumulate(pl, d);
  });
}

Var bce_with_logits(const Var& scores, const Matrix& targets) {
  if (scores.rows() != targets.rows() || scores.cols() != targets.cols()) throw Error("bce shape mismatch");
  if (scores.value().size() == 0) throw Error("bce over an empty batch");
  const Matrix& x = scores.value();
  const double count = static_cast<double>(x.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double s = x.data()[i];
    const double y = targets.data()[i];
    loss += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
  }
  loss /= count;
  Node* ps = scores.node();
  return make_op(Matrix::Constant(1, 1, loss), {scores}, [ps, targets, count](Node& self) {
    Matrix d = sigmoid(ps->value) - targets;
    d *= self.grad(0, 0) / count;
    accumulate(ps, d);
  });
}

Var frobenius_distance(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("alignment shape mismatch");
  if (a.rows() == 0) throw Error("alignment over an empty set");
  const double n = static_cast<double>(a.rows());
  Matrix diff = a.value() - b.value();
  const double norm = diff.norm();
  Node* pa = a.node();
  Node* pb = b.node();
  return make_op(Matrix::Constant(1, 1, norm / n), {a, b}, [pa, pb, diff = std::move(diff), norm, n](Node& self) {
    if (norm == 0.0) return;
    const Matrix d = diff * (self.grad(0, 0) / (n * norm));
    accumulate(pa, d);
    accumulate_expr(pb, -d);
  });
}

Var row_distance_mean(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("alignment shape mismatch");
  if (a.rows() == 0) throw Error("alignment over an empty set");
  const double n = static_cast<double>(a.rows());
  Matrix diff = a.value() - b.value();
  Eigen::VectorXd norms = diff.rowwise().norm();
  Node* pa = a.node();
  Node* pb = b.node();
  return make_op(Matrix::Constant(1, 1, norms.sum() / n), {a, b},
                 [pa, pb, diff = std::move(diff), norms, n](Node& self) {
    Matrix d(diff.rows(), diff.cols());
    for (Eigen::Index r = 0; r < d.rows(); ++r)
      d.row(r) = norms[r] == 0.0 ? RowVector::Zero(d.cols()) : RowVector(diff.row(r) / norms[r]);
    d *= self.grad(0, 0) / n;
    accumulate(pa, d);
    accumulate_expr(pb, -d);
  });
}

}  // namespace gmetro::ag
