#pragma once

#include "gmetro/batch.hpp"
#include "gmetro/graph.hpp"
#include "gmetro/rng.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

/// Minimal tape-free reverse-mode differentiation over dense row-major
/// matrices. Every op records its parents and a closure that pushes the
/// output gradient back to them; `backward` walks the graph in reverse
/// topological order.
namespace gmetro::ag {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }
  void zero_grad() { node_->grad.resize(0, 0); }

 private:
  std::shared_ptr<Node> node_;
};

/// Graph recording is thread-local; inference paths disable it.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

Var constant(Matrix value);
Var parameter(Matrix value);
/// Same value, cut from the graph.
Var detach(const Var& x);

/// Seeds d(root)/d(root) = 1 (root must be 1x1) and accumulates into every
/// reachable node that requires grad.
void backward(const Var& root);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_bias(const Var& x, const Var& bias);  // bias is 1 x d

enum class Activation { relu, elu, leaky_relu, tanh, prelu, identity };
Activation parse_activation(std::string_view s);
std::string_view to_string(Activation a);

Var relu(const Var& x);
Var elu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);
/// Learnable single-slope parametric ReLU; `slope` is 1 x 1.
Var prelu(const Var& x, const Var& slope);

Var dropout(const Var& x, double p, Rng& rng);

/// Sparse constant times dense variable.
Var spmm(const SparseMatrix& s, const Var& x);

/// Single-head graph attention over incoming edges (self loops included):
/// out_i = sum_j softmax_j(leaky(att_src.h_j + att_dst.h_i)) h_j.
Var gat_attention(const Var& h, const Var& att_src, const Var& att_dst, const PreparedGraph& g,
                  double negative_slope = 0.2);

Var segment_pool(const Var& x, std::span<const int> segment, int num_segments, PoolMode mode);
Var gather_rows(const Var& x, std::span<const int> rows);

/// Row-wise softmax(scores) weighted sum of the expert matrices.
Var softmax_mix(const Var& scores, std::span<const Var> experts);
/// Row-wise pick of the expert with the highest score (lowest index on ties).
Var select_mix(const Var& scores, std::span<const Var> experts);

/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, std::span<const int> labels);
/// Mean over all entries of the binary cross entropy of sigmoid(scores).
Var bce_with_logits(const Var& scores, const Matrix& targets);
/// (1/n) * ||a - b||_F with n = rows.
Var frobenius_distance(const Var& a, const Var& b);
/// Mean over rows of ||a_r - b_r||_2, i.e. the n = 1 distance per row.
Var row_distance_mean(const Var& a, const Var& b);

// Value-level helpers shared with the differentiable ops, so plain and
// recorded paths agree bit for bit.
Matrix softmax_rows(const Matrix& scores);
Matrix sigmoid(const Matrix& scores);
Matrix mix_softmax_value(const Matrix& scores, std::span<const Matrix* const> experts);
std::vector<int> argmax_rows(const Matrix& scores);

}  // namespace gmetro::ag
