#pragma once

// Independent recomputation of the GraphMETRO objective for gradient checks.
// The analytic gradient treats the gate scores used for mixing, the reference
// expert output, and expert 0 inside the alignment aggregation as constants,
// so the oracle freezes them at the current parameters and differentiates
// what remains numerically.

#include "gmetro/training.hpp"
#include "test_util.hpp"

namespace gmetro::testing {

struct ObjectiveToy {
  Batch clean;
  ShiftedBatch shifted;
  std::vector<int> ref_rows;  // reference row per shifted row
};

class FrozenObjective {
 public:
  FrozenObjective(const MoeModel& m, const ObjectiveToy& toy, double lambda) : m_(m), toy_(toy), lambda_(lambda) {
    ag::NoGradGuard guard;
    w_clean_ = m.gate_scores(toy.clean, {}).value();
    w_shift_ = m.gate_scores(toy.shifted.batch, {}).value();
    const Matrix ref = m.expert_representations(toy.clean, {})[0].value();
    ref_clean_ = ref;
    ref_at_shift_ = m.expert_representations(toy.shifted.batch, {})[0].value();
    ref_shift_.resize(static_cast<Eigen::Index>(toy.ref_rows.size()), ref.cols());
    for (std::size_t r = 0; r < toy.ref_rows.size(); ++r) ref_shift_.row(r) = ref.row(toy.ref_rows[r]);
  }

  double operator()() const {
    ag::NoGradGuard guard;
    const int width = m_.config().num_components + 1;
    Matrix id = Matrix::Zero(toy_.clean.size(), width);
    id.col(0).setOnes();
    const double l1 = 0.5 * (bce(m_.gate_scores(toy_.clean, {}).value(), id) +
                             bce(m_.gate_scores(toy_.shifted.batch, {}).value(), toy_.shifted.bits));
    auto part = [&](const Batch& b, const Matrix& w, const Matrix& z0, const Matrix& ref, double* ce, double* dist) {
      auto z = m_.expert_representations(b, {});
      const ag::Var h = m_.aggregate(ag::constant(w), z);
      *ce = ag::cross_entropy(m_.classify(h), b.labels).scalar();
      z[0] = ag::constant(z0);  // the reference expert is a constant inside the alignment term
      *dist = distance(m_.aggregate(ag::constant(w), z).value(), ref);
    };
    double ce_c, d_c, ce_s, d_s;
    part(toy_.clean, w_clean_, ref_clean_, ref_clean_, &ce_c, &d_c);
    part(toy_.shifted.batch, w_shift_, ref_at_shift_, ref_shift_, &ce_s, &d_s);
    return l1 + 0.5 * (ce_c + ce_s) + lambda_ * 0.5 * (d_c + d_s);
  }

 private:
  // Scalar BCE written out term by term.
  static double bce(const Matrix& s, const Matrix& t) {
    double sum = 0;
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        const double p = 1.0 / (1.0 + std::exp(-s(i, j)));
        sum += -(t(i, j) * std::log(p) + (1 - t(i, j)) * std::log(1 - p));
      }
    return sum / static_cast<double>(s.size());
  }

  double distance(const Matrix& a, const Matrix& b) const {
    if (m_.config().task == TaskKind::node) return (a - b).norm() / static_cast<double>(a.rows());
    double sum = 0;
    for (Eigen::Index r = 0; r < a.rows(); ++r) sum += (a.row(r) - b.row(r)).norm();
    return sum / static_cast<double>(a.rows());
  }

  const MoeModel& m_;
  const ObjectiveToy& toy_;
  double lambda_;
  Matrix w_clean_, w_shift_, ref_clean_, ref_shift_, ref_at_shift_;
};

struct GradientReport {
  double worst_rel_error = 0.0;
  std::string worst_param;
  double gate_grad_from_l2 = 0.0;   // max |.| over gate parameters, L2 part only
  double gate_total_vs_l1 = 0.0;    // max |total - L1| over gate gradients
  std::size_t parameters = 0;
};

inline GradientReport check_objective_gradients(MoeModel& m, const ObjectiveToy& toy, double lambda) {
  GradientReport rep;
  rep.parameters = m.parameters().scalar_count();
  auto gate_grads = [&] {
    std::vector<Matrix> out;
    for (const auto& p : m.parameters_with_prefix("gate."))
      out.push_back(p.var.grad().size() ? p.var.grad() : Matrix::Zero(p.var.rows(), p.var.cols()));
    return out;
  };

  m.parameters().zero_grad();
  ObjectiveTerms t = graphmetro_objective(m, toy.clean, toy.shifted, lambda, {});
  ag::backward(ag::add(t.l2_task, ag::scale(t.l2_align, lambda)));
  for (const Matrix& g : gate_grads()) rep.gate_grad_from_l2 = std::max(rep.gate_grad_from_l2, g.cwiseAbs().maxCoeff());

  m.parameters().zero_grad();
  t = graphmetro_objective(m, toy.clean, toy.shifted, lambda, {});
  ag::backward(t.l1);
  const std::vector<Matrix> l1_only = gate_grads();

  m.parameters().zero_grad();
  t = graphmetro_objective(m, toy.clean, toy.shifted, lambda, {});
  ag::backward(t.total);
  const std::vector<Matrix> total = gate_grads();
  for (std::size_t i = 0; i < total.size(); ++i)
    rep.gate_total_vs_l1 = std::max(rep.gate_total_vs_l1, (total[i] - l1_only[i]).cwiseAbs().maxCoeff());

  const FrozenObjective f(m, toy, lambda);
  for (auto& p : m.parameters().items()) {
    const double e = fd_check(p.var, [&] { return f(); });
    if (e > rep.worst_rel_error) {
      rep.worst_rel_error = e;
      rep.worst_param = p.name;
    }
  }
  m.parameters().zero_grad();
  return rep;
}

}  // namespace gmetro::testing
