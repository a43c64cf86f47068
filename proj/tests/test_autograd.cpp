#include <doctest.h>

#include "gmetro/autograd.hpp"
#include "gmetro/batch.hpp"
#include "test_util.hpp"

using namespace gmetro;
using ag::Var;
using gmetro::testing::fd_check;
using gmetro::testing::ring;

namespace {

Matrix rnd(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

// Checks d(scalarize(op(params)))/d(params) against central differences.
// The scalarizer is the distance to a fixed random target, smooth away from it.
void check_op(std::vector<Var> params, const std::function<Var(const std::vector<Var>&)>& op,
              double tol = 1e-6) {
  const Matrix probe = op(params).value();
  const Matrix target = rnd(static_cast<int>(probe.rows()), static_cast<int>(probe.cols()), 99) * 3.0;
  auto loss = [&](const std::vector<Var>& ps) { return ag::frobenius_distance(op(ps), ag::constant(target)); };
  for (Var& p : params) p.zero_grad();
  ag::backward(loss(params));
  for (Var& p : params) {
    auto f = [&] {
      ag::NoGradGuard g;
      return loss(params).scalar();
    };
    CHECK(fd_check(p, f) < tol);
  }
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("dense ops") {
    Var a = ag::parameter(rnd(3, 4, 1)), b = ag::parameter(rnd(4, 2, 2)), c = ag::parameter(rnd(3, 4, 3));
    Var bias = ag::parameter(rnd(1, 2, 4));
    check_op({a, b}, [](auto& p) { return ag::matmul(p[0], p[1]); });
    check_op({a, c}, [](auto& p) { return ag::add(p[0], p[1]); });
    check_op({a, c}, [](auto& p) { return ag::sub(p[0], p[1]); });
    check_op({a}, [](auto& p) { return ag::scale(p[0], -1.7); });
    check_op({a, b, bias}, [](auto& p) { return ag::add_bias(ag::matmul(p[0], p[1]), p[2]); });
  }

  TEST_CASE("activations") {
    Var x = ag::parameter(rnd(4, 3, 5)), slope = ag::parameter(Matrix::Constant(1, 1, 0.25));
    check_op({x}, [](auto& p) { return ag::relu(p[0]); });
    check_op({x}, [](auto& p) { return ag::elu(p[0]); });
    check_op({x}, [](auto& p) { return ag::leaky_relu(p[0], 0.2); });
    check_op({x}, [](auto& p) { return ag::tanh(p[0]); });
    check_op({x, slope}, [](auto& p) { return ag::prelu(p[0], p[1]); });
  }

  TEST_CASE("graph ops") {
    Graph g = ring(5, 3, 7);
    g.edges.push_back({0, 2});
    g.edges.push_back({2, 0});
    const PreparedGraph pg = prepare_graph(g);
    Var h = ag::parameter(rnd(5, 3, 8)), as = ag::parameter(rnd(1, 3, 9)), ad = ag::parameter(rnd(1, 3, 10));
    check_op({h, as, ad}, [&](auto& p) { return ag::gat_attention(p[0], p[1], p[2], pg); });
    check_op({h}, [&](auto& p) { return ag::spmm(pg.gcn_norm, p[0]); });
    const std::vector<int> seg{0, 0, 1, 1, 1};
    check_op({h}, [&](auto& p) { return ag::segment_pool(p[0], seg, 2, PoolMode::add); });
    check_op({h}, [&](auto& p) { return ag::segment_pool(p[0], seg, 2, PoolMode::mean); });
    const std::vector<int> rows{4, 1, 1};
    check_op({h}, [&](auto& p) { return ag::gather_rows(p[0], rows); });
  }

  TEST_CASE("mixing ops") {
    Var s = ag::parameter(rnd(3, 3, 11));
    Var z0 = ag::parameter(rnd(3, 2, 12)), z1 = ag::parameter(rnd(3, 2, 13)), z2 = ag::parameter(rnd(3, 2, 14));
    check_op({s, z0, z1, z2}, [](auto& p) {
      const std::vector<Var> z{p[1], p[2], p[3]};
      return ag::softmax_mix(p[0], z);
    });
    check_op({z0, z1, z2}, [&](auto& p) {
      const std::vector<Var> z{p[0], p[1], p[2]};
      return ag::select_mix(ag::detach(s), z);
    });
  }

  TEST_CASE("losses") {
    Var logits = ag::parameter(rnd(4, 3, 15));
    const std::vector<int> labels{0, 2, 1, 2};
    ag::backward(ag::cross_entropy(logits, labels));
    CHECK(fd_check(logits, [&] {
            ag::NoGradGuard g;
            return ag::cross_entropy(logits, labels).scalar();
          }) < 1e-6);

    Var w = ag::parameter(rnd(4, 6, 16) * 3);
    Matrix bits = Matrix::Zero(4, 6);
    bits(0, 0) = bits(1, 2) = bits(1, 3) = bits(2, 5) = bits(3, 1) = 1;
    ag::backward(ag::bce_with_logits(w, bits));
    CHECK(fd_check(w, [&] {
            ag::NoGradGuard g;
            return ag::bce_with_logits(w, bits).scalar();
          }) < 1e-6);

    Var a = ag::parameter(rnd(3, 4, 17)), b = ag::parameter(rnd(3, 4, 18));
    ag::backward(ag::row_distance_mean(a, b));
    CHECK(fd_check(a, [&] {
            ag::NoGradGuard g;
            return ag::row_distance_mean(a, b).scalar();
          }) < 1e-6);
  }

  TEST_CASE("loss closed forms") {
    // cross entropy against a scalar oracle
    const Matrix l = rnd(3, 4, 20);
    const std::vector<int> y{1, 0, 3};
    double expect = 0;
    for (int r = 0; r < 3; ++r) {
      double z = 0;
      for (int c = 0; c < 4; ++c) z += std::exp(l(r, c));
      expect += std::log(z) - l(r, y[r]);
    }
    CHECK(ag::cross_entropy(ag::constant(l), y).scalar() == doctest::Approx(expect / 3).epsilon(1e-12));

    // bce with zero scores is ln 2 per entry
    CHECK(ag::bce_with_logits(ag::constant(Matrix::Zero(2, 3)), Matrix::Ones(2, 3)).scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
    // bce against a scalar oracle, including large magnitudes
    Matrix s(1, 4);
    s << -40, -0.3, 2.5, 60;
    Matrix t(1, 4);
    t << 0, 1, 0, 1;
    double want = 0;
    for (int c = 0; c < 4; ++c) {
      const double x = s(0, c);
      const double log1pexp = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      want += log1pexp - t(0, c) * x;
    }
    CHECK(ag::bce_with_logits(ag::constant(s), t).scalar() == doctest::Approx(want / 4).epsilon(1e-12));

    Matrix a(1, 2), z = Matrix::Zero(1, 2);
    a << 3, 4;
    CHECK(ag::frobenius_distance(ag::constant(a), ag::constant(z)).scalar() == 5.0);
    Matrix a2(2, 2);
    a2 << 3, 4, 0, 0;
    CHECK(ag::frobenius_distance(ag::constant(a2), ag::constant(Matrix::Zero(2, 2))).scalar() == 2.5);
    CHECK(ag::frobenius_distance(ag::constant(a2), ag::constant(a2)).scalar() == 0.0);
    CHECK_THROWS(ag::frobenius_distance(ag::constant(a2), ag::constant(a)));
  }

  TEST_CASE("frobenius distance has zero gradient at coincidence") {
    Var a = ag::parameter(rnd(2, 2, 21));
    ag::backward(ag::frobenius_distance(a, ag::constant(a.value())));
    CHECK((a.grad().size() == 0 || a.grad().cwiseAbs().maxCoeff() == 0.0));
  }

  TEST_CASE("detach and no-grad") {
    Var a = ag::parameter(rnd(2, 2, 22));
    Var d = ag::detach(a);
    CHECK_FALSE(d.requires_grad());
    ag::backward(ag::frobenius_distance(ag::add(a, d), ag::constant(Matrix::Zero(2, 2))));
    // gradient flows only through the attached branch
    Var b = ag::parameter(a.value());
    ag::backward(ag::frobenius_distance(ag::scale(b, 2.0), ag::constant(Matrix::Zero(2, 2))));
    CHECK((a.grad() - b.grad() / 2.0).cwiseAbs().maxCoeff() < 1e-15);
    {
      ag::NoGradGuard guard;
      CHECK_FALSE(ag::grad_enabled());
      CHECK_FALSE(ag::matmul(a, a).requires_grad());
    }
    CHECK(ag::grad_enabled());
  }

  TEST_CASE("dropout") {
    Var x = ag::parameter(Matrix::Ones(50, 40));
    Rng rng(3);
    Var y = ag::dropout(x, 0.25, rng);
    int kept = 0;
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < 40; ++j) {
        const double v = y.value()(i, j);
        CHECK((v == 0.0 || std::fabs(v - 1.0 / 0.75) < 1e-12));
        kept += v != 0.0;
      }
    const double sigma = std::sqrt(2000 * 0.25 * 0.75);
    CHECK(std::fabs(kept - 1500) < 4 * sigma);
    Rng rng2(3);
    CHECK(ag::dropout(x, 0.0, rng2).value() == x.value());
  }

  TEST_CASE("value helpers") {
    Matrix s(2, 3);
    s << 1000, 0, -1000, 1, 1, 1;
    const Matrix p = ag::softmax_rows(s);
    CHECK(p(0, 0) == 1.0);
    CHECK(p.row(1).sum() == doctest::Approx(1.0).epsilon(1e-15));
    Matrix t(2, 3);
    t << 0.5, 2, 2, 1, 1, 1;
    CHECK(ag::argmax_rows(t) == std::vector<int>{1, 0});
    CHECK(ag::sigmoid(Matrix::Zero(1, 1))(0, 0) == 0.5);
  }
}
