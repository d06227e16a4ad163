#include <doctest.h>

#include <cmath>
#include <vector>

#include "fairattn/diff.hpp"
#include "fairattn/rng.hpp"
#include "oracles.hpp"

using namespace fairattn;
using diff::Param;
using diff::Tape;
using diff::Value;

TEST_CASE("gelu values") {
  Tape t;
  Value z = t.input(Array::vec({0.0, 10.0, 1.0}));
  Value g = t.gelu(z);
  CHECK(g.data().v[0] == 0.0);
  CHECK(g.data().v[1] == doctest::Approx(10.0).epsilon(1e-7));
  CHECK(g.data().v[2] == doctest::Approx(oracle::gelu(1.0)).epsilon(1e-9));
  CHECK(std::fabs(g.data().v[2] - 0.841345) < 1e-5);
}

TEST_CASE("gelu gradient matches the normal-density oracle") {
  Param w("w", Array::vec({1.0}));
  Tape t;
  Value root = t.sum(t.gelu(t.param(w)));
  t.backward(root);
  double expected = oracle::normal_cdf(1.0) + 1.0 * oracle::normal_pdf(1.0);
  CHECK(std::fabs(w.grad.v[0] - expected) < 1e-4);
  CHECK(expected == doctest::Approx(1.0833155).epsilon(1e-5));
}

TEST_CASE("gelu is monotone past -0.5 and its half-slope residual is symmetric") {
  Tape t;
  std::vector<double> grid;
  for (double z = -0.5; z <= 4.0; z += 0.05) grid.push_back(z);
  Value g = t.gelu(t.input(Array::vec(grid)));
  for (size_t i = 1; i < grid.size(); ++i) CHECK(g.data().v[i] >= g.data().v[i - 1]);
  // gelu(z) - z/2 takes the same value at z and -z
  for (double z = 0.05; z <= 3.0; z += 0.137) {
    Tape t2;
    Value pair = t2.gelu(t2.input(Array::vec({z, -z})));
    double r_pos = pair.data().v[0] - z / 2;
    double r_neg = pair.data().v[1] + z / 2;
    CHECK(r_pos == doctest::Approx(r_neg).epsilon(1e-12));
  }
}

TEST_CASE("layer_norm worked examples") {
  SUBCASE("unit affine") {
    Tape t;
    Value out = t.layer_norm(t.input(Array::vec({1, 2, 3})), t.input(Array::vec({1, 1, 1})),
                             t.input(Array::vec({0, 0, 0})), 0.0);
    // direct arithmetic: mean 2, population variance 2/3
    double inv = 1.0 / std::sqrt(2.0 / 3.0);
    CHECK(out.data().v[0] == doctest::Approx(-inv).epsilon(1e-9));
    CHECK(std::fabs(out.data().v[0] - (-1.224745)) < 1e-5);
    CHECK(out.data().v[1] == doctest::Approx(0.0));
    CHECK(std::fabs(out.data().v[2] - 1.224745) < 1e-5);
  }
  SUBCASE("constant input collapses to bias") {
    Tape t;
    Value out = t.layer_norm(t.input(Array::vec({5, 5, 5})), t.input(Array::vec({1, 1, 1})),
                             t.input(Array::vec({0, 0, 0})), 1e-5);
    for (double x : out.data().v) CHECK(x == 0.0);
  }
  SUBCASE("scaled and shifted") {
    Tape t;
    Value out = t.layer_norm(t.input(Array::vec({1, 2, 3})), t.input(Array::vec({2, 2, 2})),
                             t.input(Array::vec({1, 1, 1})), 0.0);
    CHECK(std::fabs(out.data().v[0] - (-1.449490)) < 1e-5);
    CHECK(out.data().v[1] == doctest::Approx(1.0));
    CHECK(std::fabs(out.data().v[2] - 3.449490) < 1e-5);
  }
}

TEST_CASE("softmax_rows basics") {
  Tape t;
  Array m(2, 2);
  m.at(0, 0) = 0.0;
  m.at(0, 1) = 0.0;
  m.at(1, 0) = std::log(2.0);
  m.at(1, 1) = 0.0;
  Value out = t.softmax_rows(t.input(m));
  CHECK(out.data().at(0, 0) == doctest::Approx(0.5));
  CHECK(out.data().at(1, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(out.data().at(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("softmax_rows rows sum to one, entries in [0,1], shift invariant") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    int n = 2 + static_cast<int>(rng.below(5));
    Array m(n, n), shifted(n, n);
    for (int r = 0; r < n; ++r) {
      double c = rng.uniform(-3, 3);
      for (int j = 0; j < n; ++j) {
        m.at(r, j) = rng.uniform(-5, 5);
        shifted.at(r, j) = m.at(r, j) + c;
      }
    }
    Tape t;
    Value a = t.softmax_rows(t.input(m));
    Value b = t.softmax_rows(t.input(shifted));
    for (int r = 0; r < n; ++r) {
      double s = 0;
      for (int j = 0; j < n; ++j) {
        double x = a.data().at(r, j);
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
        CHECK(x == doctest::Approx(b.data().at(r, j)).epsilon(1e-12));
        s += x;
      }
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("elementwise_linear examples and diagonal Jacobian") {
  Tape t;
  Value out = t.elementwise_linear(t.input(Array::vec({1, 2})), t.input(Array::vec({3, 4})),
                                   t.input(Array::vec({0, 1})));
  CHECK(out.data().v[0] == 3.0);
  CHECK(out.data().v[1] == 9.0);

  Tape t2;
  Value ident = t2.elementwise_linear(t2.input(Array::vec({-2, 0.5, 7})),
                                      t2.input(Array::vec({1, 1, 1})),
                                      t2.input(Array::vec({0, 0, 0})));
  CHECK(ident.data().v[0] == -2.0);
  CHECK(ident.data().v[1] == 0.5);
  CHECK(ident.data().v[2] == 7.0);

  // perturbing x_i moves only out_i
  Array x = Array::vec({0.3, -1.2, 2.0});
  Array w = Array::vec({1.5, -0.7, 0.2});
  Array b = Array::vec({0.1, 0.2, 0.3});
  Tape t3;
  Array base = t3.elementwise_linear(t3.input(x), t3.input(w), t3.input(b)).data();
  for (int i = 0; i < 3; ++i) {
    Array xp = x;
    xp.v[i] += 0.25;
    Tape t4;
    Array moved = t4.elementwise_linear(t4.input(xp), t4.input(w), t4.input(b)).data();
    for (int j = 0; j < 3; ++j) {
      if (j == i)
        CHECK(moved.v[j] != base.v[j]);
      else
        CHECK(moved.v[j] == base.v[j]);
    }
  }

  Tape t5;
  CHECK_THROWS_AS(t5.elementwise_linear(t5.input(Array::vec({1, 2})), t5.input(Array::vec({1})),
                                        t5.input(Array::vec({0}))),
                  ContractViolation);
}

TEST_CASE("bce_with_logits examples") {
  SUBCASE("zero logit, positive label") {
    Tape t;
    Array y = Array::vec({1});
    Value loss = t.bce_with_logits(t.input(Array::vec({0})), y);
    CHECK(loss.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("saturated logit") {
    Tape t;
    Array y = Array::vec({1});
    Value loss = t.bce_with_logits(t.input(Array::vec({40.0})), y);
    CHECK(loss.scalar() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("two-sample oracle") {
    // scalar oracle: log(1+e^-z) + (1-y) z per sample, averaged
    double expected = 0.5 * ((std::log(1 + std::exp(-0.5))) +
                             (std::log(1 + std::exp(0.5)) - 0.5));
    Tape t;
    Array y = Array::vec({1, 0});
    Value loss = t.bce_with_logits(t.input(Array::vec({0.5, -0.5})), y);
    CHECK(loss.scalar() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::fabs(loss.scalar() - 0.474077) < 1e-5);
  }
  SUBCASE("labels must be binary") {
    Tape t;
    Array y = Array::vec({0.5});
    CHECK_THROWS_AS(t.bce_with_logits(t.input(Array::vec({0.0})), y), ContractViolation);
  }
}

TEST_CASE("mse examples") {
  Tape t;
  Array target = Array::vec({0, 0});
  CHECK(t.mse(t.input(Array::vec({1, 2})), target).scalar() == doctest::Approx(2.5));
  Array same = Array::vec({3, -1});
  CHECK(t.mse(t.input(Array::vec({3, -1})), same).scalar() == 0.0);
  Array one = Array::vec({1});
  CHECK(t.mse(t.input(Array::vec({3})), one).scalar() == doctest::Approx(4.0));
  Array empty(0, 1);
  CHECK_THROWS_AS(t.mse(t.input(Array(0, 1)), empty), ContractViolation);
}

TEST_CASE("backward basics") {
  SUBCASE("product rule") {
    Param w("w", Array::vec({2.0}));
    Tape t;
    Value root = t.sum(t.mul(t.param(w), t.input(Array::vec({3.0}))));
    t.backward(root);
    CHECK(w.grad.v[0] == 3.0);
  }
  SUBCASE("repeat backward accumulates exactly") {
    Param w("w", Array::vec({2.0}));
    Tape t;
    Value root = t.sum(t.mul(t.param(w), t.input(Array::vec({3.0}))));
    t.backward(root);
    t.backward(root);
    CHECK(w.grad.v[0] == 6.0);
    CHECK(root.grad().v[0] == 2.0);
  }
  SUBCASE("non-scalar root rejected") {
    Tape t;
    Value v = t.input(Array::vec({1, 2}));
    CHECK_THROWS_AS(t.backward(v), ContractViolation);
  }
  SUBCASE("deterministic gradients") {
    auto run = [] {
      Param w("w", Array::vec({0.3, -0.4, 1.7}));
      Tape t;
      Value x = t.param(w);
      Value eln = t.layer_norm(x, t.input(Array::vec({1, 1, 1})), t.input(Array::vec({0, 0, 0})),
                               1e-5);
      Value a = t.softmax_rows(t.scaled_self_outer(eln, std::sqrt(3.0)));
      t.backward(t.sum(t.mul(t.matvec(a, eln), t.gelu(x))));
      return w.grad.v;
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(g1 == g2);  // bitwise
  }
}

namespace {

// finite-difference harness for a scalar function of one Param
double fd_check_max_rel(Param& p, const std::function<double()>& eval_with_grad, double h) {
  auto report = diff::grad_check(eval_with_grad, std::vector<Param*>{&p}, h);
  return report.max_rel_err;
}

}  // namespace

TEST_CASE("every primitive passes a finite-difference check") {
  Rng rng(1234);
  auto random_param = [&](const char* name, int n) {
    Param p(name, Array::zeros(n));
    for (auto& x : p.value.v) x = rng.uniform(-1.2, 1.2);
    return p;
  };

  SUBCASE("gelu") {
    Param p = random_param("p", 5);
    CHECK(fd_check_max_rel(p, [&] {
            Tape t;
            Value root = t.sum(t.gelu(t.param(p)));
            t.backward(root);
            return root.scalar();
          }, 1e-5) < 1e-6);
  }
  SUBCASE("layer_norm") {
    Param p = random_param("p", 6);
    Param w = random_param("w", 6);
    Param b = random_param("b", 6);
    auto eval = [&] {
      Tape t;
      Value out = t.layer_norm(t.param(p), t.param(w), t.param(b), 1e-5);
      Value root = t.sum(t.mul(out, t.gelu(out)));
      t.backward(root);
      return root.scalar();
    };
    auto rep = diff::grad_check(eval, std::vector<Param*>{&p, &w, &b}, 1e-5);
    CHECK(rep.max_rel_err < 1e-6);
  }
  SUBCASE("sen_layer_norm") {
    Param p = random_param("p", 7);  // 5 base slots + 2 augmented
    Param w = random_param("w", 5);
    Param b = random_param("b", 5);
    auto eval = [&] {
      Tape t;
      Value out = t.sen_layer_norm(t.param(p), t.param(w), t.param(b), 1e-5, 5, 2);
      Value root = t.sum(t.mul(out, out));
      t.backward(root);
      return root.scalar();
    };
    auto rep = diff::grad_check(eval, std::vector<Param*>{&p, &w, &b}, 1e-5);
    CHECK(rep.max_rel_err < 1e-6);
  }
  SUBCASE("sen_elementwise_linear") {
    Param p = random_param("p", 7);
    Param w = random_param("w", 5);
    Param b = random_param("b", 5);
    auto eval = [&] {
      Tape t;
      Value out = t.sen_elementwise_linear(t.param(p), t.param(w), t.param(b), 5, 3);
      Value root = t.sum(t.gelu(out));
      t.backward(root);
      return root.scalar();
    };
    auto rep = diff::grad_check(eval, std::vector<Param*>{&p, &w, &b}, 1e-5);
    CHECK(rep.max_rel_err < 1e-6);
  }
  SUBCASE("softmax over self-outer scores with matvec") {
    Param p = random_param("p", 4);
    CHECK(fd_check_max_rel(p, [&] {
            Tape t;
            Value e = t.param(p);
            Value a = t.softmax_rows(t.scaled_self_outer(e, 2.0));
            Value root = t.sum(t.mul(t.matvec(a, e), t.matvec(a, e)));
            t.backward(root);
            return root.scalar();
          }, 1e-5) < 1e-5);
  }
  SUBCASE("affine head") {
    Param w("w", Array(3, 4));
    Param x("x", Array::zeros(4));
    Param b("b", Array::zeros(3));
    for (auto& v : w.value.v) v = rng.uniform(-1, 1);
    for (auto& v : x.value.v) v = rng.uniform(-1, 1);
    for (auto& v : b.value.v) v = rng.uniform(-1, 1);
    auto eval = [&] {
      Tape t;
      Value out = t.affine(t.param(w), t.param(x), t.param(b));
      Value root = t.sum(t.gelu(out));
      t.backward(root);
      return root.scalar();
    };
    auto rep = diff::grad_check(eval, std::vector<Param*>{&w, &x, &b}, 1e-5);
    CHECK(rep.max_rel_err < 1e-6);
  }
  SUBCASE("cat_linear with slicing, concat, interleave, stack") {
    Param act = random_param("act", 6);
    Param w = random_param("w", 6);
    Param b = random_param("b", 2);
    const std::vector<int> offsets = {0, 4, 6};
    const std::vector<int> from_a = {0, -1, 1};
    const std::vector<int> from_b = {-1, 0, -1};
    auto eval = [&] {
      Tape t;
      Value lin = t.cat_linear(t.gelu(t.param(act)), t.param(w), t.param(b), offsets);
      Value extra = t.slice(t.param(act), 1, 1);
      Value inter = t.interleave(lin, extra, from_a, from_b);
      Value parts[2] = {inter, lin};
      Value cat = t.concat(parts);
      Value pieces[2] = {t.sum(cat), t.sum(t.mul(inter, inter))};
      Value root = t.sum(t.stack_scalars(pieces));
      t.backward(root);
      return root.scalar();
    };
    auto rep = diff::grad_check(eval, std::vector<Param*>{&act, &w, &b}, 1e-5);
    CHECK(rep.max_rel_err < 1e-6);
  }
  SUBCASE("losses") {
    Param z = random_param("z", 6);
    Array labels = Array::vec({1, 0, 1, 1, 0, 0});
    CHECK(fd_check_max_rel(z, [&] {
            Tape t;
            Value root = t.bce_with_logits(t.param(z), labels);
            t.backward(root);
            return root.scalar();
          }, 1e-5) < 1e-6);
    Param q = random_param("q", 6);
    Array target = Array::vec({0.5, -1, 0, 2, 1, -0.5});
    CHECK(fd_check_max_rel(q, [&] {
            Tape t;
            Value root = t.mse(t.param(q), target);
            t.backward(root);
            return root.scalar();
          }, 1e-5) < 1e-6);
  }
  SUBCASE("column_segment") {
    Param p = random_param("p", 4);
    CHECK(fd_check_max_rel(p, [&] {
            Tape t;
            Value s = t.scaled_self_outer(t.param(p), 1.5);
            Value col = t.column_segment(s, 2, 0, 4);
            Value root = t.sum(t.mul(col, col));
            t.backward(root);
            return root.scalar();
          }, 1e-5) < 1e-5);
  }
}

TEST_CASE("grad_check contract") {
  SUBCASE("linear model is exact") {
    Param w("w", Array::vec({1.0, -2.0, 0.5}));
    auto eval = [&] {
      Tape t;
      Value root = t.sum(t.mul(t.param(w), t.input(Array::vec({3, 1, -4}))));
      t.backward(root);
      return root.scalar();
    };
    auto rep = diff::grad_check(eval, std::vector<Param*>{&w}, 1e-5);
    CHECK(rep.max_rel_err <= 1e-9);
    CHECK(rep.worst_param == "w");
  }
  SUBCASE("zero parameters gives an empty report") {
    auto rep = diff::grad_check([] { return 1.0; }, std::vector<Param*>{}, 1e-5);
    CHECK(rep.per_param.empty());
    CHECK(rep.max_rel_err == 0.0);
  }
  SUBCASE("non-deterministic evaluation is rejected") {
    Param w("w", Array::vec({1.0}));
    int calls = 0;
    auto eval = [&] {
      ++calls;
      Tape t;
      Value root = t.sum(t.scale(t.param(w), 1.0 + calls * 0.1));
      t.backward(root);
      return root.scalar();
    };
    CHECK_THROWS_AS(diff::grad_check(eval, std::vector<Param*>{&w}, 1e-5), NumericError);
  }
}

TEST_CASE("scaled_self_outer output is exactly symmetric") {
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    int n = 2 + static_cast<int>(rng.below(6));
    Array e(n, 1);
    for (auto& x : e.v) x = rng.uniform(-4, 4);
    Tape t;
    Value s = t.scaled_self_outer(t.input(e), std::sqrt(static_cast<double>(n)));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) CHECK(s.data().at(i, j) == s.data().at(j, i));
  }
}
