// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <string>

#include "cme/errors.hpp"
#include "cme/kernels.hpp"
#include "cme/rng.hpp"
#include "cme/tape.hpp"
#include "cme/tensor.hpp"
#include "oracles.hpp"

using namespace cme;

namespace {

Tensor2D random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor2D t(r, c);
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

Tensor2D matmul_value(const Tensor2D& a, const Tensor2D& b) {
  GradTape tape;
  return matmul(tape.constant(a), tape.constant(b)).value();
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul by identity returns the operand") {
  const Tensor2D x = Tensor2D::from_rows({{1.5, -2.0, 3.0}, {0.25, 4.0, -1.0}});
  const Tensor2D eye = Tensor2D::from_rows({{1, 0}, {0, 1}});
  CHECK(matmul_value(eye, x) == x);
}

TEST_CASE("matmul hand example") {
  const Tensor2D out = matmul_value(Tensor2D::from_rows({{1, 2}}), Tensor2D::from_rows({{3}, {4}}));
  CHECK(out.rows() == 1);
  CHECK(out.cols() == 1);
  CHECK(out(0, 0) == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  GradTape tape;
  auto a = tape.constant(Tensor2D(2, 3));
  auto b = tape.constant(Tensor2D(2, 3));
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("2x3", msg.find("2x3") + 1) != std::string::npos);
  }
}

TEST_CASE("matmul backward") {
  GradTape tape;
  Var a = tape.variable(Tensor2D::scalar(2.0));
  Var b = tape.variable(Tensor2D::scalar(3.0));
  tape.backward(matmul(a, b));
  CHECK(tape.grad(a).item() == doctest::Approx(3.0));
  CHECK(tape.grad(b).item() == doctest::Approx(2.0));
}

TEST_CASE("softmax rows") {
  GradTape tape;
  auto p = softmax_rows(tape.constant(Tensor2D::from_rows({{0, 0}, {1000, 0}, {1, 2}}))).value();
  CHECK(p(0, 0) == 0.5);
  CHECK(p(0, 1) == 0.5);
  CHECK(std::isfinite(p(1, 0)));
  CHECK(p(1, 0) == doctest::Approx(1.0));
  CHECK(p(1, 1) == doctest::Approx(0.0));

  auto q = softmax_rows(tape.constant(Tensor2D::from_rows({{1, 2, 3}}))).value();
  const auto ref = oracle::softmax({1, 2, 3});
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::fabs(q(0, j) - ref[j]) < 1e-12);
  CHECK(std::fabs(q(0, 0) - 0.0900) < 1e-4);
  CHECK(std::fabs(q(0, 1) - 0.2447) < 1e-4);
  CHECK(std::fabs(q(0, 2) - 0.6652) < 1e-4);
}

TEST_CASE("softmax rows sum to one and ignore row shifts") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor2D x = random_tensor(4, 7, rng, 20.0);
    Tensor2D shifted = x;
    for (std::size_t r = 0; r < 4; ++r) {
      const double c = rng.uniform(-50, 50);
      for (std::size_t j = 0; j < 7; ++j) shifted(r, j) += c;
    }
    GradTape tape;
    auto p = softmax_rows(tape.constant(x)).value();
    auto q = softmax_rows(tape.constant(shifted)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        s += p(r, j);
        CHECK(std::fabs(p(r, j) - q(r, j)) < 1e-9);
      }
      CHECK(std::fabs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("masked softmax columns are exactly zero") {
  GradTape tape;
  auto p = softmax_rows(tape.constant(Tensor2D::from_rows({{1, 5, 2}})), {1, 0, 1}).value();
  CHECK(p(0, 1) == 0.0);
  CHECK(p(0, 0) + p(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("sum of a parameter vector has all-ones gradient") {
  GradTape tape;
  Var p = tape.variable(Tensor2D(1, 5, 0.3));
  tape.backward(sum(p));
  const Tensor2D g = tape.grad(p);
  for (double v : g.data()) CHECK(v == 1.0);
}

TEST_CASE("squared error gradient") {
  // loss = (w*x - y)^2 at w=1, x=2, y=0
  GradTape tape;
  Var w = tape.variable(Tensor2D::scalar(1.0));
  Var x = tape.constant(Tensor2D::scalar(2.0));
  Var y = tape.constant(Tensor2D::scalar(0.0));
  tape.backward(square(sub(mul(w, x), y)));
  CHECK(tape.grad(w).item() == doctest::Approx(8.0));
  auto f = [](const std::vector<double>& v) { return (v[0] * 2.0) * (v[0] * 2.0); };
  CHECK(oracle::central_difference(f, {1.0}, 0) == doctest::Approx(8.0).epsilon(1e-8));
}

TEST_CASE("backward on a non-scalar is a contract error") {
  GradTape tape;
  Var v = tape.variable(Tensor2D(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(v), ContractError);
}

TEST_CASE("consumed tape rejects a second backward; retain allows replay") {
  GradTape tape;
  Var v = tape.variable(Tensor2D::from_rows({{0.3, -0.7}}));
  Var l = sum(square(tanh(v)));
  tape.backward(l, true);
  const Tensor2D g1 = tape.grad(v);
  tape.backward(l, true);
  CHECK(tape.grad(v) == g1);
  tape.backward(l);
  CHECK_THROWS_AS(tape.backward(l), ContractError);
}

TEST_CASE("random composed graphs match central finite differences") {
  Rng rng(2024);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<Tensor2D> inputs = {random_tensor(3, 4, rng), random_tensor(4, 5, rng),
                                    random_tensor(1, 5, rng), random_tensor(1, 5, rng),
                                    random_tensor(1, 5, rng)};
    Tensor2D target(1, 5, 0.0);
    target(0, static_cast<std::size_t>(trial % 5)) = 1.0;
    const Tensor2D weights = random_tensor(3, 10, rng);

    auto build = [&](GradTape& tape, std::vector<Var>& v) {
      v.clear();
      for (const auto& t : inputs) v.push_back(tape.variable(t));
      Var h = tanh(add_row_bias(matmul(v[0], v[1]), v[2]));
      Var n = layer_norm(h, v[3], v[4]);
      Var att = softmax_rows(matmul(n, transpose(n)), {1, 1, 0});
      Var mixed = matmul(att, n);
      Var ce = softmax_cross_entropy(slice_rows(mixed, 0, 1), target);
      Var extra = mul(l2_norm(abs(slice_cols(mixed, 1, 3))), element(relu(n), 1, 2));
      const std::vector<Var> parts = {scale(n, 0.7), add_scalar(h, 0.3)};
      Var cat = sum(mul_const(concat_cols(parts), weights));
      return add(add(ce, cat), add(extra, sum(square(gather_cols(gather_rows(n, {2, 0}), {4, 1})))));
    };

    GradTape tape;
    std::vector<Var> vars;
    tape.backward(build(tape, vars));
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const Tensor2D analytic = tape.grad(vars[k]);
      const Tensor2D base = inputs[k];
      std::vector<double> flat(base.data().begin(), base.data().end());
      auto f = [&](const std::vector<double>& x) {
        std::copy(x.begin(), x.end(), inputs[k].data().begin());
        GradTape t2;
        std::vector<Var> v2;
        const double out = build(t2, v2).value().item();
        inputs[k] = base;
        return out;
      };
      for (std::size_t i = 0; i < flat.size(); ++i) {
        const double fd = oracle::central_difference(f, flat, i);
        CHECK_MESSAGE(oracle::grad_close(analytic.data()[i], fd), "input ", k, " index ", i,
                      " analytic ", analytic.data()[i], " fd ", fd);
      }
    }
  }
}

TEST_CASE("serial and OpenMP gemm agree bitwise") {
  Rng rng(5);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const Tensor2D a = ta ? random_tensor(70, 90, rng) : random_tensor(90, 70, rng);
      const Tensor2D b = tb ? random_tensor(50, 70, rng) : random_tensor(70, 50, rng);
      Tensor2D c1(90, 50, 0.5), c2(90, 50, 0.5);
      kernels::gemm_serial(ta, tb, a, b, c1, true);
      kernels::gemm_openmp(ta, tb, a, b, c2, true);
      CHECK(c1 == c2);
    }
  }
}

TEST_CASE("serial and OpenMP softmax agree bitwise") {
  Rng rng(6);
  const Tensor2D x = random_tensor(200, 33, rng, 30.0);
  std::vector<unsigned char> mask(33, 1);
  mask[3] = 0;
  mask[17] = 0;
  Tensor2D a(200, 33), b(200, 33);
  kernels::softmax_rows_serial(x, mask, a);
  kernels::softmax_rows_openmp(x, mask, b);
  CHECK(a == b);
}

}  // TEST_SUITE
