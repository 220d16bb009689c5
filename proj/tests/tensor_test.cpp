#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mixupe/tensor.hpp"
#include "support/test_support.hpp"

using namespace mixupe;
using mixupe::testing::fd_gradient;
using mixupe::testing::max_grad_rel_err;
using mixupe::testing::random_tensor;

TEST_SUITE("tensor") {
  TEST_CASE("matmul identity and hand arithmetic") {
    Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
    Tensor v = Tensor::from_rows({{2}, {3}});
    Tensor out = matmul(eye, v);
    CHECK(out.at(0, 0) == 2.0);
    CHECK(out.at(1, 0) == 3.0);

    Tensor a = Tensor::from_rows({{1, 2}});
    Tensor b = Tensor::from_rows({{3}, {4}});
    CHECK(matmul(a, b).value() == 11.0);
  }

  TEST_CASE("matmul shape error names both shapes") {
    Tensor a = Tensor::zeros(2, 3);
    Tensor b = Tensor::zeros(2, 2);
    CHECK_THROWS_WITH_AS(matmul(a, b),
                         doctest::Contains("2x3"), ShapeError);
  }

  TEST_CASE("matmul gradient matches closed form and finite differences") {
    Rng rng(7);
    Tensor a = random_tensor(rng, 3, 4, true);
    Tensor b = random_tensor(rng, 4, 2, false);

    Tensor root = sum(matmul(a, b));
    backward(root);

    // d sum(a b) / d a[i,p] = sum_j b[p, j]
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t p = 0; p < 4; ++p) {
        double want = 0.0;
        for (std::size_t j = 0; j < 2; ++j) want += b.at(p, j);
        CHECK(mixupe::testing::rel_err(a.grad()[i * 4 + p], want) < 1e-12);
      }

    auto eval = [&]() { return sum(matmul(a, b)).value(); };
    const auto fd = fd_gradient(eval, a);
    CHECK(max_grad_rel_err(a.grad(), fd) < 1e-6);
  }

  TEST_CASE("matmul_nt equals matmul against the transposed operand") {
    Rng rng(8);
    Tensor a = random_tensor(rng, 3, 5);
    Tensor b = random_tensor(rng, 2, 5);
    Tensor bt = Tensor::zeros(5, 2);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        bt.data_mut()[j * 2 + i] = b.at(i, j);
    Tensor lhs = matmul_nt(a, b);
    Tensor rhs = matmul(a, bt);
    for (std::size_t i = 0; i < lhs.size(); ++i)
      CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-14));
  }

  TEST_CASE("relu and abs with kink subgradient 0") {
    Tensor x = Tensor::from_rows({{-1, 0, 2}});
    Tensor r = relu(x);
    CHECK(r.at(0, 0) == 0.0);
    CHECK(r.at(0, 1) == 0.0);
    CHECK(r.at(0, 2) == 2.0);

    Tensor y = Tensor::from_rows({{-3, 3}}, true);
    Tensor root = sum(abs(y));
    CHECK(abs(y).at(0, 0) == 3.0);
    CHECK(abs(y).at(0, 1) == 3.0);
    backward(root);
    CHECK(y.grad()[0] == -1.0);
    CHECK(y.grad()[1] == 1.0);

    Tensor z = Tensor::from_rows({{0.0}}, true);
    Tensor root2 = sum(abs(z));
    backward(root2);
    CHECK(z.grad()[0] == 0.0);
  }

  TEST_CASE("elementwise gradients match finite differences") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor(rng, 2, 3, true);
      auto build = [&](const Tensor& t) {
        return sum(mul(tanh(t), softplus(t)));
      };
      Tensor root = build(x);
      backward(root);
      auto eval = [&]() { return build(x).value(); };
      CHECK(max_grad_rel_err(x.grad(), fd_gradient(eval, x)) < 1e-6);
    }
  }

  TEST_CASE("broadcast add of a row vector") {
    Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
    Tensor b = Tensor::from_rows({{10, 20}}, true);
    Tensor out = add(m, b);
    CHECK(out.at(1, 0) == 13.0);
    backward(sum(out));
    CHECK(b.grad()[0] == 2.0);  // summed over rows
    CHECK(b.grad()[1] == 2.0);
  }

  TEST_CASE("broadcast rejects column vectors") {
    Tensor m = Tensor::zeros(2, 3);
    Tensor c = Tensor::zeros(2, 1);
    CHECK_THROWS_AS(add(m, c), ShapeError);
  }

  TEST_CASE("log_sum_exp stable values") {
    Tensor a = Tensor::from_rows({{0, 0}});
    CHECK(log_sum_exp_rows(a).value() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));

    Tensor big = Tensor::from_rows({{1000, 1000}});
    CHECK(log_sum_exp_rows(big).value() ==
          doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  }

  TEST_CASE("log_sum_exp gradient is softmax") {
    Tensor a = Tensor::from_rows({{1, 0}}, true);
    backward(sum(log_sum_exp_rows(a)));
    CHECK(a.grad()[0] == doctest::Approx(0.731059).epsilon(1e-5));
    CHECK(a.grad()[1] == doctest::Approx(0.268941).epsilon(1e-5));

    Tensor b = Tensor::from_rows({{0.3, -1.2, 0.8}}, true);
    backward(sum(log_sum_exp_rows(b)));
    auto eval = [&]() { return sum(log_sum_exp_rows(b)).value(); };
    CHECK(max_grad_rel_err(b.grad(), fd_gradient(eval, b)) < 1e-6);
  }

  TEST_CASE("softmax rows gradient") {
    Rng rng(13);
    Tensor a = random_tensor(rng, 3, 4, true);
    Tensor w = random_tensor(rng, 3, 4);
    auto build = [&]() { return sum(mul(softmax_rows(a), w)); };
    Tensor root = build();
    backward(root);
    auto eval = [&]() { return build().value(); };
    CHECK(max_grad_rel_err(a.grad(), fd_gradient(eval, a)) < 1e-6);
  }

  TEST_CASE("exp overflow raises a non-finite error naming the op") {
    Tensor a = Tensor::from_rows({{1000.0}});
    CHECK_THROWS_WITH_AS(exp(a), doctest::Contains("exp"), NonFiniteError);
    Tensor z = Tensor::from_rows({{0.0}});
    CHECK_THROWS_WITH_AS(log(z), doctest::Contains("log"), NonFiniteError);
  }

  TEST_CASE("backward on a quadratic") {
    Tensor theta = Tensor::from_rows({{1, 2}}, true);
    backward(sum(mul(theta, theta)));
    CHECK(theta.grad()[0] == 2.0);
    CHECK(theta.grad()[1] == 4.0);
  }

  TEST_CASE("backward twice without rebuilding is an error") {
    Tensor theta = Tensor::from_rows({{1, 2}}, true);
    Tensor root = sum(mul(theta, theta));
    backward(root);
    CHECK_THROWS_AS(backward(root), AutogradError);
  }

  TEST_CASE("backward requires a scalar root") {
    Tensor theta = Tensor::from_rows({{1, 2}}, true);
    Tensor out = mul(theta, theta);
    CHECK_THROWS_AS(backward(out), AutogradError);
  }

  TEST_CASE("constant root is a no-op") {
    Tensor c = Tensor::from_rows({{1, 2}});
    Tensor root = sum(mul(c, c));
    CHECK_NOTHROW(backward(root));
    CHECK_FALSE(c.has_grad());
  }

  TEST_CASE("reused node accumulates both paths") {
    Tensor x = Tensor::from_rows({{0.5, -1.5}}, true);
    // f = sum(x*x + x); df/dx = 2x + 1
    Tensor root = sum(add(mul(x, x), x));
    backward(root);
    CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(x.grad()[1] == doctest::Approx(-2.0).epsilon(1e-15));
  }

  TEST_CASE("2-layer tanh MLP mean squared error gradient vs FD") {
    Rng rng(17);
    Tensor w1 = random_tensor(rng, 5, 3, true, 0.6);
    Tensor w2 = random_tensor(rng, 2, 5, true, 0.6);
    Tensor x = random_tensor(rng, 4, 3);
    Tensor target = random_tensor(rng, 4, 2);

    auto build = [&]() {
      Tensor h = tanh(matmul_nt(x, w1));
      Tensor out = matmul_nt(h, w2);
      Tensor diff = sub(out, target);
      return scale(sum(mul(diff, diff)), 1.0 / 4.0);
    };
    Tensor root = build();
    backward(root);
    auto eval = [&]() { return build().value(); };
    CHECK(max_grad_rel_err(w1.grad(), fd_gradient(eval, w1)) < 1e-4);
    CHECK(max_grad_rel_err(w2.grad(), fd_gradient(eval, w2)) < 1e-4);
  }

  TEST_CASE("property: composite loss gradients match FD over many seeds") {
    // Gradient correctness sweep for the full op set in one composite.
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      Tensor w = random_tensor(rng, 3, 4, true, 0.7);
      Tensor x = random_tensor(rng, 2, 4);
      Tensor y = mixupe::testing::random_onehot(rng, 2, 3);
      auto build = [&]() {
        Tensor logits = matmul_nt(x, w);
        Tensor ce = sub(sum(log_sum_exp_rows(logits)),
                        sum(mul(y, logits)));
        Tensor extra = sum(abs(row_sum(mul(softmax_rows(logits), logits))));
        return add(scale(ce, 0.5), scale(extra, 0.25));
      };
      Tensor root = build();
      backward(root);
      auto eval = [&]() { return build().value(); };
      CHECK(max_grad_rel_err(w.grad(), fd_gradient(eval, w)) < 1e-4);
    }
  }

  TEST_CASE("determinism: same seed, same op sequence, identical bits") {
    auto run = [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor a = random_tensor(rng, 3, 3, true);
      Tensor b = random_tensor(rng, 3, 3);
      Tensor root = sum(mul(tanh(matmul(a, b)), a));
      backward(root);
      return std::make_pair(root.value(), a.grad());
    };
    auto [v1, g1] = run(123);
    auto [v2, g2] = run(123);
    CHECK(v1 == v2);
    CHECK(g1 == g2);
  }

  TEST_CASE("jacobian of a linear map is the matrix itself") {
    Rng rng(19);
    Tensor w = random_tensor(rng, 3, 4);
    auto f = [&](const Tensor& in) { return matmul_nt(in, w); };
    Tensor x = random_tensor(rng, 1, 4);
    Tensor jac = jacobian_rows(f, x);
    REQUIRE(jac.rows() == 3);
    REQUIRE(jac.cols() == 4);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(jac.at(i, j) == doctest::Approx(w.at(i, j)).epsilon(1e-12));
  }

  TEST_CASE("jacobian rows of a tanh net match finite differences") {
    Rng rng(29);
    Tensor w1 = random_tensor(rng, 5, 4, false, 0.6);
    Tensor w2 = random_tensor(rng, 3, 5, false, 0.6);
    auto f = [&](const Tensor& in) {
      return matmul_nt(tanh(matmul_nt(in, w1)), w2);
    };
    Tensor x = random_tensor(rng, 1, 4);
    Tensor jac = jacobian_rows(f, x);
    const double step = 1e-5;
    for (std::size_t c = 0; c < 4; ++c) {
      Tensor up = x.detached();
      Tensor down = x.detached();
      up.data_mut()[c] += step;
      down.data_mut()[c] -= step;
      Tensor fu = f(up);
      Tensor fd = f(down);
      for (std::size_t j = 0; j < 3; ++j) {
        const double want = (fu.at(0, j) - fd.at(0, j)) / (2 * step);
        CHECK(mixupe::testing::rel_err(jac.at(j, c), want) < 1e-4);
      }
    }
  }
}
