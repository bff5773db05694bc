#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "tebi/gradcheck.hpp"
#include "tebi/graph.hpp"

using namespace tebi;

TEST_CASE("matmul by identity returns the input") {
  Graph g;
  Tensor I(2, 2, {1, 0, 0, 1});
  Tensor M(2, 3, {1, 2, 3, 4, 5, 6});
  auto y = g.matmul(g.constant(I), g.constant(M));
  for (size_t i = 0; i < M.size(); ++i) CHECK(g.value(y).data[i] == M.data[i]);
}

TEST_CASE("softmax of a constant row is uniform and rows sum to one") {
  Graph g;
  auto y = g.softmax_rows(g.constant(Tensor(1, 3)));
  for (double v : g.value(y).data) CHECK(v == Catch::Approx(1.0 / 3).margin(1e-15));

  std::mt19937_64 rng(7);
  Tensor x = Tensor::randn(5, 9, rng, 3.0);
  auto z = g.softmax_rows(g.constant(x));
  for (int i = 0; i < 5; ++i) {
    double s = 0;
    for (int j = 0; j < 9; ++j) s += g.value(z).at(i, j);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("cross entropy of uniform two-class logits is ln 2") {
  Graph g;
  auto y = g.cross_entropy(g.constant(Tensor(1, 2)), {0});
  CHECK(g.value(y).data[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("rms_norm output has unit root-mean-square per row") {
  Graph g;
  std::mt19937_64 rng(3);
  Tensor x = Tensor::randn(4, 16, rng, 2.0);
  auto y = g.rms_norm(g.constant(x));
  for (int i = 0; i < 4; ++i) {
    double ms = 0;
    for (int j = 0; j < 16; ++j) ms += g.value(y).at(i, j) * g.value(y).at(i, j);
    CHECK(std::abs(std::sqrt(ms / 16) - 1.0) <= 1e-10);
  }
}

TEST_CASE("shape mismatches are rejected with the offending shapes named") {
  Graph g;
  auto a = g.constant(Tensor(2, 3));
  auto b = g.constant(Tensor(4, 5));
  CHECK_THROWS_WITH(g.matmul(a, b), Catch::Matchers::ContainsSubstring("2x3") &&
                                        Catch::Matchers::ContainsSubstring("4x5"));
  CHECK_THROWS_WITH(g.add(a, b), Catch::Matchers::ContainsSubstring("2x3") &&
                                     Catch::Matchers::ContainsSubstring("4x5"));
  CHECK_THROWS_AS(g.cross_entropy(a, {0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(g.embed(a, {2}), std::invalid_argument);
}

TEST_CASE("backward of x*x at 3 gives 6 and unreachable leaves get zero") {
  Parameter x("x", Tensor::scalar(3.0));
  Parameter unused("unused", Tensor::scalar(1.0));
  Graph g;
  auto xv = g.leaf(x);
  g.leaf(unused);
  auto loss = g.mul(xv, xv);
  x.zero_grad();
  unused.zero_grad();
  g.backward(loss);
  CHECK(x.grad.data[0] == Catch::Approx(6.0));
  CHECK(unused.grad.data[0] == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Graph g;
  auto y = g.constant(Tensor(2, 2));
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("backward leaves forward values unchanged") {
  Parameter x("x", Tensor(1, 4, {1, 2, 3, 4}));
  Graph g;
  auto y = g.softmax_rows(g.tanh(g.leaf(x)));
  auto loss = g.mean(y);
  Tensor before = g.value(y);
  x.zero_grad();
  g.backward(loss);
  for (size_t i = 0; i < before.size(); ++i) CHECK(g.value(y).data[i] == before.data[i]);
}

TEST_CASE("softmax-based loss gradient matches central finite differences") {
  std::mt19937_64 rng(0);
  std::vector<Parameter> ps = {Parameter("x", Tensor::randn(3, 4, rng))};
  auto rep = grad_check(
      [](Graph& g, std::vector<Parameter>& p) {
        Tensor onehot(3, 4);
        onehot.at(0, 1) = onehot.at(1, 2) = onehot.at(2, 0) = 1.0;
        return g.mean(g.mul(g.softmax_rows(g.leaf(p[0])), g.constant(onehot)));
      },
      ps, 1e-8);
  CHECK(rep.pass);
}

TEST_CASE("sum of squares gradient is 2x and FD agrees") {
  std::vector<Parameter> ps = {Parameter("x", Tensor(1, 3, {1, 2, 3}))};
  auto rep = grad_check(
      [](Graph& g, std::vector<Parameter>& p) {
        auto x = g.leaf(p[0]);
        return g.scale(g.mean(g.mul(x, x)), 3.0);
      },
      ps, 1e-8);
  CHECK(rep.pass);
  CHECK(ps[0].grad.data[0] == Catch::Approx(2.0).margin(1e-9));
  CHECK(ps[0].grad.data[1] == Catch::Approx(4.0).margin(1e-9));
  CHECK(ps[0].grad.data[2] == Catch::Approx(6.0).margin(1e-9));
}

TEST_CASE("every primitive passes the gradient check", "[gradients]") {
  std::mt19937_64 rng(11);
  auto check = [&](auto&& builder, int r, int c) {
    std::vector<Parameter> ps = {Parameter("x", Tensor::randn(r, c, rng, 0.7)),
                                 Parameter("y", Tensor::randn(r, c, rng, 0.7))};
    auto rep = grad_check(builder, ps, 1e-5);
    CHECK(rep.max_rel_err <= 1e-5);
  };
  check([](Graph& g, std::vector<Parameter>& p) { return g.mean(g.tanh(g.leaf(p[0]))); }, 3, 5);
  check([](Graph& g, std::vector<Parameter>& p) { return g.mean(g.sigmoid(g.leaf(p[0]))); }, 3,
        5);
  check([](Graph& g, std::vector<Parameter>& p) { return g.mean(g.gelu(g.leaf(p[0]))); }, 3, 5);
  check([](Graph& g, std::vector<Parameter>& p) {
    return g.mean(g.mul(g.leaf(p[0]), g.leaf(p[1])));
  }, 4, 4);
  check([](Graph& g, std::vector<Parameter>& p) {
    return g.mean(g.matmul(g.leaf(p[0]), g.transpose(g.leaf(p[1]))));
  }, 3, 6);
  check([](Graph& g, std::vector<Parameter>& p) {
    return g.mean(g.rms_norm(g.concat_cols({g.leaf(p[0]), g.leaf(p[1])})));
  }, 2, 5);
  check([](Graph& g, std::vector<Parameter>& p) {
    return g.cross_entropy(g.concat_rows({g.leaf(p[0]), g.leaf(p[1])}), {0, 2, 4, 1, -1, 3});
  }, 3, 5);
  check([](Graph& g, std::vector<Parameter>& p) {
    return g.mean(g.scalar_mul(g.mean(g.leaf(p[0])), g.leaf(p[1])));
  }, 2, 3);
}

TEST_CASE("row_scale and embed gradients match finite differences") {
  std::mt19937_64 rng(13);
  {
    std::vector<Parameter> ps = {Parameter("a", Tensor::randn(4, 6, rng)),
                                 Parameter("s", Tensor::randn(1, 6, rng))};
    auto rep = grad_check(
        [](Graph& g, std::vector<Parameter>& p) {
          return g.mean(g.row_scale(g.leaf(p[0]), g.leaf(p[1])));
        },
        ps, 1e-5);
    CHECK(rep.pass);
  }
  {
    std::vector<Parameter> ps = {Parameter("table", Tensor::randn(6, 3, rng))};
    auto rep = grad_check(
        [](Graph& g, std::vector<Parameter>& p) {
          return g.mean(g.tanh(g.embed(g.leaf(p[0]), {0, 5, 0, 2})));
        },
        ps, 1e-5);
    CHECK(rep.pass);
  }
}
