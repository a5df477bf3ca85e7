#include <doctest.h>

#include <cmath>
#include <random>

#include "vaetk/autodiff.hpp"
#include "vaetk/errors.hpp"
#include "vaetk/gradcheck.hpp"

using namespace vaetk;
using namespace vaetk::ad;

namespace {

Array random_array(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array a(std::move(shape));
  for (double& v : a.data()) v = u(rng);
  return a;
}

// Keeps entries away from 0 so relu/log/div stay smooth under perturbation.
Array away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  Array a(std::move(shape));
  for (double& v : a.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return a;
}

Shape random_shape(std::mt19937_64& rng, std::size_t max_rank = 3) {
  std::uniform_int_distribution<std::size_t> rank(1, max_rank), ext(1, 4);
  Shape s(rank(rng));
  for (auto& e : s) e = ext(rng);
  return s;
}

// Reduces any output to a scalar with non-uniform weights so every output
// element contributes a distinct gradient.
Var weighted_sum(Graph& g, Var y, std::mt19937_64& rng) {
  return sum(y * g.constant(random_array(y.shape(), rng, 0.5, 1.5)));
}

}  // namespace

TEST_CASE("forward examples") {
  Graph g;
  std::mt19937_64 rng(3);
  Var a = g.constant(random_array({3, 3}, rng));
  Var eye = g.constant(Array::identity(3));
  CHECK(matmul(eye, a).value() == a.value());

  Var x = g.constant(Array::vector({-1.0, 0.0, 2.0}));
  CHECK(relu(x).value() == Array::vector({0.0, 0.0, 2.0}));

  Var y = g.constant(Array::vector({2.5}));
  CHECK(exp(log(y)).value()[0] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("shape and domain errors") {
  Graph g;
  Var a = g.constant(Array(Shape{2, 3}, 1.0));
  Var b = g.constant(Array(Shape{4, 3}, 1.0));
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  CHECK_THROWS_AS(log(g.constant(Array::vector({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(log(g.constant(Array::vector({-2.0}))), DomainError);
  CHECK_THROWS_AS(div(a, g.constant(Array::vector({1.0, 0.0, 2.0}))), DomainError);
  CHECK_THROWS_AS(reshape(a, Shape{4}), DimensionError);
  CHECK_THROWS_AS(narrow(a, 1, 2, 2), DimensionError);
}

TEST_CASE("backward examples") {
  {
    Graph g;
    Var x = g.leaf(Array::vector({3.0}));
    auto grads = g.backward(sum(square(x)));
    CHECK(grads[x][0] == 6.0);
  }
  {
    Graph g;
    Var x = g.leaf(Array::vector({-1.0}));
    auto grads = g.backward(sum(relu(x)));
    CHECK(grads[x][0] == 0.0);
  }
  {
    // ReLU derivative at exactly zero is zero.
    Graph g;
    Var x = g.leaf(Array::vector({0.0}));
    CHECK(g.backward(sum(relu(x)))[x][0] == 0.0);
  }
}

TEST_CASE("non-scalar loss is rejected") {
  Graph g;
  Var x = g.leaf(Array::vector({1.0, 2.0}));
  CHECK_THROWS_AS(g.backward(square(x)), ContractError);
}

TEST_CASE("leaves outside the loss receive zero gradient") {
  Graph g;
  Var x = g.leaf(Array::vector({1.0, 2.0}));
  Var unused = g.leaf(Array(Shape{2, 2}, 5.0));
  auto grads = g.backward(sum(x));
  CHECK(grads[unused] == Array(Shape{2, 2}, 0.0));
  CHECK(grads[x] == Array::vector({1.0, 1.0}));
}

TEST_CASE("two-layer MLP gradients match central differences") {
  std::mt19937_64 rng(11);
  std::vector<Array> pts{random_array({5, 4}, rng), random_array({4, 6}, rng),
                         random_array({6}, rng), random_array({6, 3}, rng), random_array({3}, rng)};
  auto f = [](Graph&, std::span<const Var> v) {
    Var h = relu(matmul(v[0], v[1]) + v[2]);
    Var out = matmul(h, v[3]) + v[4];
    return mean(square(out));
  };
  auto res = finite_diff_check(f, pts, 1e-5);
  REQUIRE(res.checkable);
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("finite_diff_check examples") {
  auto quad = [](Graph&, Var x) { return sum(square(x)); };
  CHECK(finite_diff_check(quad, Array::vector({3.0}), 1e-5).max_rel_error < 1e-8);

  auto chain = [](Graph&, Var x) { return sum(exp(log(x)) * exp(x)); };
  CHECK(finite_diff_check(chain, Array::vector({0.7, 1.3, 2.0}), 1e-5).max_rel_error < 1e-6);

  auto kink = [](Graph&, Var x) { return sum(relu(x)); };
  CHECK_FALSE(finite_diff_check(kink, Array::vector({0.0, 1.0}), 1e-5).checkable);
  CHECK(finite_diff_check(kink, Array::vector({0.5, 1.0}), 1e-5).checkable);
  CHECK_THROWS_AS(finite_diff_check(quad, Array::vector({1.0}), 0.0), ContractError);
}

TEST_CASE("property: every op's gradient matches central differences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 12; ++trial) {
    CAPTURE(trial);
    const Shape s = random_shape(rng);
    const Shape s2 = random_shape(rng, 2);

    struct Case {
      const char* name;
      std::vector<Array> points;
      std::function<Var(Graph&, std::span<const Var>)> f;
    };
    std::uniform_int_distribution<std::size_t> ext(1, 4);
    const std::size_t m = ext(rng), k = ext(rng), n = ext(rng);
    // broadcast partner: trailing axis of s, or a size-1 leading axis
    Shape tail{s.back()};
    Array positive = random_array(s, rng, 0.3, 2.0);

    std::vector<Case> cases;
    cases.push_back({"add", {random_array(s, rng), random_array(tail, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, v[0] + v[1], rng); }});
    cases.push_back({"sub", {random_array(s, rng), random_array(s, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, v[0] - v[1], rng); }});
    cases.push_back({"mul", {random_array(s, rng), random_array(tail, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, v[0] * v[1], rng); }});
    cases.push_back({"div", {random_array(s, rng), away_from_zero(tail, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, v[0] / v[1], rng); }});
    cases.push_back({"matmul", {random_array({m, k}, rng), random_array({k, n}, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, matmul(v[0], v[1]), rng); }});
    cases.push_back({"exp", {random_array(s, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, exp(v[0]), rng); }});
    cases.push_back({"expm1", {random_array(s, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, expm1(v[0]), rng); }});
    cases.push_back({"log", {positive},
                     [&](Graph& g, auto v) { return weighted_sum(g, log(v[0]), rng); }});
    cases.push_back({"relu", {away_from_zero(s, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, relu(v[0]), rng); }});
    cases.push_back({"square", {random_array(s, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, square(v[0]), rng); }});
    cases.push_back({"sum_axis", {random_array(s, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, sum(v[0], 0, true), rng); }});
    cases.push_back({"mean_axis", {random_array(s, rng)},
                     [&](Graph& g, auto v) {
                       return weighted_sum(g, mean(v[0], static_cast<int>(s.size()) - 1), rng);
                     }});
    cases.push_back({"mean", {random_array(s, rng)},
                     [&](Graph&, auto v) { return mean(square(v[0])); }});
    Shape big{3};
    big.insert(big.end(), s2.begin(), s2.end());
    cases.push_back({"broadcast", {random_array(s2, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, broadcast_to(v[0], big), rng); }});
    cases.push_back({"reshape", {random_array(s, rng)},
                     [&](Graph& g, auto v) {
                       return weighted_sum(g, reshape(v[0], Shape{numel(s)}), rng);
                     }});
    cases.push_back({"transpose", {random_array({m, n}, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, transpose(v[0]), rng); }});
    cases.push_back({"scalar_ops", {random_array(s, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, (v[0] * -1.7) + 0.3, rng); }});
    cases.push_back({"narrow", {random_array({m, 4}, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, narrow(v[0], 1, 1, 2), rng); }});
    cases.push_back({"upsample", {random_array({1, 2, m, n}, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, upsample_nearest(v[0], 2), rng); }});
    cases.push_back({"conv2d", {random_array({2, 2, 4, 4}, rng), random_array({3, 2, 3, 3}, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, conv2d(v[0], v[1], 2, 1), rng); }});
    cases.push_back({"conv2d_valid", {random_array({1, 1, 4, 3}, rng), random_array({2, 1, 2, 2}, rng)},
                     [&](Graph& g, auto v) { return weighted_sum(g, conv2d(v[0], v[1], 1, 0), rng); }});

    for (auto& c : cases) {
      CAPTURE(c.name);
      // weighted_sum draws fresh weights per call; pin them by re-seeding.
      const auto seed = rng();
      auto f = [&c, seed, &rng](Graph& g, std::span<const Var> v) {
        rng.seed(seed);
        return c.f(g, v);
      };
      auto res = finite_diff_check(f, c.points, 1e-5);
      CHECK(res.checkable);
      CHECK(res.max_rel_error < 1e-5);
    }
  }
}

TEST_CASE("apply dispatches to the named op") {
  Graph g;
  Var a = g.constant(Array::vector({1.0, -2.0}));
  Var b = g.constant(Array::vector({3.0, 4.0}));
  Var xs[] = {a, b};
  CHECK(apply(OpKind::Add, xs).value() == Array::vector({4.0, 2.0}));
  OpAttrs attrs;
  attrs.scalar = 2.0;
  Var one[] = {a};
  CHECK(apply(OpKind::MulScalar, one, attrs).value() == Array::vector({2.0, -4.0}));
  CHECK_THROWS_AS(apply(OpKind::Add, one), ContractError);
}

TEST_CASE("gradient of a batch sum is the sum of per-sample gradients") {
  std::mt19937_64 rng(5);
  const Array w = random_array({3, 2}, rng);
  const Array x = random_array({4, 3}, rng);
  auto loss = [](Var xb, Var wv) { return sum(square(relu(matmul(xb, wv)) + 0.1)); };

  Graph g;
  Var wv = g.leaf(w);
  Array batched = g.backward(loss(g.constant(x), wv))[wv];

  Array summed(Shape{3, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    Graph gi;
    Var wi = gi.leaf(w);
    Array row(Shape{1, 3});
    for (std::size_t j = 0; j < 3; ++j) row[j] = x.at(i, j);
    const Array gr = gi.backward(loss(gi.constant(row), wi))[wi];
    for (std::size_t j = 0; j < 6; ++j) summed[j] += gr[j];
  }
  for (std::size_t j = 0; j < 6; ++j) CHECK(batched[j] == doctest::Approx(summed[j]).epsilon(1e-12));
}

TEST_CASE("repeated forward and backward is bit-identical") {
  std::mt19937_64 rng(8);
  const Array w = random_array({4, 4}, rng);
  const Array x = random_array({2, 1, 6, 6}, rng);
  const Array k = random_array({2, 1, 3, 3}, rng);
  auto run = [&] {
    Graph g;
    Var wv = g.leaf(w), kv = g.leaf(k);
    Var h = relu(conv2d(g.constant(x), kv, 2, 1));
    Var loss = mean(square(matmul(reshape(h, Shape{2, 18}), g.constant(Array(Shape{18, 1}, 0.5)))));
    loss = loss + sum(square(wv));
    auto gr = g.backward(loss);
    return std::make_tuple(loss.value(), gr[wv], gr[kv]);
  };
  CHECK(run() == run());
}

TEST_CASE("graph records parents before children") {
  Graph g;
  Var a = g.leaf(Array::vector({1.0}));
  Var b = exp(a) * a;
  for (std::size_t id = 0; id < g.size(); ++id)
    for (auto p : g.parents(id)) CHECK(p < id);
  CHECK(b.id() == g.size() - 1);
}
