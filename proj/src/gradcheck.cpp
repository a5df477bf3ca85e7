#include "vaetk/gradcheck.hpp"

#include <cmath>

#include "vaetk/errors.hpp"

namespace vaetk::ad {

namespace {

double evaluate(const MultiScalarFn& f, const std::vector<Array>& points) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(points.size());
  for (const auto& p : points) leaves.push_back(g.constant(p));
  return f(g, leaves).value().item();
}

}  // namespace

GradCheckResult finite_diff_check(const MultiScalarFn& f, const std::vector<Array>& points,
                                  double step, double kink_margin) {
  if (!(step > 0.0)) throw ContractError("finite-difference step must be positive");
  if (kink_margin < 0.0) kink_margin = 10.0 * step;

  GradCheckResult result;
  std::vector<Array> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& p : points) leaves.push_back(g.leaf(p, true));
    Var loss = f(g, leaves);
    const auto grads = g.backward(loss);
    for (auto leaf : leaves) analytic.push_back(grads[leaf]);
    result.min_kink_distance = g.min_abs_relu_input();
    result.checkable = result.min_kink_distance > kink_margin;
  }

  std::vector<Array> probe = points;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + step;
      const double up = evaluate(f, probe);
      probe[k][i] = orig - step;
      const double down = evaluate(f, probe);
      probe[k][i] = orig;
      const double central = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      const double err = std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-12);
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_index = i;
      }
    }
  }
  return result;
}

GradCheckResult finite_diff_check(const ScalarFn& f, const Array& point, double step,
                                  double kink_margin) {
  return finite_diff_check(
      [&f](Graph& g, std::span<const Var> leaves) { return f(g, leaves[0]); },
      std::vector<Array>{point}, step, kink_margin);
}

}  // namespace vaetk::ad
