#pragma once

#include <functional>
#include <span>
#include <vector>

#include "vaetk/autodiff.hpp"

namespace vaetk::ad {

struct GradCheckResult {
  // max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12)
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  // False when some ReLU input sits within the kink margin, where the central
  // difference straddles the nondifferentiable point.
  bool checkable = true;
  double min_kink_distance = 0.0;
};

using ScalarFn = std::function<Var(Graph&, Var)>;
using MultiScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

// Compares reverse-mode gradients of a scalar function against central
// differences. A negative kink_margin selects 10 * step.
GradCheckResult finite_diff_check(const MultiScalarFn& f, const std::vector<Array>& points,
                                  double step, double kink_margin = -1.0);
GradCheckResult finite_diff_check(const ScalarFn& f, const Array& point, double step,
                                  double kink_margin = -1.0);

}  // namespace vaetk::ad
