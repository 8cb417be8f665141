// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "vsr/tape.hpp"

namespace vsr {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
};

// Central-difference gradient check. `fn` evaluates the scalar loss; it is
// called once with a tape (analytic pass) and repeatedly without one
// (numeric passes), and must be free of observable side effects so repeated
// evaluation is consistent. Relative error uses a unit scale floor so tiny
// gradients are compared absolutely.
template <typename S>
GradCheckResult grad_check(const std::function<TensorPtr<S>(Tape<S>*)>& fn,
                           const std::vector<TensorPtr<S>>& wrt,
                           double eps = 1e-5, double scale_floor = 1.0) {
  static_assert(std::is_same_v<S, double>,
                "grad_check is meaningful in double precision only");
  Tape<S> tape;
  for (auto& p : wrt) {
    p->requires_grad = true;
    p->zero_grad();
  }
  auto loss = fn(&tape);
  tape.backward(loss);

  GradCheckResult res;
  for (auto& p : wrt) {
    p->ensure_grad();
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const S saved = p->data[i];
      p->data[i] = saved + static_cast<S>(eps);
      const S up = fn(nullptr)->at(0);
      p->data[i] = saved - static_cast<S>(eps);
      const S dn = fn(nullptr)->at(0);
      p->data[i] = saved;
      const double numeric = (up - dn) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double denom =
          std::max({std::abs(numeric), std::abs(analytic), scale_floor});
      res.max_rel_err = std::max(res.max_rel_err,
                                 std::abs(numeric - analytic) / denom);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace vsr
