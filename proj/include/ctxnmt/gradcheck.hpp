#pragma once

// Central-difference gradient checking against the tape's analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "ctxnmt/autodiff.hpp"
#include "ctxnmt/params.hpp"

namespace ctxnmt {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// loss_fn builds a scalar loss on the given tape from the store's
/// parameters. stride > 1 checks every stride-th entry of each tensor (always
/// including the first and last).
inline GradCheckResult check_gradients(ParameterStore<double>& ps,
                                       const std::function<Var<double>(Tape<double>&)>& loss_fn,
                                       double step = 1e-5, std::size_t stride = 1) {
  ps.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss_fn(tape));
  }
  auto eval = [&] {
    Tape<double> tape(false);
    return loss_fn(tape).value()[0];
  };
  GradCheckResult res;
  for (std::size_t p = 0; p < ps.size(); ++p) {
    auto& param = ps[p];
    const std::size_t n = param.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (stride > 1 && i % stride != 0 && i + 1 != n) continue;
      const double orig = param.value[i];
      param.value[i] = orig + step;
      const double up = eval();
      param.value[i] = orig - step;
      const double down = eval();
      param.value[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double analytic = param.grad.empty() ? 0.0 : param.grad[i];
      const double err = relative_error(analytic, numeric);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = param.name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace ctxnmt
