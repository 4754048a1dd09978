#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "delib/tensor.hpp"

namespace delib {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so that coordinates whose
  // true gradient is ~0 are judged on absolute error instead.
  double floor = 1e-6;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  std::string diagnostic;
};

/// Central finite differences of a scalar-valued function over every
/// coordinate of every input, compared to the autodiff gradient.
///
/// rel_error = |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// The inputs must be leaf tensors; they are perturbed in place and
/// restored afterwards. Their gradients are left holding the analytic values.
using ScalarFn = std::function<Tensor()>;
GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

// Convenience: single input, f receives it.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           const GradCheckOptions& options = {});

}  // namespace delib
