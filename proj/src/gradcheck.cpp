#include "delib/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace delib {

GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  for (auto& x : inputs) x.zero_grad();
  Tensor y = f();
  if (y.numel() != 1) {
    report.diagnostic = "function is not scalar-valued: " + shape_str(y.shape());
    return report;
  }
  if (!std::isfinite(y.item())) {
    report.diagnostic = "non-finite function value";
    return report;
  }
  y.backward();

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = inputs[t];
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    auto values = x.mutable_data();
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + options.step;
      const double plus = f().item();
      values[i] = orig - options.step;
      const double minus = f().item();
      values[i] = orig;
      const double numeric = (plus - minus) / (2.0 * options.step);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        std::ostringstream os;
        os << "non-finite gradient at input " << t << " index " << i;
        report.diagnostic = os.str();
        report.max_rel_error = INFINITY;
        return report;
      }
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = t;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  if (!report.passed) {
    std::ostringstream os;
    os << "max relative error " << report.max_rel_error << " at input " << report.worst_input
       << " index " << report.worst_index;
    report.diagnostic = os.str();
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           const GradCheckOptions& options) {
  return grad_check([&] { return f(x); }, std::vector<Tensor>{x}, options);
}

}  // namespace delib
