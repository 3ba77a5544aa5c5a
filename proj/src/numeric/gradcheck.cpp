#include "avgn/numeric/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "avgn/numeric/errors.hpp"

namespace avgn {

namespace {
double evaluate(const std::function<Tensor()>& f) {
  Tensor out = f();
  if (out.size() != 1) throw DimensionError("grad_check: function must return a scalar");
  const double v = out.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}
}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options,
                           const std::vector<std::string>& names) {
  if (options.step <= 0.0) throw ArgumentError("grad_check: step must be positive");
  for (const auto& in : inputs) {
    if (!in.requires_grad()) throw ArgumentError("grad_check: inputs must require grad");
    if (!in.value().all_finite()) throw NumericError("grad_check: non-finite input");
  }

  std::vector<Tensor> handles = inputs;
  for (auto& h : handles) h.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor out = f();
    if (!out.value().all_finite()) throw NumericError("grad_check: non-finite function value");
    tape.backward(out);
  }
  std::vector<NdArray> analytic;
  for (const auto& h : handles) {
    NdArray g = h.grad();
    if (!g.all_finite()) throw NumericError("grad_check: non-finite gradient");
    analytic.push_back(std::move(g));
  }

  GradCheckReport report;
  report.passed = true;
  for (std::size_t i = 0; i < handles.size(); ++i) {
    GradCheckEntry entry;
    entry.name = i < names.size() ? names[i] : "input" + std::to_string(i);
    NdArray& value = handles[i].mutable_value();
    const std::size_t n = value.size();
    const std::size_t stride =
        options.max_elements == 0 || n <= options.max_elements ? 1 : n / options.max_elements;
    for (std::size_t j = 0; j < n; j += stride) {
      const double orig = value[j];
      const double ana = analytic[i][j];
      auto measure = [&](double h) {
        value[j] = orig + h;
        const double up = evaluate(f);
        value[j] = orig - h;
        const double down = evaluate(f);
        value[j] = orig;
        return (up - down) / (2.0 * h);
      };
      auto rel_error = [&](double num) {
        return std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), options.floor});
      };
      double num = measure(options.step);
      double rel = rel_error(num);
      if (!(rel < options.tol) && options.retry_finer) {
        const double fine = measure(options.step / 10.0);
        if (rel_error(fine) < options.tol) {
          num = fine;
          rel = rel_error(fine);
          ++entry.retried;
        }
      }
      if (rel >= entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = j;
        entry.analytic = ana;
        entry.numeric = num;
      }
    }
    report.worst = std::max(report.worst, entry.max_rel_error);
    if (!(entry.max_rel_error < options.tol)) report.passed = false;
    report.inputs.push_back(std::move(entry));
  }
  for (auto& h : handles) h.zero_grad();
  return report;
}

}  // namespace avgn
