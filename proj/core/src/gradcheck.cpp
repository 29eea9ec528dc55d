#include "mnf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mnf/errors.hpp"

namespace mnf {

bool FiniteDiffReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const ParameterCheck& p) { return p.passed; });
}

double FiniteDiffReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& p : params) worst = std::max(worst, p.max_rel_error);
  return worst;
}

FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                                   const FiniteDiffOptions& options) {
  std::vector<Tensor> analytic;
  double base = 0.0;
  {
    Tape tape;
    Var l = loss(tape);
    base = l.item();
    auto grads = tape.backward(l);
    for (const Parameter* p : params) analytic.push_back(grads.of(*p));
  }
  const double floor = options.relative_floor * std::max(1.0, std::abs(base));

  auto eval = [&]() {
    Tape tape;
    return loss(tape).item();
  };

  FiniteDiffReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    ParameterCheck check{p.name, 0.0, {}, true};
    const std::size_t n = p.value.size();
    std::size_t stride = 1;
    if (options.max_entries_per_param > 0 && n > options.max_entries_per_param) {
      stride = (n + options.max_entries_per_param - 1) / options.max_entries_per_param;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p.value[i];
      p.value[i] = saved + options.step;
      const double up = eval();
      p.value[i] = saved - options.step;
      const double down = eval();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      check.max_rel_error = std::max(check.max_rel_error, rel);
      if (!(rel < options.tolerance)) {
        check.offending.push_back(i);
        check.passed = false;
      }
    }
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace mnf
