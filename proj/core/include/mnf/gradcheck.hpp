#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mnf/autodiff.hpp"

namespace mnf {

struct ParameterCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::vector<std::size_t> offending;  // flat indices above tolerance
  bool passed = true;
};

struct FiniteDiffReport {
  std::vector<ParameterCheck> params;

  bool passed() const;
  double max_rel_error() const;
};

struct FiniteDiffOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Denominator floor, relative to max(1, |loss|), so entries whose true
  // gradient is at rounding-noise level do not register as failures.
  double relative_floor = 1e-6;
  // 0 checks every entry; otherwise entries are strided to at most this many.
  std::size_t max_entries_per_param = 0;
};

// Compares reverse-mode gradients against central differences. `loss` must
// rebuild the whole graph on the tape it is given from the current parameter
// values, and be a deterministic function of them (replay any randomness
// from a fixed seed inside the callback).
FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                                   const FiniteDiffOptions& options = {});

}  // namespace mnf
