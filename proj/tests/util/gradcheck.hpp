#pragma once

// Central-difference gradient oracle, independent of the tape: evaluates the
// loss twice per coordinate through a caller-supplied forward function and
// compares against the analytic gradient.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advkit/tensor.hpp"

namespace advkit::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int64_t checked = 0;
  std::string worst;  // description of the worst coordinate
};

// forward: maps flat inputs -> scalar loss value (no tape involvement needed).
// analytic: gradient to compare, same length as inputs.
inline GradCheckResult gradcheck(
    const std::function<double(std::span<const double>)>& forward,
    std::span<const double> inputs, std::span<const double> analytic,
    double step = 1e-4) {
  GradCheckResult result;
  std::vector<double> probe(inputs.begin(), inputs.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + step;
    const double up = forward(probe);
    probe[i] = keep - step;
    const double down = forward(probe);
    probe[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
    const double rel = std::abs(numeric - analytic[i]) / denom;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst = "coord " + std::to_string(i) + ": numeric " + std::to_string(numeric) +
                     " vs analytic " + std::to_string(analytic[i]);
    }
    ++result.checked;
  }
  return result;
}

}  // namespace advkit::testing
