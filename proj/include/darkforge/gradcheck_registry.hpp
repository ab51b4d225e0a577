#pragma once

#include <functional>
#include <string>
#include <vector>

namespace darkforge {

struct GradCheckCase {
  std::string name;
  /// Returns the max relative error of the analytic gradient.
  std::function<double()> run;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool passed = false;
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// Every differentiable block, the losses and toy-sized DBF / DBLE networks.
const std::vector<GradCheckCase>& gradcheck_registry();

std::vector<GradCheckResult> run_gradchecks(const std::vector<GradCheckCase>& cases,
                                            double tolerance = kGradCheckTolerance);

}  // namespace darkforge
