#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "st4d/model.hpp"

namespace st4d {

struct GradCheckResult {
  std::string component;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 99;
  int samples_per_tensor = 20;  // finite-difference probes per tensor (all if smaller)
  double tolerance = 1e-5;
  double step = 1e-5;
  // Test hook: mutates the analytic gradients before comparison, to prove the
  // checker catches injected errors.
  std::function<void(const std::string& component, GradMap<double>&)> corrupt;
};

std::vector<std::string> gradcheck_component_names();

// Runs the 64-bit central finite-difference suite for the named components
// (all when empty). Every check compares hand-written backward passes against
// numeric derivatives of the corresponding forward pass.
std::vector<GradCheckResult> run_gradcheck(const std::vector<std::string>& components = {},
                                           const GradCheckOptions& options = {});

}  // namespace st4d
