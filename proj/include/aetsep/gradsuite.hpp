#pragma once

// Finite-difference checks over every differentiable op, the front-end
// transforms, all seven model variants and the five loss terms.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace aetsep::diag {

struct GradSuiteEntry {
  std::string group;  // "op", "transform", "model" or "loss"
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t probed = 0;
  std::size_t excluded = 0;
  bool passed = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double seconds = 0.0;

  bool passed() const;
};

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kLossTolerance = 1e-4;
// Central-difference step; balances truncation against roundoff for the
// small gradients that reach the smoothing bank of mask models.
inline constexpr double kDelta = 1e-5;

GradSuiteResult run_gradient_suite(std::uint64_t seed = 0);

// One line per entry: "PASS op/conv1d max_rel=... tol=... probed=...".
std::string format_gradient_suite(const GradSuiteResult& result);

}  // namespace aetsep::diag
