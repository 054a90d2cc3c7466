#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flilab/tensor.hpp"

namespace flilab {

/// Inputs (perturbed in place by the checker) and a forward function that
/// reads them. The output may have any shape; it is contracted with a fixed
/// random tensor to form the scalar loss.
struct GradCase {
  std::vector<Tensor> inputs;
  std::function<Tensor()> forward;
};

struct GradCheckSpec {
  std::string name;
  std::function<GradCase(std::uint64_t seed)> make;
  double tolerance = 1e-5;
};

struct GradCheckOptions {
  std::size_t seeds = 100;
  std::uint64_t base_seed = 0;
  /// Tensors up to this size are checked at every coordinate on every seed.
  std::size_t full_check_limit = 16;
  /// Coordinates sampled per larger tensor on seeds after the first; the
  /// first seed always checks every coordinate.
  std::size_t sampled_coordinates = 6;
  /// Relative error is |a - n| / max(|a|, |n|, denominator_floor).
  double denominator_floor = 1e-4;
};

struct GradCheckReport {
  std::string name;
  std::size_t seeds = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0;
  std::uint64_t worst_seed = 0;
  double tolerance = 0;
  double seconds = 0;
  bool passed = false;
};

/// Central differences with h = 1e-6 max(1, |x|) against one backward pass.
GradCheckReport run_gradcheck(const GradCheckSpec& spec, const GradCheckOptions& opts = {});

/// Every differentiable operation plus attention, blocks and the full model at
/// toy dimensions (d_model 8, 2 heads, 8 gates, 2x2 image), both attention kinds.
std::vector<GradCheckSpec> default_gradcheck_suite();

}  // namespace flilab
