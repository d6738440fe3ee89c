#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "inject/archive.hpp"
#include "inject/tensor.hpp"

namespace inject {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Gradients below this magnitude are compared absolutely (the relative
  /// error denominator never drops under it). Central differences at the
  /// default step carry roughly 1e-10 of round-off, so exactly-zero gradients
  /// need a floor well above that.
  double magnitude_floor = 1e-5;
  /// 0 checks every element; otherwise a seeded sample of this many elements
  /// per parameter (all elements when the parameter is smaller), plus one
  /// random-direction check covering the whole parameter.
  std::size_t max_elements_per_param = 0;
  std::uint64_t seed = 0;
  /// Test hook applied to each analytic gradient before comparison.
  std::function<void(const std::string& name, std::span<double> grad)> grad_transform;
};

struct ParamCheck {
  std::string name;
  std::size_t elements_checked = 0;
  std::size_t worst_index = 0;
  double max_rel_error = 0.0;
  double directional_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed = true;

  std::vector<std::string> failed_names() const;
};

double relative_error(double analytic, double numeric, double floor);

/// Compares backward() gradients of `loss_fn` against central differences for
/// every listed parameter. `loss_fn` must be deterministic; two evaluations
/// that differ raise a DeterminismError.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedTensor>& params,
                                  const GradCheckOptions& options = {});

}  // namespace inject
