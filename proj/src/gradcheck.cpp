#include "inject/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "inject/errors.hpp"
#include "inject/rng.hpp"

namespace inject {

std::vector<std::string> GradCheckReport::failed_names() const {
  std::vector<std::string> out;
  for (const auto& p : params)
    if (!p.passed) out.push_back(p.name);
  return out;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const std::function<Tensor()>& loss_fn) {
  NoGradGuard guard;
  return loss_fn().item();
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedTensor>& params,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0 && options.step <= 1e-2)) throw ContractError("finite_diff_check: step must be in (0, 1e-2]");

  const double base = evaluate(loss_fn);
  const double again = evaluate(loss_fn);
  if (std::memcmp(&base, &again, sizeof base) != 0)
    throw DeterminismError("finite_diff_check: loss function is not deterministic (" + std::to_string(base) +
                           " vs " + std::to_string(again) + ")");

  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  Tensor loss = loss_fn();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    std::vector<double> g(p.tensor.numel(), 0.0);
    if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), g.begin());
    if (options.grad_transform) options.grad_transform(p.name, g);
    analytic.push_back(std::move(g));
  }

  Rng rng(options.seed);
  const double h = options.step;
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor t = params[pi].tensor;
    auto values = t.mutable_values();
    const auto& grad = analytic[pi];
    ParamCheck check;
    check.name = params[pi].name;

    std::vector<std::size_t> indices(values.size());
    std::iota(indices.begin(), indices.end(), 0);
    const bool sampled = options.max_elements_per_param > 0 && indices.size() > options.max_elements_per_param;
    if (sampled) {
      rng.shuffle(indices);
      indices.resize(options.max_elements_per_param);
      std::sort(indices.begin(), indices.end());
    }

    for (std::size_t idx : indices) {
      const double original = values[idx];
      values[idx] = original + h;
      const double plus = evaluate(loss_fn);
      values[idx] = original - h;
      const double minus = evaluate(loss_fn);
      values[idx] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(grad[idx], numeric, options.magnitude_floor);
      if (err > check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = idx;
      }
      ++check.elements_checked;
    }

    if (options.max_elements_per_param > 0) {
      // One direction touching every element catches errors the sample misses.
      std::vector<double> direction(values.size());
      double norm = 0.0;
      for (auto& d : direction) {
        d = rng.normal();
        norm += d * d;
      }
      norm = std::sqrt(norm);
      for (auto& d : direction) d /= norm;
      std::vector<double> original(values.begin(), values.end());
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = original[i] + h * direction[i];
      const double plus = evaluate(loss_fn);
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = original[i] - h * direction[i];
      const double minus = evaluate(loss_fn);
      std::copy(original.begin(), original.end(), values.begin());
      double projected = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) projected += grad[i] * direction[i];
      check.directional_rel_error = relative_error(projected, (plus - minus) / (2.0 * h), options.magnitude_floor);
    }

    check.passed = check.max_rel_error <= options.tolerance && check.directional_rel_error <= options.tolerance;
    report.max_rel_error = std::max({report.max_rel_error, check.max_rel_error, check.directional_rel_error});
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace inject
