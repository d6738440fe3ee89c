#pragma once

// Classification metrics, seed aggregation and the paired marginal
// homogeneity test.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace inject {

struct F1Report {
  /// Per class; classes in neither gold nor predictions hold NaN.
  std::vector<double> per_class;
  std::vector<int> excluded_classes;
  double macro = 0.0;
};

/// F1 per class as 2TP / (2TP + FP + FN), averaged over the classes that occur
/// in gold or predictions. Classes occurring in neither are excluded with a
/// warning.
F1Report f1_report(std::span<const int> predictions, std::span<const int> gold, std::size_t num_classes);
double f1_macro(std::span<const int> predictions, std::span<const int> gold, std::size_t num_classes);

struct SeedAggregate {
  double mean = 0.0;
  /// Sample standard deviation; 0 for a single value.
  double stdev = 0.0;
  std::size_t count = 0;
  bool single_seed = false;
};

SeedAggregate aggregate_seeds(std::span<const double> values);

struct BhapkarResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  /// Classes present in either vector; the others are dropped.
  std::vector<int> classes_used;
};

/// k x k paired table of (a, b) labels.
std::vector<std::vector<double>> paired_table(std::span<const int> a, std::span<const int> b, std::size_t num_classes);

/// Chi-square test of marginal homogeneity for paired predictions. Raises
/// SingularMatrixError (with the table) when the covariance is singular.
BhapkarResult bhapkar_test(std::span<const int> a, std::span<const int> b, std::size_t num_classes);

/// Upper tail of the chi-square distribution.
double chi_square_sf(double statistic, int df);

/// Solves A x = b by Gaussian elimination with partial pivoting. Raises
/// SingularMatrixError when a pivot vanishes.
std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b);

}  // namespace inject
