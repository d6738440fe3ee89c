#include "inject/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

#include "inject/errors.hpp"
#include "inject/log.hpp"

namespace inject {

namespace {

void check_labels(std::span<const int> a, std::span<const int> b, std::size_t num_classes, const char* what) {
  if (a.size() != b.size())
    throw DimensionError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  if (a.empty()) throw ContractError(std::string(what) + ": empty input");
  if (num_classes == 0) throw ContractError(std::string(what) + ": no classes");
  for (auto span : {a, b})
    for (int v : span)
      if (v < 0 || static_cast<std::size_t>(v) >= num_classes)
        throw IndexError(std::string(what) + ": label " + std::to_string(v) + " outside [0, " +
                         std::to_string(num_classes) + ")");
}

}  // namespace

F1Report f1_report(std::span<const int> predictions, std::span<const int> gold, std::size_t num_classes) {
  check_labels(predictions, gold, num_classes, "f1_macro");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto p = static_cast<std::size_t>(predictions[i]);
    const auto g = static_cast<std::size_t>(gold[i]);
    if (p == g) {
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  F1Report report;
  report.per_class.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) {
      report.excluded_classes.push_back(static_cast<int>(c));
      continue;
    }
    report.per_class[c] = static_cast<double>(2 * tp[c]) / static_cast<double>(denom);
    sum += report.per_class[c];
    ++used;
  }
  if (!report.excluded_classes.empty()) {
    std::ostringstream msg;
    msg << "f1_macro: excluding " << report.excluded_classes.size() << " class(es) absent from gold and predictions";
    warn(msg.str());
  }
  report.macro = sum / static_cast<double>(used);
  return report;
}

double f1_macro(std::span<const int> predictions, std::span<const int> gold, std::size_t num_classes) {
  return f1_report(predictions, gold, num_classes).macro;
}

SeedAggregate aggregate_seeds(std::span<const double> values) {
  if (values.empty()) throw ContractError("aggregate_seeds: no results");
  SeedAggregate agg;
  agg.count = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  agg.mean = sum / static_cast<double>(values.size());
  if (values.size() == 1) {
    agg.single_seed = true;
    return agg;
  }
  double sq = 0.0;
  for (double v : values) sq += (v - agg.mean) * (v - agg.mean);
  agg.stdev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  return agg;
}

std::vector<std::vector<double>> paired_table(std::span<const int> a, std::span<const int> b, std::size_t num_classes) {
  check_labels(a, b, num_classes, "paired_table");
  std::vector<std::vector<double>> n(num_classes, std::vector<double>(num_classes, 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) n[static_cast<std::size_t>(a[i])][static_cast<std::size_t>(b[i])] += 1.0;
  return n;
}

double chi_square_sf(double statistic, int df) {
  if (df < 1) throw ContractError("chi_square_sf: df must be positive");
  if (statistic <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * statistic);
}

std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  if (a.size() != n) throw DimensionError("solve_linear: matrix and vector sizes differ");
  double scale = 0.0;
  for (const auto& row : a) {
    if (row.size() != n) throw DimensionError("solve_linear: matrix is not square");
    for (double v : row) scale = std::max(scale, std::abs(v));
  }
  const double tiny = std::max(scale, 1.0) * 1e-12;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) <= tiny)
      throw SingularMatrixError("solve_linear: singular matrix at column " + std::to_string(col));
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

namespace {

std::string dump_table(const std::vector<std::vector<double>>& n, const std::vector<int>& classes) {
  std::ostringstream out;
  out << "paired table over classes [";
  for (std::size_t i = 0; i < classes.size(); ++i) out << (i ? "," : "") << classes[i];
  out << "]:";
  for (const auto& row : n) {
    out << "\n ";
    for (double v : row) out << ' ' << v;
  }
  return out.str();
}

}  // namespace

BhapkarResult bhapkar_test(std::span<const int> a, std::span<const int> b, std::size_t num_classes) {
  const auto full = paired_table(a, b, num_classes);
  BhapkarResult result;
  for (std::size_t c = 0; c < num_classes; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < num_classes; ++j) {
      row += full[c][j];
      col += full[j][c];
    }
    if (row + col > 0.0) result.classes_used.push_back(static_cast<int>(c));
  }
  const std::size_t k = result.classes_used.size();
  std::vector<std::vector<double>> n(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      n[i][j] = full[static_cast<std::size_t>(result.classes_used[i])][static_cast<std::size_t>(result.classes_used[j])];

  if (k < 2) {
    result.df = std::max<int>(static_cast<int>(k) - 1, 0);
    return result;
  }
  result.df = static_cast<int>(k) - 1;
  const double total = static_cast<double>(a.size());
  std::vector<double> row(k, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row[i] += n[i][j];
      col[j] += n[i][j];
    }
  const std::size_t r = k - 1;
  std::vector<double> d(r);
  bool all_zero = true;
  for (std::size_t i = 0; i < r; ++i) {
    d[i] = row[i] - col[i];
    all_zero = all_zero && d[i] == 0.0;
  }
  if (all_zero) return result;

  std::vector<std::vector<double>> v(r, std::vector<double>(r, 0.0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j)
      v[i][j] = i == j ? row[i] + col[i] - 2.0 * n[i][i] - d[i] * d[i] / total
                       : -(n[i][j] + n[j][i]) - d[i] * d[j] / total;
  std::vector<double> x;
  try {
    x = solve_linear(v, d);
  } catch (const SingularMatrixError&) {
    throw SingularMatrixError("bhapkar_test: covariance of marginal differences is singular; " +
                              dump_table(n, result.classes_used));
  }
  double stat = 0.0;
  for (std::size_t i = 0; i < r; ++i) stat += d[i] * x[i];
  result.statistic = std::max(stat, 0.0);
  result.p_value = chi_square_sf(result.statistic, result.df);
  return result;
}

}  // namespace inject
