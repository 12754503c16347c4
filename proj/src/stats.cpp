#include "weightscan/stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace weightscan::stats {

MeanStd population_mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  double sum = 0.0;
  for (double v : sorted) sum += v;
  const double mean = sum / static_cast<double>(sorted.size());

  double sq = 0.0;
  for (double v : sorted) {
    const double r = v - mean;
    sq += r * r;
  }
  return {mean, std::sqrt(sq / static_cast<double>(sorted.size()))};
}

double population_std(std::span<const double> values) {
  return population_mean_std(values).std;
}

double frobenius_norm(std::span<const double> values) {
  std::vector<double> squares(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    squares[i] = values[i] * values[i];
  }
  std::sort(squares.begin(), squares.end());
  double sum = 0.0;
  for (double s : squares) sum += s;
  return std::sqrt(sum);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n == 0 || n != y.size()) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= kDegenerateStd * kDegenerateStd ||
      syy <= kDegenerateStd * kDegenerateStd) {
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace weightscan::stats
