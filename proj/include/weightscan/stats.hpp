#pragma once

#include <cstddef>
#include <span>

namespace weightscan::stats {

/// Tolerance below which a standard deviation is treated as zero.
inline constexpr double kDegenerateStd = 1e-12;

struct MeanStd {
  double mean;
  double std;  // population convention: divide by count
};

/// Population mean/std accumulated over an ascending-sorted copy of the
/// input, so the result is bit-identical under any permutation of elements.
MeanStd population_mean_std(std::span<const double> values);

double population_std(std::span<const double> values);

/// sqrt of the sum of squares, accumulated in ascending order of the squares
/// (same permutation-independence guarantee as above).
double frobenius_norm(std::span<const double> values);

/// Plain Pearson correlation; returns 0 when either side is constant.
double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace weightscan::stats
