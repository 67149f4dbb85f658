#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bnkit::stats {

// Per-seed test accuracies for one configuration, ordered by seed index.
// Two RunSets are compared pairwise by index, so the i-th entries of both
// must come from the same underlying seed index.
struct RunSet {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // percent, [0, 100]

  std::size_t size() const { return accuracies.size(); }
};

struct TTestResult {
  double t_statistic = 0.0;
  std::size_t degrees_of_freedom = 0;
  double p_value = 1.0;
  bool significant = false;        // p <= 0.05
  double mean_difference = 0.0;    // candidate minus baseline
};

inline constexpr double kSignificanceLevel = 0.05;

// Seed for run `index` (1-based): MD5 of the decimal ASCII digits of index,
// first 8 digest bytes read big-endian.
std::uint64_t md5_seed(std::uint64_t index);

double mean_accuracy(const RunSet& runs);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample std, divisor n-1
};
// Needs n >= 2.
Summary summarize(const RunSet& runs);

// CDF of Student's t with df >= 1; evaluated through the regularized
// incomplete beta function, absolute error well below 1e-9.
double student_t_cdf(double t, std::size_t df);

// One-sided paired test of H1: mean(candidate - baseline) > 0.
// Degenerate zero-variance differences: all-zero -> p = 0.5; all equal and
// nonzero -> p = 0 (positive) or 1 (negative).
TTestResult one_sided_paired_ttest(const RunSet& candidate,
                                   const RunSet& baseline);

}  // namespace bnkit::stats
