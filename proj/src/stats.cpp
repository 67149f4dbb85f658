#include "bnkit/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>
#include <openssl/evp.h>

namespace bnkit::stats {

std::uint64_t md5_seed(std::uint64_t index) {
  if (index == 0) {
    throw std::invalid_argument("md5_seed: index must be >= 1");
  }
  const std::string text = std::to_string(index);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_md5(), nullptr) !=
          1 ||
      len < 8) {
    throw std::runtime_error("md5_seed: digest failed");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | digest[i];
  return v;
}

double mean_accuracy(const RunSet& runs) {
  if (runs.accuracies.empty()) {
    throw std::invalid_argument("mean_accuracy: empty run set");
  }
  double s = 0.0;
  for (double a : runs.accuracies) s += a;
  return s / static_cast<double>(runs.accuracies.size());
}

Summary summarize(const RunSet& runs) {
  const std::size_t n = runs.accuracies.size();
  if (n < 2) {
    throw std::invalid_argument("summarize: need >= 2 runs for a std");
  }
  Summary s;
  s.mean = mean_accuracy(runs);
  double sq = 0.0;
  for (double a : runs.accuracies) {
    const double d = a - s.mean;
    sq += d * d;
  }
  s.stddev = std::sqrt(sq / static_cast<double>(n - 1));
  return s;
}

double student_t_cdf(double t, std::size_t df) {
  if (df == 0) {
    throw std::invalid_argument("student_t_cdf: df must be >= 1");
  }
  const boost::math::students_t dist(static_cast<double>(df));
  return boost::math::cdf(dist, t);
}

TTestResult one_sided_paired_ttest(const RunSet& candidate,
                                   const RunSet& baseline) {
  const std::size_t n = candidate.size();
  if (n != baseline.size()) {
    throw std::invalid_argument("paired t-test: run sets differ in length");
  }
  if (n < 2) {
    throw std::invalid_argument("paired t-test: need >= 2 paired runs");
  }
  if (candidate.seeds.size() == n && baseline.seeds.size() == n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (candidate.seeds[i] != baseline.seeds[i]) {
        throw std::invalid_argument(
            "paired t-test: seeds are not index-aligned");
      }
    }
  }

  std::vector<double> d(n);
  double mean_d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = candidate.accuracies[i] - baseline.accuracies[i];
    mean_d += d[i];
  }
  mean_d /= static_cast<double>(n);
  double sq = 0.0;
  for (double v : d) sq += (v - mean_d) * (v - mean_d);
  const double sd = std::sqrt(sq / static_cast<double>(n - 1));

  TTestResult r;
  r.degrees_of_freedom = n - 1;
  r.mean_difference = mean_d;
  if (sd == 0.0) {
    if (mean_d == 0.0) {
      r.t_statistic = 0.0;
      r.p_value = 0.5;
    } else if (mean_d > 0.0) {
      r.t_statistic = std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    } else {
      r.t_statistic = -std::numeric_limits<double>::infinity();
      r.p_value = 1.0;
    }
  } else {
    r.t_statistic = mean_d / (sd / std::sqrt(static_cast<double>(n)));
    r.p_value = 1.0 - student_t_cdf(r.t_statistic, n - 1);
  }
  r.significant = r.p_value <= kSignificanceLevel;
  return r;
}

}  // namespace bnkit::stats
