#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "mirrorsel/datagen.hpp"
#include "mirrorsel/linalg.hpp"

namespace mirrorsel {

struct QQPoint {
  double theoretical;
  double empirical;
};

struct HistBin {
  double left;
  double width;
  std::size_t count;
};

struct NormalityReport {
  Vector standardized;
  double ks_stat = 0.0;
  std::vector<QQPoint> qq_points;
  std::vector<HistBin> hist;
  double mean = 0.0;
  double variance = 0.0;
};

double normal_cdf(double x);
double normal_quantile(double p);

/// (I - B (B^T B)^+ B^T) xi, computed as xi - Q Q^T xi with Q an
/// orthonormal basis of Col(B).
Vector project_complement(const Eigen::Ref<const Vector>& xi, const SignalMatrix& signal);

/// sqrt(n) xi_j / ||P_B^perp xi|| for j in the null set. Throws
/// DegenerateInput when the projected norm is zero.
Vector standardized_null(const Eigen::Ref<const Vector>& xi, const SignalMatrix& signal);

/// One-sample Kolmogorov-Smirnov distance to N(0, 1), exact at the jumps.
double ks_statistic(const std::vector<double>& sample);
double ks_statistic(const Eigen::Ref<const Vector>& sample);

/// Sorted sample against Phi^{-1}((i - 0.5) / N).
std::vector<QQPoint> qq_points(const Eigen::Ref<const Vector>& sample);

/// Freedman-Diaconis bins unless `bins` > 0.
std::vector<HistBin> histogram(const Eigen::Ref<const Vector>& sample, std::size_t bins = 0);

NormalityReport normality_report(const Eigen::Ref<const Vector>& standardized,
                                 std::size_t bins = 0);

struct ProjectionNormStats {
  double mean = 0.0;
  double max_deviation = 0.0;  // max |stat - sqrt((n - q*) / n)|
  double target = 0.0;         // sqrt((n - q*) / n)
};

/// ||P_B^perp z|| / sqrt(n) over Gaussian z, with B spanning the first
/// q* coordinates (the law does not depend on which q*-dim subspace).
ProjectionNormStats projection_norm_check(std::size_t n, std::size_t q_star, std::size_t trials,
                                          std::uint64_t seed);

}  // namespace mirrorsel
