#include "mirrorsel/diag.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

#include "mirrorsel/errors.hpp"
#include "mirrorsel/rng.hpp"

namespace mirrorsel {
namespace {

double sorted_quantile(const std::vector<double>& s, double p) {
  const double pos = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

std::vector<double> to_std(const Eigen::Ref<const Vector>& v) {
  return {v.data(), v.data() + v.size()};
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("normal_quantile: p must lie in (0, 1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

Vector project_complement(const Eigen::Ref<const Vector>& xi, const SignalMatrix& signal) {
  if (xi.size() != signal.B.rows())
    throw InvalidArgument("project_complement: xi has " + std::to_string(xi.size()) +
                          " entries, B has " + std::to_string(signal.B.rows()) + " rows");
  const Matrix q = orthonormal_basis(signal.B);
  if (q.cols() == 0) return xi;
  return xi - q * (q.transpose() * xi);
}

Vector standardized_null(const Eigen::Ref<const Vector>& xi, const SignalMatrix& signal) {
  const double norm = project_complement(xi, signal).norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw DegenerateInput("standardized_null: projected sensitivity has zero norm");
  const double scale = std::sqrt(static_cast<double>(xi.size())) / norm;
  Vector out(static_cast<Eigen::Index>(signal.null_set.size()));
  for (std::size_t k = 0; k < signal.null_set.size(); ++k)
    out(static_cast<Eigen::Index>(k)) = scale * xi(static_cast<Eigen::Index>(signal.null_set[k]));
  return out;
}

double ks_statistic(const std::vector<double>& sample) {
  if (sample.empty()) throw InvalidArgument("ks_statistic: empty sample");
  std::vector<double> s(sample);
  if (std::any_of(s.begin(), s.end(), [](double v) { return std::isnan(v); }))
    throw InvalidArgument("ks_statistic: NaN in sample");
  std::sort(s.begin(), s.end());
  const auto n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double cdf = normal_cdf(s[i]);
    const auto rank = static_cast<double>(i + 1);
    d = std::max({d, rank / n - cdf, cdf - (rank - 1.0) / n});
  }
  return d;
}

double ks_statistic(const Eigen::Ref<const Vector>& sample) { return ks_statistic(to_std(sample)); }

std::vector<QQPoint> qq_points(const Eigen::Ref<const Vector>& sample) {
  std::vector<double> s = to_std(sample);
  std::sort(s.begin(), s.end());
  std::vector<QQPoint> out;
  out.reserve(s.size());
  const auto n = static_cast<double>(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    out.push_back({normal_quantile((static_cast<double>(i) + 0.5) / n), s[i]});
  return out;
}

std::vector<HistBin> histogram(const Eigen::Ref<const Vector>& sample, std::size_t bins) {
  if (sample.size() == 0) return {};
  std::vector<double> s = to_std(sample);
  std::sort(s.begin(), s.end());
  const double lo = s.front();
  const double hi = s.back();
  if (bins == 0) {
    const double iqr = sorted_quantile(s, 0.75) - sorted_quantile(s, 0.25);
    const double width = 2.0 * iqr / std::cbrt(static_cast<double>(s.size()));
    bins = width > 0.0 ? static_cast<std::size_t>(std::ceil((hi - lo) / width))
                       : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(s.size()))));
    bins = std::max<std::size_t>(bins, 1);
  }
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  std::vector<HistBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) out[b] = {lo + static_cast<double>(b) * width, width, 0};
  for (double v : s) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    ++out[std::min(b, bins - 1)].count;
  }
  return out;
}

NormalityReport normality_report(const Eigen::Ref<const Vector>& standardized, std::size_t bins) {
  NormalityReport r;
  r.standardized = standardized;
  r.ks_stat = ks_statistic(standardized);
  r.qq_points = qq_points(standardized);
  r.hist = histogram(standardized, bins);
  const auto n = static_cast<double>(standardized.size());
  r.mean = standardized.mean();
  r.variance = n > 1 ? (standardized.array() - r.mean).square().sum() / (n - 1.0) : 0.0;
  return r;
}

ProjectionNormStats projection_norm_check(std::size_t n, std::size_t q_star, std::size_t trials,
                                          std::uint64_t seed) {
  if (q_star > n) throw InvalidArgument("projection_norm_check: q_star exceeds n");
  if (n == 0 || trials == 0) throw InvalidArgument("projection_norm_check: n and trials must be positive");
  ProjectionNormStats st;
  st.target = std::sqrt(static_cast<double>(n - q_star) / static_cast<double>(n));
  Rng rng(seed, streams::kDiag);
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double z = rng.normal();
      if (j >= q_star) sq += z * z;
    }
    const double stat = std::sqrt(sq / static_cast<double>(n));
    total += stat;
    st.max_deviation = std::max(st.max_deviation, std::abs(stat - st.target));
  }
  st.mean = total / static_cast<double>(trials);
  return st;
}

}  // namespace mirrorsel
