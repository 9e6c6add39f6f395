#include "mirrorsel/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mirrorsel/errors.hpp"
#include "mirrorsel/rng.hpp"

namespace mirrorsel {
namespace {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd = 1.0) {
  Matrix out(rows, cols);
  // Row-major fill order so that the draw sequence matches "row i, column j".
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = sd * rng.normal();
  return out;
}

Matrix orthonormal_columns(Eigen::Index rows, Eigen::Index cols, Rng rng) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    Rng draw = rng.substream(static_cast<std::uint64_t>(attempt));
    Matrix q = orthonormal_basis(gaussian_matrix(rows, cols, draw));
    if (q.cols() == cols) return q;
  }
  throw DegenerateInput("orthonormal_columns: Gaussian draw rank-deficient after 8 attempts");
}

double design_multiplier(const DesignSpec& spec) {
  return spec.scale == DesignScale::OneOverSqrtN ? 1.0 / std::sqrt(static_cast<double>(spec.n))
                                                 : 1.0;
}

Matrix spiked_with_column_factor(const DesignSpec& spec, std::size_t rows, const Matrix& v2,
                                 Rng row_rng, Rng noise_rng) {
  const auto r = static_cast<Eigen::Index>(spec.spike_rank);
  const Matrix v1 = orthonormal_columns(static_cast<Eigen::Index>(rows), r, row_rng);
  Matrix x = v1 * v2.transpose();
  x += gaussian_matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(spec.n),
                       noise_rng, design_multiplier(spec));
  return x;
}

}  // namespace

SignalMatrix SignalMatrix::from_matrix(Matrix b) {
  SignalMatrix s;
  s.B = std::move(b);
  for (Eigen::Index j = 0; j < s.B.rows(); ++j) {
    if ((s.B.row(j).array() == 0.0).all()) s.null_set.push_back(static_cast<std::size_t>(j));
  }
  return s;
}

std::vector<std::size_t> SignalMatrix::signal_set() const {
  std::vector<std::size_t> out;
  std::size_t next_null = 0;
  for (std::size_t j = 0; j < static_cast<std::size_t>(B.rows()); ++j) {
    if (next_null < null_set.size() && null_set[next_null] == j) {
      ++next_null;
      continue;
    }
    out.push_back(j);
  }
  return out;
}

bool SignalMatrix::is_null(std::size_t j) const {
  return std::binary_search(null_set.begin(), null_set.end(), j);
}

void DesignSpec::validate() const {
  if (m == 0 || n == 0) throw InvalidArgument("DesignSpec: m and n must be positive");
  if (family == DesignFamily::Ar1Gaussian && !(rho >= 0.0 && rho < 1.0))
    throw InvalidArgument("DesignSpec: rho must lie in [0, 1)");
  if (family == DesignFamily::Spiked && (spike_rank == 0 || spike_rank >= std::min(m, n)))
    throw InvalidArgument("DesignSpec: spike_rank must satisfy 0 < r < min(m, n)");
}

SignalMatrix make_signal_regression(std::size_t n, std::size_t q_star, DesignScale scale) {
  if (q_star < 1 || n % 2 != 0 || n < 2 * q_star)
    throw InvalidArgument("make_signal_regression: need n even, q_star >= 1, n >= 2 q_star");
  const double c = scale == DesignScale::UnitVariance ? 2.0 / std::sqrt(static_cast<double>(n))
                                                      : 2.0;
  const auto half = static_cast<Eigen::Index>(n / 2);
  Matrix b = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q_star));
  b.col(0).head(half).setConstant(c);
  for (Eigen::Index k = 1; k < static_cast<Eigen::Index>(q_star); ++k) b(k, k) = 1.0;
  return SignalMatrix::from_matrix(std::move(b));
}

SignalMatrix make_signal_classification(std::size_t n, std::uint64_t seed) {
  if (n % 2 != 0 || n < 6)
    throw InvalidArgument("make_signal_classification: need n even and n >= 6");
  const auto half = static_cast<Eigen::Index>(n / 2);
  const Matrix q = orthonormal_columns(half, kNumClasses, Rng(seed, streams::kSignal));
  Matrix b = Matrix::Zero(static_cast<Eigen::Index>(n), kNumClasses);
  b.topRows(half) = q;
  return SignalMatrix::from_matrix(std::move(b));
}

Matrix sample_design(const DesignSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto m = static_cast<Eigen::Index>(spec.m);
  const auto n = static_cast<Eigen::Index>(spec.n);
  const double mult = design_multiplier(spec);
  Rng rng(seed, streams::kDesign);
  switch (spec.family) {
    case DesignFamily::IidGaussian:
      return gaussian_matrix(m, n, rng, mult);
    case DesignFamily::ScaledT3: {
      const double t_mult = spec.normalize_t ? mult / std::sqrt(3.0) : mult;
      Matrix x(m, n);
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j) x(i, j) = t_mult * rng.student_t(3);
      return x;
    }
    case DesignFamily::Spiked: {
      const Matrix v2 = orthonormal_columns(n, static_cast<Eigen::Index>(spec.spike_rank),
                                            Rng(seed, streams::kSpikeCol));
      return spiked_with_column_factor(spec, spec.m, v2, Rng(seed, streams::kSpikeRow), rng);
    }
    case DesignFamily::Ar1Gaussian: {
      const double innov = std::sqrt(1.0 - spec.rho * spec.rho);
      Matrix x(m, n);
      for (Eigen::Index i = 0; i < m; ++i) {
        double prev = rng.normal();
        x(i, 0) = mult * prev;
        for (Eigen::Index j = 1; j < n; ++j) {
          prev = spec.rho * prev + innov * rng.normal();
          x(i, j) = mult * prev;
        }
      }
      return x;
    }
  }
  throw InvalidArgument("sample_design: unknown family");
}

std::pair<Matrix, Matrix> sample_spiked_halves(const DesignSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.family != DesignFamily::Spiked)
    throw InvalidArgument("sample_spiked_halves: family must be Spiked");
  if (spec.m % 2 != 0) throw InvalidArgument("sample_spiked_halves: m must be even");
  const std::size_t half = spec.m / 2;
  if (spec.spike_rank >= half)
    throw InvalidArgument("sample_spiked_halves: spike_rank must be below m/2");
  const Matrix v2 = orthonormal_columns(static_cast<Eigen::Index>(spec.n),
                                        static_cast<Eigen::Index>(spec.spike_rank),
                                        Rng(seed, streams::kSpikeCol));
  const Rng rows(seed, streams::kSpikeRow);
  const Rng noise(seed, streams::kDesign);
  return {spiked_with_column_factor(spec, half, v2, rows.substream(100), noise.substream(100)),
          spiked_with_column_factor(spec, half, v2, rows.substream(200), noise.substream(200))};
}

double regression_mean(const Eigen::Ref<const Vector>& u) {
  const double d = u(0) - 2.0;
  double y = d * d;
  for (Eigen::Index k = 1; k < u.size(); ++k) y += std::max(u(k), 0.0) * u(k - 1);
  return y;
}

Dataset gen_regression(const Matrix& X, const SignalMatrix& signal, std::uint64_t seed,
                       double noise_sd) {
  if (X.cols() != signal.B.rows())
    throw InvalidArgument("gen_regression: X has " + std::to_string(X.cols()) +
                          " columns but B has " + std::to_string(signal.B.rows()) + " rows");
  if (signal.q_star() < 1) throw InvalidArgument("gen_regression: q_star must be >= 1");
  const Matrix proj = X * signal.B;
  Rng rng(seed, streams::kNoise);
  Dataset ds{X, Vector(X.rows()), signal, Dgp::Regression51};
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Vector u = proj.row(i).transpose();
    ds.y(i) = regression_mean(u) + noise_sd * rng.normal();
  }
  return ds;
}

std::array<double, kNumClasses> class_scores(const Eigen::Ref<const Vector>& u,
                                             const ClassificationParams& p) {
  if (u.size() != kNumClasses) throw InvalidArgument("class_scores: need exactly 3 projections");
  std::array<double, kNumClasses> h{};
  for (int k = 0; k < kNumClasses; ++k) {
    h[k] = p.alpha[k] * std::sin(p.omega[k] * u(0)) + p.beta[k] * std::cos(p.nu[k] * u(1)) +
           p.gamma[k] * u(2) + p.bias[k];
  }
  return h;
}

std::array<double, kNumClasses> class_probabilities(const std::array<double, kNumClasses>& h,
                                                    double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("class_probabilities: tau must be positive");
  const double top = *std::max_element(h.begin(), h.end());
  std::array<double, kNumClasses> p{};
  double total = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    p[k] = std::exp((h[k] - top) / tau);
    total += p[k];
  }
  for (auto& v : p) v /= total;
  return p;
}

Dataset gen_classification(const Matrix& X, const SignalMatrix& signal,
                           const ClassificationParams& params, std::uint64_t seed) {
  if (!(params.tau > 0.0)) throw InvalidArgument("gen_classification: tau must be positive");
  if (X.cols() != signal.B.rows() || signal.q_star() != kNumClasses)
    throw InvalidArgument("gen_classification: need B of shape n x 3 conforming to X");
  const Matrix proj = X * signal.B;
  Rng rng(seed, streams::kLabels);
  Dataset ds{X, Vector(X.rows()), signal, Dgp::ClassificationD};
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Vector u = proj.row(i).transpose();
    const auto p = class_probabilities(class_scores(u, params), params.tau);
    const double draw = rng.uniform();
    int label = kNumClasses - 1;
    double acc = 0.0;
    for (int k = 0; k < kNumClasses; ++k) {
      acc += p[k];
      if (draw < acc) {
        label = k;
        break;
      }
    }
    ds.y(i) = label;
  }
  return ds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t m,
                                                                            std::uint64_t seed) {
  if (m % 2 != 0) throw InvalidArgument("split_rows: m must be even, got " + std::to_string(m));
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed, streams::kSplit);
  for (std::size_t i = m; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<std::size_t> first(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m / 2));
  std::vector<std::size_t> second(perm.begin() + static_cast<std::ptrdiff_t>(m / 2), perm.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {std::move(first), std::move(second)};
}

Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out{Matrix(static_cast<Eigen::Index>(rows.size()), ds.X.cols()),
              Vector(static_cast<Eigen::Index>(rows.size())), ds.signal, ds.dgp};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = static_cast<Eigen::Index>(rows[r]);
    out.X.row(static_cast<Eigen::Index>(r)) = ds.X.row(src);
    out.y(static_cast<Eigen::Index>(r)) = ds.y(src);
  }
  return out;
}

std::pair<Dataset, Dataset> split_rows(const Dataset& ds, std::uint64_t seed) {
  auto [a, b] = split_indices(ds.m(), seed);
  return {take_rows(ds, a), take_rows(ds, b)};
}

std::string to_string(DesignFamily f) {
  switch (f) {
    case DesignFamily::IidGaussian: return "IidGaussian";
    case DesignFamily::ScaledT3: return "ScaledT3";
    case DesignFamily::Spiked: return "Spiked";
    case DesignFamily::Ar1Gaussian: return "Ar1Gaussian";
  }
  return "?";
}

std::string to_string(DesignScale s) {
  return s == DesignScale::UnitVariance ? "UnitVariance" : "OneOverSqrtN";
}

std::string to_string(Dgp d) {
  return d == Dgp::Regression51 ? "Regression51" : "ClassificationD";
}

DesignFamily design_family_from_string(const std::string& s) {
  for (auto f : {DesignFamily::IidGaussian, DesignFamily::ScaledT3, DesignFamily::Spiked,
                 DesignFamily::Ar1Gaussian})
    if (to_string(f) == s) return f;
  throw ConfigError("unknown design family '" + s + "'");
}

DesignScale design_scale_from_string(const std::string& s) {
  for (auto v : {DesignScale::UnitVariance, DesignScale::OneOverSqrtN})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown design scale '" + s + "'");
}

Dgp dgp_from_string(const std::string& s) {
  for (auto v : {Dgp::Regression51, Dgp::ClassificationD})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown dgp '" + s + "'");
}

}  // namespace mirrorsel
