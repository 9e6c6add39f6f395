#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mirrorsel/linalg.hpp"

namespace mirrorsel {

/// Signal matrix B (n x q*) of a multi-index model together with the
/// null index set, i.e. the rows of B that are identically zero.
struct SignalMatrix {
  Matrix B;
  std::vector<std::size_t> null_set;

  /// Builds the null set from the zero rows of `b`.
  static SignalMatrix from_matrix(Matrix b);

  Eigen::Index n() const { return B.rows(); }
  Eigen::Index q_star() const { return B.cols(); }
  /// Complement of null_set, ascending.
  std::vector<std::size_t> signal_set() const;
  bool is_null(std::size_t j) const;
};

enum class DesignFamily { IidGaussian, ScaledT3, Spiked, Ar1Gaussian };
enum class DesignScale { UnitVariance, OneOverSqrtN };
enum class Dgp { Regression51, ClassificationD };

/// Law of the design matrix X (m x n).
///
/// `scale` multiplies every family by 1 (UnitVariance) or 1/sqrt(n)
/// (OneOverSqrtN). For Spiked it applies to the noise E only, the low-rank
/// part V1 V2^T having orthonormal factors. ScaledT3 draws raw t(3)
/// entries; with `normalize_t` they are divided by sqrt(3) to get unit
/// variance.
struct DesignSpec {
  DesignFamily family = DesignFamily::IidGaussian;
  std::size_t m = 0;
  std::size_t n = 0;
  double rho = 0.0;
  std::size_t spike_rank = 2;
  DesignScale scale = DesignScale::UnitVariance;
  bool normalize_t = false;

  /// Throws InvalidArgument when the invariants do not hold.
  void validate() const;
};

struct Dataset {
  Matrix X;
  /// Regression response or class labels stored as 0.0, 1.0, 2.0.
  Vector y;
  SignalMatrix signal;
  Dgp dgp = Dgp::Regression51;

  std::size_t m() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t n() const { return static_cast<std::size_t>(X.cols()); }
};

inline constexpr int kNumClasses = 3;

/// Score coefficients of the three-class softmax model. Defaults are
/// not taken from any publication; override them through the config.
struct ClassificationParams {
  std::array<double, kNumClasses> alpha{1.5, -1.0, 0.5};
  std::array<double, kNumClasses> beta{1.0, 1.2, -0.8};
  std::array<double, kNumClasses> gamma{1.0, -0.5, 0.7};
  std::array<double, kNumClasses> omega{1.0, 2.0, 1.5};
  std::array<double, kNumClasses> nu{2.0, 1.0, 1.5};
  std::array<double, kNumClasses> bias{0.0, 0.0, 0.0};
  double tau = 1.0;
};

/// b_1 = c on the first n/2 coordinates (c = 2/sqrt(n) for unit-variance
/// designs, 2 for 1/sqrt(n)-scaled ones), b_k = e_k for k = 2..q*.
SignalMatrix make_signal_regression(std::size_t n, std::size_t q_star,
                                    DesignScale scale = DesignScale::UnitVariance);

/// Orthonormalized Gaussian (n/2) x 3 block embedded in the top half.
SignalMatrix make_signal_classification(std::size_t n, std::uint64_t seed);

Matrix sample_design(const DesignSpec& spec, std::uint64_t seed);

/// Two Spiked samples of m/2 rows each sharing the column factor V2, with
/// independent row factors and noise.
std::pair<Matrix, Matrix> sample_spiked_halves(const DesignSpec& spec, std::uint64_t seed);

/// Noise-free regression mean g(u_1) + sum_{k>=2} h(u_k) u_{k-1} for
/// projections u = B^T x, with g(u) = (u - 2)^2 and h(u) = max(u, 0).
double regression_mean(const Eigen::Ref<const Vector>& projections);

/// y_i = regression_mean(B^T x_i) + noise_sd * eps_i, eps_i ~ N(0, 1).
Dataset gen_regression(const Matrix& X, const SignalMatrix& signal, std::uint64_t seed,
                       double noise_sd = 1.0);

/// Class scores h_k for projections u = B^T x (needs q* = 3).
std::array<double, kNumClasses> class_scores(const Eigen::Ref<const Vector>& projections,
                                             const ClassificationParams& params);

/// softmax(h / tau).
std::array<double, kNumClasses> class_probabilities(const std::array<double, kNumClasses>& h,
                                                    double tau);

Dataset gen_classification(const Matrix& X, const SignalMatrix& signal,
                           const ClassificationParams& params, std::uint64_t seed);

/// Uniformly random partition of 0..m-1 into two ascending halves of m/2.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t m,
                                                                            std::uint64_t seed);

std::pair<Dataset, Dataset> split_rows(const Dataset& ds, std::uint64_t seed);

Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& rows);

std::string to_string(DesignFamily f);
std::string to_string(DesignScale s);
std::string to_string(Dgp d);
DesignFamily design_family_from_string(const std::string& s);
DesignScale design_scale_from_string(const std::string& s);
Dgp dgp_from_string(const std::string& s);

}  // namespace mirrorsel
