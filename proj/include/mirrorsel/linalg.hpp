#pragma once

#include <Eigen/Dense>

namespace mirrorsel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Modified Gram-Schmidt on the columns of `a`. Columns whose residual norm
/// falls below `tol` times their original norm are dropped, so the result
/// is an orthonormal basis of Col(a) with rank(a) columns.
Matrix orthonormal_basis(const Matrix& a, double tol = 1e-10);

/// Numerical rank via the orthonormal basis above.
Eigen::Index numerical_rank(const Matrix& a, double tol = 1e-10);

}  // namespace mirrorsel
