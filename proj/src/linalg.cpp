#include "mirrorsel/linalg.hpp"

#include <vector>

namespace mirrorsel {

Matrix orthonormal_basis(const Matrix& a, double tol) {
  std::vector<Vector> kept;
  kept.reserve(static_cast<std::size_t>(a.cols()));
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    Vector v = a.col(k);
    const double original = v.norm();
    if (original == 0.0) continue;
    // Two passes of MGS keep the basis orthogonal to working precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : kept) v -= q.dot(v) * q;
    }
    const double residual = v.norm();
    if (residual <= tol * original) continue;
    kept.push_back(v / residual);
  }
  Matrix q(a.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) q.col(static_cast<Eigen::Index>(k)) = kept[k];
  return q;
}

Eigen::Index numerical_rank(const Matrix& a, double tol) {
  return orthonormal_basis(a, tol).cols();
}

}  // namespace mirrorsel
