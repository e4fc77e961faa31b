#pragma once

// Cyclic Jacobi eigenvalue solver for small dense symmetric matrices.

#include "fedmr/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>

namespace fedmr {

template <typename Scalar>
struct JacobiOptions {
  Scalar symmetry_tol = Scalar(1e-9);
  // Stop once the off-diagonal Frobenius mass drops below tol * max(1, ||M||_F).
  Scalar off_diagonal_tol = Scalar(1e-12);
  int max_sweeps = 100;
};

template <typename Derived>
typename Derived::Scalar off_diagonal_norm(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  Scalar s = 0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

// Eigenvalues of a symmetric matrix in descending order.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> sym_eigenvalues(
    const Eigen::MatrixBase<Derived>& m,
    const JacobiOptions<typename Derived::Scalar>& opts = {}) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  if (m.rows() != m.cols()) throw ContractError("sym_eigenvalues: matrix is not square");
  const Eigen::Index n = m.rows();
  Mat a = m;
  const Scalar scale = std::max<Scalar>(Scalar(1), a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > opts.symmetry_tol * scale)
    throw ContractError("sym_eigenvalues: matrix is not symmetric");
  a = (a + a.transpose()) / Scalar(2);

  const Scalar stop = opts.off_diagonal_tol * std::max<Scalar>(Scalar(1), a.norm());
  for (int sweep = 0; sweep < opts.max_sweeps && off_diagonal_norm(a) >= stop; ++sweep) {
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar apq = a(p, q);
        if (apq == Scalar(0)) continue;
        const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
        const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar s = t * c;
        // A <- J^T A J with J the (p, q) plane rotation.
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar akp = a(k, p);
          const Scalar akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar apk = a(p, k);
          const Scalar aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }

  Vec lambda = a.diagonal();
  std::sort(lambda.data(), lambda.data() + lambda.size(), std::greater<Scalar>());
  return lambda;
}

}  // namespace fedmr
