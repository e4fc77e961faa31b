#pragma once

// Verification instruments: the eigenvalue collapse metric, the three-class
// linear motivation example, the prototype-error recursion simulator and
// angular statistics of unit-sphere feature dumps.

#include "fedmr/data.hpp"
#include "fedmr/jacobi.hpp"
#include "fedmr/tensor.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace fedmr {

// (1 / normalizer) * sum_{i<k} (lambda_i - mean of the top k)^2 over the k
// largest eigenvalues.
Scalar eigvar_topk(const Eigen::Ref<const Vector>& lambda, Index k, Scalar normalizer = 128.0);

template <typename Derived>
Scalar eigvar_topk_matrix(const Eigen::MatrixBase<Derived>& m, Index k,
                          Scalar normalizer = 128.0) {
  return eigvar_topk(sym_eigenvalues(m), k, normalizer);
}

// --- three-class linear example ----------------------------------------------

struct MotivationWeights {
  Matrix w_star;                  // 3 x 2, one row per class
  std::array<Matrix, 3> clients;  // clients own (c1,c2), (c1,c3), (c2,c3)
  Matrix w_hat;                   // unweighted average of the client matrices
  Matrix w_hat_printed;
};

MotivationWeights motivation_weights();

// Angle in degrees; throws DomainError for a zero vector.
Scalar angle_between(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v);

enum class ShiftVariant {
  kPlain,     // each client trains on its two classes only
  kCentroid,  // plus the centroid of its missing class, weighted like that class
  kIid,       // every client gets a random third of all samples
};

struct ShiftOptions {
  Scalar weight_decay = 1e-3;
  Scalar grad_tol = 1e-6;
  int max_newton_steps = 200;
  std::uint64_t seed = 0;  // used by the IID split
};

struct ShiftResult {
  Matrix w_avg;              // sample-weighted mean of the client weights, 3 x 2
  std::array<Matrix, 3> clients;
  Scalar shift_deg = 0.0;    // c2 row of w_avg against the c2 row of w_star
};

// Bias-free multinomial logistic regression minimised by damped Newton steps;
// the objective is the weighted mean cross entropy plus weight_decay / 2 ||W||^2.
Matrix fit_logistic(const Eigen::Ref<const Matrix>& x, std::span<const int> labels,
                    const Eigen::Ref<const Vector>& sample_weights, int num_classes,
                    const ShiftOptions& opts);

ShiftResult empirical_shift(const Dataset& ds, ShiftVariant variant, const ShiftOptions& opts = {});

// --- prototype-error recursion -----------------------------------------------

struct TheoremSimConfig {
  Scalar a_star = 0.0;
  Scalar G = 1.0;
  Scalar p_k = 0.5;    // weight of the client's own previous value
  Scalar p_hat = 0.0;  // weight of clients whose value is exactly a_star
  Scalar delta = 0.0;  // bound on the per-step perturbation
  int T = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TheoremSimResult {
  std::vector<Scalar> r;      // r_0 .. r_T
  std::vector<Scalar> error;  // |r_t - a_star|
  std::vector<Scalar> bound;  // 2 (1 - p_hat Gamma_t) G + delta Gamma_t, t >= 1 (index 0 holds 2G)
  int violations = 0;
  bool satisfied = true;
};

// r_{t+1} = p_hat a* + p_k r_t + q sigma_t + xi_t with q = 1 - p_k - p_hat,
// sigma_t ~ U[-G, G], xi_t ~ U[-delta, delta], r_0 ~ U[-G, G].
TheoremSimResult theorem1_simulate(const TheoremSimConfig& cfg);

// Configuration drawn uniformly over the admissible region.
TheoremSimConfig random_theorem_config(std::mt19937_64& rng, int T = 100);

// --- unit-sphere features ----------------------------------------------------

struct SphereProjection {
  Matrix points;  // unit-norm rows
  Labels labels;
  Index skipped = 0;  // zero-norm rows
};

SphereProjection project_to_sphere(const Eigen::Ref<const Matrix>& z, std::span<const int> labels);

// Mean over classes of the mean angle (degrees) between each unit row and the
// normalised class mean direction.
Scalar angular_spread(const Eigen::Ref<const Matrix>& points, std::span<const int> labels);

}  // namespace fedmr
