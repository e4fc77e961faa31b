#pragma once

// Manifold-reshaping objectives: per-class standardization, the intra-class
// decorrelation loss, class prototypes, the prototype margin loss, and the
// combined local objective (including an optional proximal term).

#include "fedmr/model.hpp"
#include "fedmr/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace fedmr {

enum class StdConvention {
  kBessel,      // 1/(N-1) for both sigma and the covariance; diag(M) == 1
  kPopulation,  // 1/N for sigma, 1/(N-1) for the covariance
};

enum class InterMode {
  kHinge,  // max(||z - g_i|| - ||z - g_j|| + margin, 0)
  kPull,   // ||z - g_i||, the margin-free limit
};

struct LossConfig {
  Scalar mu1 = 0.0;
  Scalar mu2 = 0.0;
  Scalar margin = 0.0;
  std::optional<Index> lite_n;
  Scalar prox_mu = 0.0;
  // Contrast each anchor class against every global prototype instead of only
  // the classes present locally.
  bool contrast_all = false;
  InterMode inter_mode = InterMode::kHinge;
  StdConvention std_convention = StdConvention::kBessel;
  Scalar std_floor = 1e-8;
  // Anchor or contrast classes without a global prototype are dropped from the
  // inter-class loss instead of raising a protocol error.
  bool skip_missing_prototypes = false;

  void validate() const;
};

struct ClassStats {
  int label = 0;
  Index count = 0;
  RowVector mean;
  RowVector std;  // before flooring
  bool floored = false;
};

struct StandardizedClass {
  ClassStats stats;
  std::vector<Index> rows;  // batch rows of this class
  Tensor z_hat;             // count x d
};

struct Standardization {
  std::vector<StandardizedClass> classes;  // ascending label, count >= 2
  std::vector<int> excluded;               // labels with a single sample
};

Standardization standardize_per_class(const Tensor& z, std::span<const int> labels,
                                      const LossConfig& cfg = {});

// M = z_hat^T z_hat / (N - 1)
Tensor class_covariance(const StandardizedClass& cls);

struct IntraLoss {
  Tensor value;
  int classes_used = 0;
  bool any_floored = false;
  bool no_includable_class = false;  // value is a zero scalar
};

IntraLoss intra_loss(const Tensor& z, std::span<const int> labels, const LossConfig& cfg = {});

// Standardized per-class covariance matrices computed without a tape, for
// metrics and identity checks. Classes with fewer than two rows are skipped.
std::map<int, Matrix> standardized_covariances(const Eigen::Ref<const Matrix>& z,
                                               std::span<const int> labels,
                                               const LossConfig& cfg = {});

// |sum_i (lambda_i - mean lambda)^2 - (||M||_F^2 - d)|, eigenvalues from the
// Jacobi solver. Exact only when trace(M) == d.
Scalar lemma1_residual(const Eigen::Ref<const Matrix>& m);

// --- prototypes --------------------------------------------------------------

struct Prototype {
  RowVector centroid;
  Index count = 0;
};

struct PrototypeSet {
  Index dim = 0;
  std::map<int, Prototype> classes;

  bool contains(int label) const { return classes.count(label) != 0; }
  const RowVector& at(int label) const;
  std::vector<int> labels() const;
  // Parameters needed to transmit the set: |classes| * dim.
  Index param_count() const { return static_cast<Index>(classes.size()) * dim; }
};

PrototypeSet local_prototypes(const Eigen::Ref<const Matrix>& z, std::span<const int> labels);

// Mean over ordered (anchor, contrast) class pairs of the per-sample hinge on
// distance-to-own-prototype minus distance-to-contrast-prototype. Anchors are
// the labels present in the batch; contrasts default to the same set (or every
// global class when cfg.contrast_all). `contrast` overrides the default set.
Tensor inter_loss(const Tensor& z, std::span<const int> labels, const PrototypeSet& globals,
                  const LossConfig& cfg, std::span<const int> contrast = {});

// inter_loss on a uniform random subset of min(lite_n, n) rows. Contrast
// classes stay those of the whole batch.
Tensor inter_loss_lite(const Tensor& z, std::span<const int> labels, const PrototypeSet& globals,
                       const LossConfig& cfg, std::uint64_t seed);

struct LossTerms {
  Tensor total;
  Scalar cls = 0.0;
  Scalar intra = 0.0;
  Scalar inter = 0.0;
  Scalar prox = 0.0;
};

// cls + mu1 * intra + mu2 * inter + prox_mu / 2 * ||w - w_global||^2.
// Terms with zero weight are not built. `lite_seed` feeds the lite sampler.
LossTerms total_loss(const TapedModel& model, const Tensor& batch, std::span<const int> labels,
                     const PrototypeSet* globals, const LossConfig& cfg,
                     const ModelParams* global_params, std::uint64_t lite_seed = 0);

}  // namespace fedmr
