#include "fedmr/analysis.hpp"

#include "fedmr/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <string>

namespace fedmr {

Scalar eigvar_topk(const Eigen::Ref<const Vector>& lambda, Index k, Scalar normalizer) {
  if (k < 1 || k > lambda.size())
    throw ContractError("eigvar_topk: k=" + std::to_string(k) + " with " +
                        std::to_string(lambda.size()) + " eigenvalues");
  if (!(normalizer > 0.0)) throw DomainError("eigvar_topk: normalizer must be > 0");
  Vector sorted = lambda;
  std::sort(sorted.data(), sorted.data() + sorted.size(), std::greater<Scalar>());
  const auto top = sorted.head(k);
  return (top.array() - top.mean()).square().sum() / normalizer;
}

MotivationWeights motivation_weights() {
  const Scalar s3 = std::numbers::sqrt3;
  MotivationWeights w;
  w.w_star.resize(3, 2);
  w.w_star << 1.0, 0.0, -s3 / 2, 0.5, -s3 / 2, -0.5;
  for (auto& m : w.clients) m.resize(3, 2);
  w.clients[0] << 0.5, -s3 / 2, -0.5, s3 / 2, 0.0, 0.0;
  w.clients[1] << 0.5, s3 / 2, 0.0, 0.0, -0.5, -s3 / 2;
  w.clients[2] << 0.0, 0.0, 0.0, 1.0, 0.0, -1.0;
  w.w_hat = (w.clients[0] + w.clients[1] + w.clients[2]) / 3.0;
  w.w_hat_printed.resize(3, 2);
  w.w_hat_printed << 1.0 / 3.0, 0.0, -1.0 / 6.0, (s3 + 2.0) / 6.0, -1.0 / 6.0, -(s3 + 2.0) / 6.0;
  return w;
}

Scalar angle_between(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
  if (u.size() != v.size()) throw DimensionError("angle_between: length mismatch");
  const Scalar nu = u.norm();
  const Scalar nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw DomainError("angle_between: zero vector");
  const Scalar c = std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

namespace {

struct Objective {
  Scalar value = 0.0;
  Vector grad;
  Matrix hess;
};

// Parameters are the row-major flattening of the C x D weight matrix.
Objective logistic_objective(const Vector& theta, const Eigen::Ref<const Matrix>& x,
                             std::span<const int> labels, const Eigen::Ref<const Vector>& sw,
                             int c, Scalar wd, bool with_hessian) {
  const Index d = x.cols();
  const Index p = c * d;
  Matrix w(c, d);
  for (Index k = 0; k < c; ++k) w.row(k) = theta.segment(k * d, d).transpose();
  const Scalar total = sw.sum();

  Objective obj;
  obj.grad = Vector::Zero(p);
  if (with_hessian) obj.hess = Matrix::Zero(p, p);
  for (Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    Vector logits = w * xi;
    const Scalar m = logits.maxCoeff();
    Vector e = (logits.array() - m).exp();
    const Scalar z = e.sum();
    const Vector prob = e / z;
    const int y = labels[static_cast<std::size_t>(i)];
    const Scalar wi = sw(i) / total;
    obj.value += wi * (std::log(z) + m - logits(y));
    for (Index k = 0; k < c; ++k)
      obj.grad.segment(k * d, d) += wi * (prob(k) - (k == y ? 1.0 : 0.0)) * xi;
    if (with_hessian) {
      const Matrix xx = xi * xi.transpose();
      for (Index a = 0; a < c; ++a)
        for (Index b = 0; b < c; ++b) {
          const Scalar s = (a == b ? prob(a) : 0.0) - prob(a) * prob(b);
          obj.hess.block(a * d, b * d, d, d) += wi * s * xx;
        }
    }
  }
  obj.value += 0.5 * wd * theta.squaredNorm();
  obj.grad += wd * theta;
  if (with_hessian) obj.hess.diagonal().array() += wd;
  return obj;
}

}  // namespace

Matrix fit_logistic(const Eigen::Ref<const Matrix>& x, std::span<const int> labels,
                    const Eigen::Ref<const Vector>& sample_weights, int num_classes,
                    const ShiftOptions& opts) {
  if (static_cast<Index>(labels.size()) != x.rows() || sample_weights.size() != x.rows())
    throw DimensionError("fit_logistic: rows, labels and weights differ in length");
  if (!(opts.weight_decay > 0.0)) throw DomainError("fit_logistic: weight_decay must be > 0");
  const Index d = x.cols();
  Vector theta = Vector::Zero(num_classes * d);
  for (int step = 0; step < opts.max_newton_steps; ++step) {
    const Objective obj =
        logistic_objective(theta, x, labels, sample_weights, num_classes, opts.weight_decay, true);
    if (obj.grad.norm() <= opts.grad_tol) break;
    const Vector dir = obj.hess.ldlt().solve(-obj.grad);
    Scalar t = 1.0;
    const Scalar slope = obj.grad.dot(dir);
    while (t > 1e-12) {
      const Vector next = theta + t * dir;
      const Scalar f = logistic_objective(next, x, labels, sample_weights, num_classes,
                                          opts.weight_decay, false)
                           .value;
      if (f <= obj.value + 1e-4 * t * slope) break;
      t *= 0.5;
    }
    theta += t * dir;
  }
  const Objective last =
      logistic_objective(theta, x, labels, sample_weights, num_classes, opts.weight_decay, false);
  if (last.grad.norm() > opts.grad_tol)
    throw NumericError("fit_logistic: gradient norm " + std::to_string(last.grad.norm()) +
                       " above tolerance");
  Matrix w(num_classes, d);
  for (Index k = 0; k < num_classes; ++k) w.row(k) = theta.segment(k * d, d).transpose();
  return w;
}

ShiftResult empirical_shift(const Dataset& ds, ShiftVariant variant, const ShiftOptions& opts) {
  if (ds.num_classes != 3 || ds.input_dim() != 2)
    throw ContractError("empirical_shift: expects three classes in two dimensions");
  const std::array<std::array<int, 2>, 3> owned = {{{0, 1}, {0, 2}, {1, 2}}};

  std::vector<std::vector<Index>> by_class(3);
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(static_cast<Index>(i));

  std::vector<Index> iid_order;
  if (variant == ShiftVariant::kIid) {
    iid_order.resize(static_cast<std::size_t>(ds.size()));
    std::iota(iid_order.begin(), iid_order.end(), Index{0});
    std::mt19937_64 rng(opts.seed);
    std::shuffle(iid_order.begin(), iid_order.end(), rng);
  }

  ShiftResult out;
  out.w_avg = Matrix::Zero(3, 2);
  Scalar total = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<Index> rows;
    if (variant == ShiftVariant::kIid) {
      for (std::size_t i = k; i < iid_order.size(); i += 3) rows.push_back(iid_order[i]);
      std::sort(rows.begin(), rows.end());
    } else {
      for (int c : owned[k]) rows.insert(rows.end(), by_class[c].begin(), by_class[c].end());
    }
    Dataset local = ds.subset(rows);
    Vector weights = Vector::Ones(local.size());
    const Scalar samples = static_cast<Scalar>(local.size());

    if (variant == ShiftVariant::kCentroid) {
      const int missing = 3 - owned[k][0] - owned[k][1];
      const auto& miss_rows = by_class[static_cast<std::size_t>(missing)];
      RowVector centroid = RowVector::Zero(2);
      for (Index r : miss_rows) centroid += ds.features.row(r);
      centroid /= static_cast<Scalar>(miss_rows.size());
      local.features.conservativeResize(local.size() + 1, Eigen::NoChange);
      local.features.row(local.features.rows() - 1) = centroid;
      local.labels.push_back(missing);
      weights.conservativeResize(weights.size() + 1);
      weights(weights.size() - 1) = static_cast<Scalar>(miss_rows.size());
    }

    out.clients[k] = fit_logistic(local.features, local.labels, weights, 3, opts);
    out.w_avg += samples * out.clients[k];
    total += samples;
  }
  out.w_avg /= total;
  const MotivationWeights ref = motivation_weights();
  out.shift_deg = angle_between(out.w_avg.row(1).transpose(), ref.w_star.row(1).transpose());
  return out;
}

void TheoremSimConfig::validate() const {
  if (!(G > 0.0)) throw ConfigError("G must be > 0");
  if (!(std::abs(a_star) <= G)) throw ConfigError("|a_star| must be <= G");
  if (!(p_k > 0.0 && p_k < 1.0)) throw ConfigError("p_k must lie in (0, 1)");
  if (!(p_hat >= 0.0 && p_hat + p_k <= 1.0)) throw ConfigError("need p_hat >= 0 and p_hat + p_k <= 1");
  if (!(delta >= 0.0)) throw ConfigError("delta must be >= 0");
  if (T < 0) throw ConfigError("T must be >= 0");
}

TheoremSimResult theorem1_simulate(const TheoremSimConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<Scalar> unit(-1.0, 1.0);
  const Scalar q = std::max(0.0, 1.0 - cfg.p_k - cfg.p_hat);
  // Rounding slack only; the bound is tight in the worst case.
  const Scalar slack = 1e-12 * (cfg.G + cfg.delta);

  TheoremSimResult out;
  Scalar r = cfg.G * unit(rng);
  out.r.push_back(r);
  out.error.push_back(std::abs(r - cfg.a_star));
  out.bound.push_back(2.0 * cfg.G);
  for (int t = 1; t <= cfg.T; ++t) {
    const Scalar sigma = cfg.G * unit(rng);
    const Scalar xi = cfg.delta * unit(rng);
    r = cfg.p_hat * cfg.a_star + cfg.p_k * r + q * sigma + xi;
    const Scalar gamma = (1.0 - std::pow(cfg.p_k, t)) / (1.0 - cfg.p_k);
    const Scalar bound = 2.0 * (1.0 - cfg.p_hat * gamma) * cfg.G + cfg.delta * gamma;
    const Scalar err = std::abs(r - cfg.a_star);
    out.r.push_back(r);
    out.error.push_back(err);
    out.bound.push_back(bound);
    if (err > bound + slack) ++out.violations;
  }
  out.satisfied = out.violations == 0;
  return out;
}

TheoremSimConfig random_theorem_config(std::mt19937_64& rng, int T) {
  std::uniform_real_distribution<Scalar> u(0.0, 1.0);
  TheoremSimConfig cfg;
  cfg.G = 0.1 + 9.9 * u(rng);
  cfg.a_star = cfg.G * (2.0 * u(rng) - 1.0);
  cfg.p_k = 0.01 + 0.98 * u(rng);
  cfg.p_hat = (1.0 - cfg.p_k) * u(rng);
  cfg.delta = u(rng);
  cfg.T = T;
  cfg.seed = rng();
  return cfg;
}

SphereProjection project_to_sphere(const Eigen::Ref<const Matrix>& z, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != z.rows())
    throw DimensionError("project_to_sphere: label count does not match rows");
  SphereProjection out;
  out.points.resize(z.rows(), z.cols());
  Index kept = 0;
  for (Index i = 0; i < z.rows(); ++i) {
    const Scalar n = z.row(i).norm();
    if (n == 0.0) {
      ++out.skipped;
      continue;
    }
    out.points.row(kept++) = z.row(i) / n;
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  out.points.conservativeResize(kept, Eigen::NoChange);
  return out;
}

Scalar angular_spread(const Eigen::Ref<const Matrix>& points, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != points.rows())
    throw DimensionError("angular_spread: label count does not match rows");
  std::map<int, std::vector<Index>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(static_cast<Index>(i));
  Scalar acc = 0.0;
  int classes = 0;
  for (const auto& [label, rows] : by_label) {
    RowVector mean = RowVector::Zero(points.cols());
    for (Index r : rows) mean += points.row(r);
    if (mean.norm() == 0.0) continue;
    Scalar sum = 0.0;
    for (Index r : rows) sum += angle_between(points.row(r).transpose(), mean.transpose());
    acc += sum / static_cast<Scalar>(rows.size());
    ++classes;
  }
  if (classes == 0) throw DomainError("angular_spread: no class with a defined mean direction");
  return acc / static_cast<Scalar>(classes);
}

}  // namespace fedmr
