#include "fedmr/verify.hpp"

#include "fedmr/analysis.hpp"
#include "fedmr/errors.hpp"
#include "fedmr/gradcheck.hpp"
#include "fedmr/jacobi.hpp"
#include "fedmr/losses.hpp"
#include "fedmr/model.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

namespace fedmr {

namespace {

Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng, Scalar sd = 1.0) {
  std::normal_distribution<Scalar> n(0.0, sd);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

Labels random_labels(Index n, int classes, std::mt19937_64& rng) {
  Labels y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = static_cast<int>(i % classes);
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

PrototypeSet random_prototypes(int classes, Index dim, std::mt19937_64& rng) {
  PrototypeSet set;
  set.dim = dim;
  for (int c = 0; c < classes; ++c) set.classes[c] = {gaussian(1, dim, rng), 1};
  return set;
}

std::string fmt(Scalar v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

PropertyResult guarded(const std::string& name, const std::function<PropertyResult()>& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    return {name, false, e.category() + " error: " + e.what()};
  }
}

PropertyResult eigensolver_identities(std::mt19937_64& rng) {
  Scalar worst = 0.0;
  for (Index d : {2, 5, 8, 16, 32, 64}) {
    const Matrix a = gaussian(d, d, rng);
    const Matrix m = (a + a.transpose()) / 2.0;
    const Vector l = sym_eigenvalues(m);
    const Scalar scale = std::max<Scalar>(1.0, m.squaredNorm());
    worst = std::max(worst, std::abs(l.sum() - m.trace()) / scale);
    worst = std::max(worst, std::abs(l.squaredNorm() - m.squaredNorm()) / scale);
  }
  return {"eigensolver-trace-frobenius", worst <= 1e-9, "max relative error " + fmt(worst)};
}

PropertyResult lemma1_random(std::mt19937_64& rng, const LossConfig& cfg) {
  std::uniform_int_distribution<Index> n_dist(5, 64), d_dist(2, 16);
  Scalar worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = n_dist(rng);
    const Index d = d_dist(rng);
    const Matrix z = gaussian(n, d, rng);
    const Labels y(static_cast<std::size_t>(n), 0);
    for (const auto& [label, m] : standardized_covariances(z, y, cfg)) {
      if (!m.allFinite()) return {"lemma1-identity", false, "non-finite covariance"};
      worst = std::max(worst, lemma1_residual(m) / static_cast<Scalar>(d));
    }
  }
  return {"lemma1-identity", worst <= 1e-9, "max residual / d " + fmt(worst)};
}

// A feature that is zero for a whole class, as a dead ReLU produces.
PropertyResult lemma1_degenerate(std::mt19937_64& rng, const LossConfig& cfg) {
  const std::string name = "lemma1-degenerate-batch";
  const Index n = 12, d = 4;
  Matrix z = gaussian(n, d, rng).cwiseAbs();
  z.col(2).setZero();
  const Labels y(static_cast<std::size_t>(n), 0);

  Tape tape;
  const IntraLoss loss = intra_loss(tape.leaf(z), y, cfg);
  if (!std::isfinite(loss.value.item())) return {name, false, "intra loss is not finite"};
  for (const auto& [label, m] : standardized_covariances(z, y, cfg)) {
    if (!m.allFinite()) return {name, false, "standardized covariance is not finite"};
    const Vector l = sym_eigenvalues(m);
    const Scalar lhs = (l.array() - l.mean()).square().sum();
    const Scalar rhs = m.squaredNorm() - m.trace() * m.trace() / static_cast<Scalar>(d);
    const Scalar r = std::abs(lhs - rhs);
    if (r > 1e-9 * static_cast<Scalar>(d)) return {name, false, "residual " + fmt(r)};
  }
  return {name, true, "finite, identity holds with the trace term"};
}

PropertyResult grad_intra(std::mt19937_64& rng, const LossConfig& cfg) {
  const Matrix z = gaussian(18, 5, rng);
  const Labels y = random_labels(18, 3, rng);
  const GradCheck g = check_gradient(
      [&](Tape&, const Tensor& x) { return intra_loss(x, y, cfg).value; }, z);
  return {"grad-intra", g.rel_error <= 1e-5, "relative error " + fmt(g.rel_error)};
}

PropertyResult grad_inter(std::mt19937_64& rng, const LossConfig& base, Scalar margin) {
  LossConfig cfg = base;
  cfg.margin = margin;
  const Matrix z = gaussian(16, 3, rng);
  const Labels y = random_labels(16, 4, rng);
  const PrototypeSet globals = random_prototypes(4, 3, rng);
  const GradCheck g = check_gradient(
      [&](Tape&, const Tensor& x) { return inter_loss(x, y, globals, cfg); }, z);
  return {margin == 0.0 ? "grad-inter-margin0" : "grad-inter-margin0.5", g.rel_error <= 1e-5,
          "relative error " + fmt(g.rel_error)};
}

PropertyResult grad_total(std::mt19937_64& rng, const LossConfig& base) {
  LossConfig cfg = base;
  cfg.mu1 = 0.3;
  cfg.mu2 = 0.7;
  cfg.margin = 0.2;
  cfg.prox_mu = 0.05;
  MlpSpec spec{{2, 6, 3, 4}, rng()};
  ModelParams params = init(spec);
  // Positive biases keep every unit active so the check avoids ReLU kinks.
  for (const LayerSlice& s : params.layout.layers) params.values.segment(s.bias_offset, s.out).setConstant(1.0);
  ModelParams global = params;
  global.values += gaussian(params.size(), 1, rng, 0.1);
  const Matrix x = gaussian(16, 2, rng, 0.5);
  const Labels y = random_labels(16, 4, rng);
  const PrototypeSet globals = random_prototypes(4, 3, rng);
  const GradCheck g = check_param_gradient(
      [&](Tape& tape, const TapedModel& m) {
        return total_loss(m, tape.constant(x), y, &globals, cfg, &global).total;
      },
      params);
  return {"grad-total-with-prox", g.rel_error <= 1e-5, "relative error " + fmt(g.rel_error)};
}

PropertyResult motivation_angle() {
  const MotivationWeights w = motivation_weights();
  const Scalar a = angle_between(w.w_star.row(1).transpose(), w.w_hat.row(1).transpose());
  const Scalar avg_gap = (w.w_hat - w.w_hat_printed).cwiseAbs().maxCoeff();
  const bool ok = std::abs(a - 45.0) <= 1e-9 && avg_gap <= 1e-15;
  std::ostringstream s;
  s.precision(12);
  s << "angle " << a << " deg, average gap " << avg_gap;
  return {"motivation-angle", ok, s.str()};
}

PropertyResult theorem_bound(std::mt19937_64& rng) {
  int violations = 0;
  for (int i = 0; i < 1000; ++i) violations += theorem1_simulate(random_theorem_config(rng)).violations;
  TheoremSimConfig conv;
  conv.G = 1.0;
  conv.a_star = 0.3;
  conv.p_k = 0.6;
  conv.p_hat = 0.4;
  conv.delta = 0.0;
  conv.T = 100;
  conv.seed = rng();
  const Scalar final_err = theorem1_simulate(conv).error.back();
  const bool ok = violations == 0 && final_err <= 1e-6 * conv.G;
  return {"theorem1-bound", ok,
          std::to_string(violations) + " violations, converged error " + fmt(final_err)};
}

}  // namespace

std::vector<PropertyResult> run_verification(const VerifyOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  LossConfig cfg;
  if (opts.remove_std_floor) cfg.std_floor = 0.0;

  std::vector<PropertyResult> out;
  out.push_back(guarded("eigensolver-trace-frobenius", [&] { return eigensolver_identities(rng); }));
  out.push_back(guarded("lemma1-identity", [&] { return lemma1_random(rng, cfg); }));
  out.push_back(guarded("lemma1-degenerate-batch", [&] { return lemma1_degenerate(rng, cfg); }));
  out.push_back(guarded("grad-intra", [&] { return grad_intra(rng, cfg); }));
  out.push_back(guarded("grad-inter-margin0", [&] { return grad_inter(rng, cfg, 0.0); }));
  out.push_back(guarded("grad-inter-margin0.5", [&] { return grad_inter(rng, cfg, 0.5); }));
  out.push_back(guarded("grad-total-with-prox", [&] { return grad_total(rng, cfg); }));
  out.push_back(guarded("motivation-angle", [&] { return motivation_angle(); }));
  out.push_back(guarded("theorem1-bound", [&] { return theorem_bound(rng); }));
  return out;
}

}  // namespace fedmr
