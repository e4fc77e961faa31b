#pragma once

// Central finite-difference check of taped gradients.

#include "fedmr/model.hpp"
#include "fedmr/tensor.hpp"

#include <algorithm>
#include <functional>

namespace fedmr {

// Builds a scalar loss from a fresh leaf holding x.
using LossBuilder = std::function<Tensor(Tape&, const Tensor&)>;

struct GradCheck {
  Matrix analytic;
  Matrix numeric;
  Scalar rel_error = 0.0;  // ||a - n|| / max(||a||, ||n||, floor)
};

inline GradCheck check_gradient(const LossBuilder& build, const Matrix& x, Scalar h = 1e-6,
                                Scalar floor = 1e-10) {
  GradCheck out;
  {
    Tape tape;
    const Tensor leaf = tape.leaf(x);
    tape.backward(build(tape, leaf));
    out.analytic = leaf.grad();
  }
  out.numeric.resizeLike(x);
  Matrix probe = x;
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) {
      const Scalar orig = probe(i, j);
      probe(i, j) = orig + h;
      Tape plus;
      const Scalar fp = build(plus, plus.leaf(probe, false)).item();
      probe(i, j) = orig - h;
      Tape minus;
      const Scalar fm = build(minus, minus.leaf(probe, false)).item();
      probe(i, j) = orig;
      out.numeric(i, j) = (fp - fm) / (2.0 * h);
    }
  }
  const Scalar scale = std::max({out.analytic.norm(), out.numeric.norm(), floor});
  out.rel_error = (out.analytic - out.numeric).norm() / scale;
  return out;
}

// Same check with respect to the flat parameter vector of a model.
using ModelLossBuilder = std::function<Tensor(Tape&, const TapedModel&)>;

inline GradCheck check_param_gradient(const ModelLossBuilder& build, const ModelParams& params,
                                      Scalar h = 1e-6, Scalar floor = 1e-10) {
  GradCheck out;
  {
    Tape tape;
    const TapedModel model = make_leaves(tape, params);
    tape.backward(build(tape, model));
    out.analytic = model.flat_grad(params.layout);
  }
  out.numeric.resize(params.size(), 1);
  ModelParams probe = params;
  auto eval = [&](const ModelParams& p) {
    Tape tape;
    return build(tape, make_leaves(tape, p, false)).item();
  };
  for (Index i = 0; i < params.size(); ++i) {
    const Scalar orig = probe.values(i);
    probe.values(i) = orig + h;
    const Scalar fp = eval(probe);
    probe.values(i) = orig - h;
    const Scalar fm = eval(probe);
    probe.values(i) = orig;
    out.numeric(i, 0) = (fp - fm) / (2.0 * h);
  }
  const Scalar scale = std::max({out.analytic.norm(), out.numeric.norm(), floor});
  out.rel_error = (out.analytic - out.numeric).norm() / scale;
  return out;
}

}  // namespace fedmr
