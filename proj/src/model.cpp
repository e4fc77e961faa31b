#include "fedmr/model.hpp"

#include "fedmr/errors.hpp"

#include <cmath>
#include <random>
#include <string>

namespace fedmr {

namespace {
using RowMajorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
}

void MlpSpec::validate() const {
  if (layer_sizes.size() < 3)
    throw ContractError("MlpSpec needs at least input, feature and class extents, got " +
                        std::to_string(layer_sizes.size()));
  for (Index s : layer_sizes)
    if (s < 1) throw ContractError("MlpSpec extents must be >= 1");
}

ParamLayout ParamLayout::from(const MlpSpec& spec) {
  spec.validate();
  ParamLayout layout;
  Index offset = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    LayerSlice s;
    s.in = spec.layer_sizes[l];
    s.out = spec.layer_sizes[l + 1];
    s.weight_offset = offset;
    offset += s.in * s.out;
    s.bias_offset = offset;
    offset += s.out;
    layout.layers.push_back(s);
  }
  layout.total = offset;
  return layout;
}

Index param_count(const MlpSpec& spec) { return ParamLayout::from(spec).total; }

Matrix ModelParams::weight(std::size_t layer) const {
  const LayerSlice& s = layout.layers.at(layer);
  return RowMajorMap(values.data() + s.weight_offset, s.in, s.out);
}

RowVector ModelParams::bias(std::size_t layer) const {
  const LayerSlice& s = layout.layers.at(layer);
  return values.segment(s.bias_offset, s.out).transpose();
}

ModelParams init(const MlpSpec& spec) {
  ModelParams p;
  p.spec = spec;
  p.layout = ParamLayout::from(spec);
  p.values = Vector::Zero(p.layout.total);
  std::mt19937_64 rng(spec.seed);
  for (const LayerSlice& s : p.layout.layers) {
    const Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(s.in + s.out));
    std::uniform_real_distribution<Scalar> dist(-limit, limit);
    for (Index i = 0; i < s.in * s.out; ++i) p.values[s.weight_offset + i] = dist(rng);
  }
  return p;
}

Features forward(const ModelParams& params, const Eigen::Ref<const Matrix>& batch) {
  const MlpSpec& spec = params.spec;
  if (batch.cols() != spec.input_dim())
    throw DimensionError("forward: batch width " + std::to_string(batch.cols()) +
                         " does not match input extent " + std::to_string(spec.input_dim()));
  Matrix h = batch;
  const std::size_t layers = spec.num_layers();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    h = ((h * params.weight(l)).rowwise() + params.bias(l)).cwiseMax(0.0);
  }
  Features f;
  f.logits = (h * params.weight(layers - 1)).rowwise() + params.bias(layers - 1);
  f.z = std::move(h);
  return f;
}

TapedModel make_leaves(Tape& tape, const ModelParams& params, bool requires_grad) {
  TapedModel m;
  for (std::size_t l = 0; l < params.layout.layers.size(); ++l) {
    m.weights.push_back(tape.leaf(params.weight(l), requires_grad));
    m.biases.push_back(tape.leaf(params.bias(l), requires_grad));
  }
  return m;
}

Vector TapedModel::flat_grad(const ParamLayout& layout) const {
  Vector g = Vector::Zero(layout.total);
  for (std::size_t l = 0; l < layout.layers.size(); ++l) {
    const LayerSlice& s = layout.layers[l];
    const Matrix& gw = weights[l].grad();
    if (gw.size() != 0) {
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          g.data() + s.weight_offset, s.in, s.out) = gw;
    }
    const Matrix& gb = biases[l].grad();
    if (gb.size() != 0) g.segment(s.bias_offset, s.out) = gb.row(0).transpose();
  }
  return g;
}

TapedFeatures forward(const TapedModel& model, const Tensor& batch) {
  const std::size_t layers = model.weights.size();
  if (batch.cols() != model.weights.front().rows())
    throw DimensionError("forward: batch width " + std::to_string(batch.cols()) +
                         " does not match input extent " +
                         std::to_string(model.weights.front().rows()));
  Tensor h = batch;
  for (std::size_t l = 0; l + 1 < layers; ++l)
    h = relu(add_rowwise(matmul(h, model.weights[l]), model.biases[l]));
  TapedFeatures out;
  out.logits = add_rowwise(matmul(h, model.weights[layers - 1]), model.biases[layers - 1]);
  out.z = h;
  return out;
}

}  // namespace fedmr
