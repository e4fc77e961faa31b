#pragma once

// Multilayer perceptron split into a backbone producing the feature z and a
// linear head producing the logits. Parameters live in one flat vector so they
// can be averaged, transmitted and stepped as a unit.

#include "fedmr/tensor.hpp"

#include <cstdint>
#include <vector>

namespace fedmr {

struct MlpSpec {
  // input, hidden..., feature_dim, num_classes
  std::vector<Index> layer_sizes;
  std::uint64_t seed = 0;

  void validate() const;
  Index input_dim() const { return layer_sizes.front(); }
  Index feature_dim() const { return layer_sizes[layer_sizes.size() - 2]; }
  Index num_classes() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }
};

// Weight block of layer l is stored row-major as in x out, followed by its bias.
struct LayerSlice {
  Index in = 0;
  Index out = 0;
  Index weight_offset = 0;
  Index bias_offset = 0;
};

struct ParamLayout {
  std::vector<LayerSlice> layers;
  Index total = 0;

  static ParamLayout from(const MlpSpec& spec);
};

struct ModelParams {
  MlpSpec spec;
  ParamLayout layout;
  Vector values;

  Index size() const { return values.size(); }

  // Copies of the layer blocks as matrices.
  Matrix weight(std::size_t layer) const;
  RowVector bias(std::size_t layer) const;
};

Index param_count(const MlpSpec& spec);

// Glorot-uniform weights, zero biases; a pure function of spec.seed.
ModelParams init(const MlpSpec& spec);

struct Features {
  Matrix z;       // n x feature_dim
  Matrix logits;  // n x num_classes
};

// Evaluation-only forward pass. ReLU follows every layer except the head, so z
// is the post-activation output of the feature layer.
Features forward(const ModelParams& params, const Eigen::Ref<const Matrix>& batch);

// Taped forward pass. Builds one leaf per weight and bias block.
struct TapedModel {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  // Gathers leaf gradients back into the flat layout.
  Vector flat_grad(const ParamLayout& layout) const;
};

struct TapedFeatures {
  Tensor z;
  Tensor logits;
};

TapedModel make_leaves(Tape& tape, const ModelParams& params, bool requires_grad = true);
TapedFeatures forward(const TapedModel& model, const Tensor& batch);

}  // namespace fedmr
