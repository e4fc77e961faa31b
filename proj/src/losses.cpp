#include "fedmr/losses.hpp"

#include "fedmr/errors.hpp"
#include "fedmr/jacobi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>

namespace fedmr {

void LossConfig::validate() const {
  if (!(mu1 >= 0.0)) throw ConfigError("mu1 must be >= 0");
  if (!(mu2 >= 0.0)) throw ConfigError("mu2 must be >= 0");
  if (!(margin >= 0.0)) throw ConfigError("margin must be >= 0");
  if (!(prox_mu >= 0.0)) throw ConfigError("prox_mu must be >= 0");
  if (lite_n && *lite_n < 1) throw ConfigError("lite_n must be >= 1");
  if (!(std_floor >= 0.0)) throw ConfigError("std_floor must be >= 0");
}

namespace {

std::map<int, std::vector<Index>> rows_by_label(std::span<const int> labels) {
  std::map<int, std::vector<Index>> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) rows[labels[i]].push_back(static_cast<Index>(i));
  return rows;
}

Scalar variance_divisor(Index n, StdConvention c) {
  return c == StdConvention::kBessel ? static_cast<Scalar>(n - 1) : static_cast<Scalar>(n);
}

}  // namespace

Standardization standardize_per_class(const Tensor& z, std::span<const int> labels,
                                      const LossConfig& cfg) {
  if (static_cast<Index>(labels.size()) != z.rows())
    throw DimensionError("standardize_per_class: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(z.rows()) + " rows");
  Standardization out;
  for (auto& [label, rows] : rows_by_label(labels)) {
    const auto n = static_cast<Index>(rows.size());
    if (n < 2) {
      out.excluded.push_back(label);
      continue;
    }
    StandardizedClass cls;
    cls.rows = rows;
    const Tensor zc = select_rows(z, rows);
    const Tensor mu = col_mean(zc);
    const Tensor centered = sub_rowwise(zc, mu);
    const Tensor var =
        scale(col_sum(square(centered)), 1.0 / variance_divisor(n, cfg.std_convention));
    const Tensor sd = sqrt(var);
    const Tensor sd_floored = cfg.std_floor > 0.0 ? clamp_min(sd, cfg.std_floor) : sd;
    cls.z_hat = div_rowwise(centered, sd_floored);
    cls.stats.label = label;
    cls.stats.count = n;
    cls.stats.mean = mu.value().row(0);
    cls.stats.std = sd.value().row(0);
    cls.stats.floored = (sd.value().array() < cfg.std_floor).any();
    out.classes.push_back(std::move(cls));
  }
  return out;
}

Tensor class_covariance(const StandardizedClass& cls) {
  const auto n = static_cast<Scalar>(cls.stats.count);
  return scale(matmul(transpose(cls.z_hat), cls.z_hat), 1.0 / (n - 1.0));
}

IntraLoss intra_loss(const Tensor& z, std::span<const int> labels, const LossConfig& cfg) {
  const Standardization st = standardize_per_class(z, labels, cfg);
  IntraLoss out;
  if (st.classes.empty()) {
    out.no_includable_class = true;
    out.value = z.tape()->scalar(0.0);
    return out;
  }
  Tensor acc;
  for (const StandardizedClass& cls : st.classes) {
    const Tensor m = class_covariance(cls);
    const Tensor frob = sum(square(m));
    acc = acc.valid() ? add(acc, frob) : frob;
    out.any_floored = out.any_floored || cls.stats.floored;
  }
  out.classes_used = static_cast<int>(st.classes.size());
  out.value = scale(acc, 1.0 / static_cast<Scalar>(out.classes_used));
  return out;
}

std::map<int, Matrix> standardized_covariances(const Eigen::Ref<const Matrix>& z,
                                               std::span<const int> labels,
                                               const LossConfig& cfg) {
  if (static_cast<Index>(labels.size()) != z.rows())
    throw DimensionError("standardized_covariances: label count does not match rows");
  std::map<int, Matrix> out;
  for (auto& [label, rows] : rows_by_label(labels)) {
    const auto n = static_cast<Index>(rows.size());
    if (n < 2) continue;
    Matrix zc(n, z.cols());
    for (Index i = 0; i < n; ++i) zc.row(i) = z.row(rows[static_cast<std::size_t>(i)]);
    const RowVector mu = zc.colwise().mean();
    zc.rowwise() -= mu;
    RowVector sd =
        (zc.array().square().colwise().sum() / variance_divisor(n, cfg.std_convention)).sqrt();
    if (cfg.std_floor > 0.0) sd = sd.cwiseMax(cfg.std_floor);
    zc.array().rowwise() /= sd.array();
    out.emplace(label, zc.transpose() * zc / static_cast<Scalar>(n - 1));
  }
  return out;
}

Scalar lemma1_residual(const Eigen::Ref<const Matrix>& m) {
  const Vector lambda = sym_eigenvalues(m);
  const auto d = static_cast<Scalar>(m.rows());
  const Scalar lhs = (lambda.array() - lambda.mean()).square().sum();
  const Scalar rhs = m.squaredNorm() - d;
  return std::abs(lhs - rhs);
}

// --- prototypes --------------------------------------------------------------

const RowVector& PrototypeSet::at(int label) const {
  const auto it = classes.find(label);
  if (it == classes.end())
    throw ProtocolError("no global prototype for class " + std::to_string(label));
  return it->second.centroid;
}

std::vector<int> PrototypeSet::labels() const {
  std::vector<int> out;
  for (const auto& [label, p] : classes) out.push_back(label);
  return out;
}

PrototypeSet local_prototypes(const Eigen::Ref<const Matrix>& z, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != z.rows())
    throw DimensionError("local_prototypes: label count does not match rows");
  PrototypeSet set;
  set.dim = z.cols();
  for (auto& [label, rows] : rows_by_label(labels)) {
    RowVector acc = RowVector::Zero(z.cols());
    for (Index r : rows) acc += z.row(r);
    Prototype p;
    p.count = static_cast<Index>(rows.size());
    p.centroid = acc / static_cast<Scalar>(p.count);
    set.classes.emplace(label, std::move(p));
  }
  return set;
}

namespace {

// Per-row Euclidean distance to a fixed point, n x 1.
Tensor distances(const Tensor& z, const RowVector& point) {
  const Tensor g = z.tape()->constant(point);
  return sqrt(row_sum(square(sub_rowwise(z, g))));
}

}  // namespace

Tensor inter_loss(const Tensor& z, std::span<const int> labels, const PrototypeSet& globals,
                  const LossConfig& cfg, std::span<const int> contrast) {
  if (static_cast<Index>(labels.size()) != z.rows())
    throw DimensionError("inter_loss: label count does not match rows");
  Tape& tape = *z.tape();
  const auto by_label = rows_by_label(labels);

  std::vector<int> contrast_set;
  if (cfg.contrast_all)
    contrast_set = globals.labels();
  else if (!contrast.empty())
    contrast_set.assign(contrast.begin(), contrast.end());
  else
    for (const auto& [label, rows] : by_label) contrast_set.push_back(label);
  std::sort(contrast_set.begin(), contrast_set.end());
  contrast_set.erase(std::unique(contrast_set.begin(), contrast_set.end()), contrast_set.end());

  if (cfg.skip_missing_prototypes) {
    std::erase_if(contrast_set, [&](int c) { return !globals.contains(c); });
  } else {
    for (const auto& [label, rows] : by_label) (void)globals.at(label);
    for (int c : contrast_set) (void)globals.at(c);
  }
  if (globals.dim != z.cols())
    throw DimensionError("inter_loss: prototype width " + std::to_string(globals.dim) +
                         " does not match feature width " + std::to_string(z.cols()));

  Tensor acc;
  Index terms = 0;
  for (const auto& [anchor, rows] : by_label) {
    if (!globals.contains(anchor)) continue;
    const Tensor zc = select_rows(z, rows);
    const Tensor own = distances(zc, globals.at(anchor));
    if (cfg.inter_mode == InterMode::kPull) {
      const Tensor d = mean(own);
      acc = acc.valid() ? add(acc, d) : d;
      ++terms;
      continue;
    }
    for (int other : contrast_set) {
      if (other == anchor) continue;
      Tensor gap = sub(own, distances(zc, globals.at(other)));
      if (cfg.margin != 0.0) gap = add_scalar(gap, cfg.margin);
      const Tensor d = mean(max_zero(gap));
      acc = acc.valid() ? add(acc, d) : d;
      ++terms;
    }
  }
  if (terms == 0) return tape.scalar(0.0);
  return scale(acc, 1.0 / static_cast<Scalar>(terms));
}

Tensor inter_loss_lite(const Tensor& z, std::span<const int> labels, const PrototypeSet& globals,
                       const LossConfig& cfg, std::uint64_t seed) {
  if (!cfg.lite_n || *cfg.lite_n < 1) throw ContractError("inter_loss_lite requires lite_n >= 1");
  const Index n = z.rows();
  if (*cfg.lite_n >= n) return inter_loss(z, labels, globals, cfg);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(*cfg.lite_n));
  std::sort(order.begin(), order.end());

  Labels sub_labels;
  sub_labels.reserve(order.size());
  for (Index r : order) sub_labels.push_back(labels[static_cast<std::size_t>(r)]);
  std::set<int> batch_classes(labels.begin(), labels.end());
  const std::vector<int> contrast(batch_classes.begin(), batch_classes.end());
  return inter_loss(select_rows(z, order), sub_labels, globals, cfg, contrast);
}

LossTerms total_loss(const TapedModel& model, const Tensor& batch, std::span<const int> labels,
                     const PrototypeSet* globals, const LossConfig& cfg,
                     const ModelParams* global_params, std::uint64_t lite_seed) {
  const TapedFeatures f = forward(model, batch);
  LossTerms out;
  out.total = softmax_cross_entropy(f.logits, labels);
  out.cls = out.total.item();

  if (cfg.mu1 > 0.0) {
    const IntraLoss intra = intra_loss(f.z, labels, cfg);
    out.intra = intra.value.item();
    if (!intra.no_includable_class) out.total = add(out.total, scale(intra.value, cfg.mu1));
  }
  if (cfg.mu2 > 0.0) {
    if (globals == nullptr || globals->classes.empty())
      throw ProtocolError("inter-class loss requested but no global prototypes are available");
    const Tensor inter = cfg.lite_n ? inter_loss_lite(f.z, labels, *globals, cfg, lite_seed)
                                    : inter_loss(f.z, labels, *globals, cfg);
    out.inter = inter.item();
    out.total = add(out.total, scale(inter, cfg.mu2));
  }
  if (cfg.prox_mu > 0.0) {
    if (global_params == nullptr)
      throw ProtocolError("proximal term requested without global parameters");
    Tape& tape = *batch.tape();
    Tensor acc;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
      const Tensor dw = sum(square(sub(model.weights[l], tape.constant(global_params->weight(l)))));
      const Tensor db = sum(square(sub(model.biases[l], tape.constant(global_params->bias(l)))));
      const Tensor layer = add(dw, db);
      acc = acc.valid() ? add(acc, layer) : layer;
    }
    out.prox = acc.item();
    out.total = add(out.total, scale(acc, 0.5 * cfg.prox_mu));
  }
  return out;
}

}  // namespace fedmr
