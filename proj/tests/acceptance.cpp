// Acceptance battery: one PASS/FAIL line per criterion.
//
// Exit status is nonzero only when the harness itself breaks (an exception
// escapes a criterion). Criteria that run to completion and miss their target
// are reported as FAIL lines and counted in the final tally.

#include "fedmr/analysis.hpp"
#include "fedmr/config.hpp"
#include "fedmr/errors.hpp"
#include "fedmr/federation.hpp"
#include "fedmr/jacobi.hpp"
#include "fedmr/losses.hpp"
#include "fedmr/model.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace fedmr;

namespace {

// --- tolerances ----------------------------------------------------------------
constexpr Scalar kLemmaTol = 1e-9;            // times d
constexpr Scalar kGradRelTol = 1e-5;
constexpr Scalar kAngleTol = 1e-9;            // degrees
constexpr Scalar kPlainShiftLo = 35.0, kPlainShiftHi = 55.0;
constexpr Scalar kCentroidShiftMax = 2.0;
constexpr Scalar kIidShiftMax = 5.0;
constexpr Scalar kConvergeTol = 1e-6;         // times G
constexpr Scalar kOverheadTolPp = 0.01;       // percentage points
constexpr Scalar kLiteRelTol = 0.02;

constexpr double kBudgetLemma = 10.0, kBudgetGrad = 30.0, kBudgetMotivation = 120.0,
                 kBudgetDesk = 600.0, kBudgetTheorem = 30.0;

// --- the desk experiment ---------------------------------------------------------
// Four disks, feature width 3, P4C2, T = 40, five seeds. Optimiser settings of
// the original four-disk simulation: SGD at learning rate 0.1, batch 128, 5000
// samples per class, about 50 local iterations per round (one local epoch).
constexpr int kSeeds = 5;
constexpr int kDeskRounds = 40;

nlohmann::json desk_config(const std::string& algorithm, std::uint64_t seed, bool iid) {
  nlohmann::json cfg = {
      {"algorithm", algorithm},
      {"seed", seed},
      {"rounds", kDeskRounds},
      {"local_epochs", 1},
      {"batch_size", 128},
      {"learning_rate", 0.1},
      {"eigvar", true},
      {"eigvar_k", 50},
      {"dataset", {{"kind", "circles"}, {"n_per_class", 5000}, {"test_per_class", 1000}}},
      {"model", {{"hidden", {128}}, {"feature_dim", 3}}}};
  cfg["partition"] = iid ? nlohmann::json{{"kind", "iid"}, {"clients", 4}}
                         : nlohmann::json{{"kind", "pcdd"}, {"clients", 4}, {"classes_per_client", 2}};
  return cfg;
}

struct ArmResult {
  Scalar accuracy = 0.0;  // mean final accuracy over seeds
  Scalar eigvar = 0.0;    // mean final eigvar over seeds
  std::vector<Scalar> per_seed;
};

ArmResult run_arm(const std::string& algorithm, bool iid, Scalar prototype_fraction = 1.0) {
  ArmResult out;
  for (int s = 0; s < kSeeds; ++s) {
    nlohmann::json doc = desk_config(algorithm, static_cast<std::uint64_t>(s), iid);
    if (prototype_fraction < 1.0) {
      doc["prototype_fraction"] = prototype_fraction;
      doc["skip_missing_prototypes"] = true;
    }
    const ExperimentConfig cfg = parse_config(doc);
    const ExperimentData data = build_experiment(cfg);
    const ExperimentResult r = run_experiment(data.spec, data.clients, data.test, cfg.fed);
    out.per_seed.push_back(r.reports.back().test_accuracy);
    out.accuracy += r.reports.back().test_accuracy / kSeeds;
    out.eigvar += *r.reports.back().eigvar / kSeeds;
  }
  return out;
}

std::map<std::string, ArmResult>& desk_cache() {
  static std::map<std::string, ArmResult> cache;
  return cache;
}

const ArmResult& arm(const std::string& key) {
  auto& cache = desk_cache();
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  ArmResult r;
  if (key == "fedavg-pcdd") r = run_arm("fedavg", false);
  else if (key == "fedavg-iid") r = run_arm("fedavg", true);
  else if (key == "fedmr") r = run_arm("fedmr", false);
  else if (key == "fedmr-intra") r = run_arm("fedmr-intra", false);
  else if (key == "fedmr-50") r = run_arm("fedmr", false, 0.5);
  else throw ContractError("unknown arm " + key);
  return cache.emplace(key, std::move(r)).first->second;
}

// --- helpers -------------------------------------------------------------------------

Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng, Scalar sd = 1.0) {
  std::normal_distribution<Scalar> n(0.0, sd);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

Labels balanced_labels(Index n, int classes, std::mt19937_64& rng) {
  Labels y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = static_cast<int>(i % classes);
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

std::string num(Scalar v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Central differences against the taped gradient of a loss in a matrix input.
Scalar fd_rel_error(const std::function<Tensor(Tape&, const Tensor&)>& f, const Matrix& x) {
  Tape tape;
  const Tensor leaf = tape.leaf(x);
  tape.backward(f(tape, leaf));
  const Matrix analytic = leaf.grad();
  Matrix numeric(x.rows(), x.cols());
  const Scalar h = 1e-6;
  for (Index i = 0; i < x.size(); ++i) {
    Matrix p = x, m = x;
    p(i) += h;
    m(i) -= h;
    Tape tp, tm;
    numeric(i) = (f(tp, tp.constant(p)).item() - f(tm, tm.constant(m)).item()) / (2 * h);
  }
  const Scalar scale = std::max({analytic.norm(), numeric.norm(), Scalar(1e-10)});
  return (analytic - numeric).norm() / scale;
}

// --- criteria --------------------------------------------------------------------------

Outcome c1_lemma() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<Index> nd(5, 64), dd(2, 16);
  Scalar worst_lib = 0.0, worst_oracle = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = nd(rng), d = dd(rng);
    const Matrix z = gaussian(n, d, rng);
    const Labels y(static_cast<std::size_t>(n), 0);
    const Matrix m = standardized_covariances(z, y).at(0);
    worst_lib = std::max(worst_lib, lemma1_residual(m) / static_cast<Scalar>(d));

    // Oracle: standardization written out here, eigenvalues from Eigen.
    Matrix c = z.rowwise() - z.colwise().mean();
    const RowVector sd = (c.array().square().colwise().sum() / static_cast<Scalar>(n - 1)).sqrt();
    c.array().rowwise() /= sd.array();
    const Matrix mo = c.transpose() * c / static_cast<Scalar>(n - 1);
    const Vector l = Eigen::SelfAdjointEigenSolver<Matrix>(mo, Eigen::EigenvaluesOnly).eigenvalues();
    const Scalar r = std::abs((l.array() - l.mean()).square().sum() - (mo.squaredNorm() - d));
    worst_oracle = std::max(worst_oracle, r / static_cast<Scalar>(d));
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_lib <= kLemmaTol && worst_oracle <= kLemmaTol && secs < kBudgetLemma;
  return {ok, "max residual/d " + num(worst_lib) + " (Jacobi), " + num(worst_oracle) +
                  " (reference solver), " + num(secs, 3) + " s"};
}

Outcome c2_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  Scalar worst_intra = 0.0, worst_m0 = 0.0, worst_m05 = 0.0, worst_total = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 12 + trial;
    const Matrix z = gaussian(n, 4, rng);
    const Labels y = balanced_labels(n, 3, rng);
    worst_intra = std::max(worst_intra, fd_rel_error([&](Tape&, const Tensor& x) {
                             return intra_loss(x, y).value;
                           }, z));

    PrototypeSet globals;
    globals.dim = 4;
    for (int c = 0; c < 3; ++c) globals.classes[c] = {gaussian(1, 4, rng), 1};
    for (Scalar margin : {0.0, 0.5}) {
      LossConfig cfg;
      cfg.margin = margin;
      const Scalar e = fd_rel_error(
          [&](Tape&, const Tensor& x) { return inter_loss(x, y, globals, cfg); }, z);
      (margin == 0.0 ? worst_m0 : worst_m05) = std::max(margin == 0.0 ? worst_m0 : worst_m05, e);
    }

    // Full objective with the proximal term, differentiated in the flat parameters.
    MlpSpec spec{{2, 5 + trial % 3, 3, 3}, rng()};
    ModelParams params = init(spec);
    for (const LayerSlice& s : params.layout.layers)
      params.values.segment(s.bias_offset, s.out).setConstant(1.0);
    ModelParams anchor = params;
    anchor.values += gaussian(params.size(), 1, rng, 0.1);
    const Matrix x = gaussian(n, 2, rng, 0.5);
    PrototypeSet g3;
    g3.dim = 3;
    for (int c = 0; c < 3; ++c) g3.classes[c] = {gaussian(1, 3, rng), 1};
    LossConfig cfg;
    cfg.mu1 = 0.2;
    cfg.mu2 = 0.5;
    cfg.margin = 0.3;
    cfg.prox_mu = 0.1;
    auto objective = [&](const Vector& flat) {
      ModelParams p = params;
      p.values = flat;
      Tape tape;
      const TapedModel m = make_leaves(tape, p);
      const LossTerms t = total_loss(m, tape.constant(x), y, &g3, cfg, &anchor);
      return std::pair<Scalar, Vector>{t.total.item(),
                                       (tape.backward(t.total), m.flat_grad(p.layout))};
    };
    const Vector analytic = objective(params.values).second;
    Vector numeric(params.size());
    for (Index i = 0; i < params.size(); ++i) {
      Vector p = params.values, m = params.values;
      p(i) += 1e-6;
      m(i) -= 1e-6;
      numeric(i) = (objective(p).first - objective(m).first) / 2e-6;
    }
    const Scalar scale = std::max({analytic.norm(), numeric.norm(), Scalar(1e-10)});
    worst_total = std::max(worst_total, (analytic - numeric).norm() / scale);
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_intra <= kGradRelTol && worst_m0 <= kGradRelTol &&
                  worst_m05 <= kGradRelTol && worst_total <= kGradRelTol && secs < kBudgetGrad;
  return {ok, "max rel err intra " + num(worst_intra) + ", inter m=0 " + num(worst_m0) +
                  ", inter m=0.5 " + num(worst_m05) + ", total+prox " + num(worst_total) + ", " +
                  num(secs, 3) + " s"};
}

Outcome c3_motivation() {
  const auto t0 = std::chrono::steady_clock::now();
  const Scalar s3 = std::sqrt(3.0);
  Vector u(2), v(2);
  u << -s3 / 2, 0.5;
  v << -1.0 / 6.0, (s3 + 2.0) / 6.0;
  const Scalar analytic = angle_between(u, v);

  Scalar plain_lo = 1e9, plain_hi = -1e9, centroid_max = 0.0, iid_max = 0.0;
  for (int s = 0; s < kSeeds; ++s) {
    const Dataset ds = gen_motivation(500, static_cast<std::uint64_t>(s));
    ShiftOptions opts;
    opts.seed = static_cast<std::uint64_t>(s);
    const Scalar plain = empirical_shift(ds, ShiftVariant::kPlain, opts).shift_deg;
    plain_lo = std::min(plain_lo, plain);
    plain_hi = std::max(plain_hi, plain);
    centroid_max = std::max(centroid_max, empirical_shift(ds, ShiftVariant::kCentroid, opts).shift_deg);
    iid_max = std::max(iid_max, empirical_shift(ds, ShiftVariant::kIid, opts).shift_deg);
  }
  const double secs = seconds_since(t0);
  const bool a_ok = std::abs(analytic - 45.0) <= kAngleTol;
  const bool p_ok = plain_lo >= kPlainShiftLo && plain_hi <= kPlainShiftHi;
  const bool c_ok = centroid_max <= kCentroidShiftMax;
  const bool i_ok = iid_max <= kIidShiftMax;
  std::ostringstream d;
  d.precision(12);
  d << "analytic " << analytic << " deg [" << (a_ok ? "ok" : "miss") << "]";
  d.precision(4);
  d << "; plain " << plain_lo << ".." << plain_hi << " deg [" << (p_ok ? "ok" : "miss")
    << "]; centroid max " << centroid_max << " deg [" << (c_ok ? "ok" : "miss") << "]; iid max "
    << iid_max << " deg [" << (i_ok ? "ok" : "miss") << "]; " << secs << " s";
  return {a_ok && p_ok && c_ok && i_ok && secs < kBudgetMotivation, d.str()};
}

Outcome c4_fedavg_oracle() {
  bool all_equal = true;
  int rounds_checked = 0;
  for (Scalar momentum : {0.0, 0.9}) {
    for (std::uint64_t seed : {3u, 4u}) {
      const Dataset train = gen_circles_default(300, 2 * seed);
      const Dataset test = gen_circles_default(100, 2 * seed + 1);
      const auto clients = make_clients(train, partition_pcdd(train, {4, 2}, seed));
      MlpSpec spec{{2, 16, 3, 4}, seed};
      FedConfig cfg;
      cfg.rounds = 3;
      cfg.local_epochs = 1;
      cfg.batch_size = 64;
      cfg.seed = seed;
      cfg.sgd.momentum = momentum;
      ServerState server = init_server(spec, seed);
      for (int t = 0; t < cfg.rounds; ++t) {
        const ModelParams before = server.global_params;
        run_round(server, clients, test, cfg);

        // Oracle: each client's single epoch written out from the primitives,
        // then the sample-weighted mean summed in ascending client id.
        std::vector<std::pair<int, ModelParams>> locals;
        Index total = 0;
        for (const ClientState& c : clients) {
          ModelParams w = before;
          SgdState state;
          const auto order = epoch_order(seed, t, c.client_id, 0, c.data.size());
          for (Index start = 0; start < c.data.size(); start += cfg.batch_size) {
            const Index end = std::min(start + cfg.batch_size, c.data.size());
            Matrix x(end - start, 2);
            Labels y;
            for (Index i = start; i < end; ++i) {
              x.row(i - start) = c.data.features.row(order[static_cast<std::size_t>(i)]);
              y.push_back(c.data.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            }
            Tape tape;
            const TapedModel m = make_leaves(tape, w);
            const Tensor loss = softmax_cross_entropy(forward(m, tape.constant(x)).logits, y);
            tape.backward(loss);
            sgd_step(w.values, m.flat_grad(w.layout), cfg.sgd, state);
          }
          locals.emplace_back(c.client_id, std::move(w));
          total += c.data.size();
        }
        std::sort(locals.begin(), locals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        Vector expect = Vector::Zero(before.size());
        for (const auto& [id, w] : locals)
          expect += (static_cast<Scalar>(clients[static_cast<std::size_t>(id)].data.size()) /
                     static_cast<Scalar>(total)) * w.values;
        all_equal = all_equal && (expect.array() == server.global_params.values.array()).all();
        ++rounds_checked;
      }
    }
  }
  return {all_equal, std::to_string(rounds_checked) + " rounds compared bit for bit, " +
                         (all_equal ? "all identical" : "mismatch found")};
}

Outcome c5_efficacy() {
  const auto t0 = std::chrono::steady_clock::now();
  const ArmResult& avg = arm("fedavg-pcdd");
  const ArmResult& mr = arm("fedmr");
  const ArmResult& intra = arm("fedmr-intra");
  const double secs = seconds_since(t0);
  const bool ok = mr.accuracy > avg.accuracy && intra.accuracy > avg.accuracy && secs < kBudgetDesk;
  return {ok, "mean final accuracy fedavg " + num(avg.accuracy) + ", fedmr " + num(mr.accuracy) +
                  ", fedmr-intra " + num(intra.accuracy) + "; " + num(secs, 4) + " s"};
}

Outcome c6_collapse() {
  const Scalar avg = arm("fedavg-pcdd").eigvar;
  const Scalar iid = arm("fedavg-iid").eigvar;
  const Scalar mr = arm("fedmr").eigvar;
  const Scalar intra = arm("fedmr-intra").eigvar;
  const bool between = (intra < mr && mr < iid) || (iid < mr && mr < intra);
  const bool ok = intra < avg && between;
  return {ok, "eigvar fedmr-intra " + num(intra) + ", fedavg-pcdd " + num(avg) + ", fedmr " +
                  num(mr) + ", fedavg-iid " + num(iid)};
}

Outcome c7_theorem() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(707);
  long steps = 0, violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const TheoremSimConfig cfg = random_theorem_config(rng, 100);
    const TheoremSimResult r = theorem1_simulate(cfg);
    for (int t = 1; t <= cfg.T; ++t) {
      // Bound recomputed here from the configuration.
      const Scalar gamma = (1.0 - std::pow(cfg.p_k, t)) / (1.0 - cfg.p_k);
      const Scalar bound = 2.0 * (1.0 - cfg.p_hat * gamma) * cfg.G + cfg.delta * gamma;
      const Scalar err = std::abs(r.r[static_cast<std::size_t>(t)] - cfg.a_star);
      ++steps;
      if (err > bound * (1.0 + 1e-12) + 1e-15) ++violations;
    }
  }
  TheoremSimConfig full;
  full.G = 2.0;
  full.a_star = -0.7;
  full.p_k = 0.7;
  full.p_hat = 0.3;
  full.delta = 0.0;
  full.T = 100;
  full.seed = 9;
  const Scalar final_err = std::abs(theorem1_simulate(full).r.back() - full.a_star);
  const double secs = seconds_since(t0);
  const bool ok = violations == 0 && final_err <= kConvergeTol * full.G && secs < kBudgetTheorem;
  return {ok, std::to_string(violations) + " violations in " + std::to_string(steps) +
                  " steps; full-support error after 100 steps " + num(final_err) + "; " +
                  num(secs, 3) + " s"};
}

Outcome c8_communication() {
  const Scalar pct = 100.0 * communication_overhead(11'182'000, 10, 512);
  const bool overhead_ok = std::abs(pct - 0.044) <= kOverheadTolPp;

  const Dataset train = gen_circles_default(200, 10);
  const Dataset test = gen_circles_default(50, 11);
  auto clients = make_clients(train, partition_pcdd(train, {5, 2}, 5));
  assign_prototype_permissions(clients, 0.6, 5);
  MlpSpec spec{{2, 128, 3, 4}, 5};
  // Independent count: weights plus biases per layer.
  Index expect_params = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l)
    expect_params += spec.layer_sizes[l] * spec.layer_sizes[l + 1] + spec.layer_sizes[l + 1];
  FedConfig cfg;
  cfg.rounds = 4;
  cfg.local_epochs = 1;
  cfg.clients_per_round = 3;
  cfg.loss.mu1 = 0.01;
  cfg.loss.mu2 = 1e-4;
  cfg.loss.skip_missing_prototypes = true;
  cfg.seed = 5;
  bool identity = true;
  ServerState server = init_server(spec, 5);
  for (int t = 0; t < cfg.rounds; ++t) {
    const RoundReport r = run_round(server, clients, test, cfg);
    Index proto = 0;
    int submitters = 0;
    for (int id : r.selected) {
      const ClientState& c = clients[static_cast<std::size_t>(id)];
      if (!c.prototype_allowed) continue;
      proto += static_cast<Index>(c.class_set.size()) * spec.feature_dim();
      ++submitters;
    }
    identity = identity && r.model_param_count == expect_params &&
               r.uplink_model_params == static_cast<Index>(r.selected.size()) * expect_params &&
               r.uplink_prototype_params == proto && r.prototype_submitters == submitters &&
               r.uplink_total_params == r.uplink_model_params + r.uplink_prototype_params;
  }
  return {overhead_ok && identity, "overhead " + num(pct, 6) + "% vs 0.044% [" +
                                       (overhead_ok ? "ok" : "miss") + "]; uplink identity " +
                                       (identity ? "exact over 4 rounds" : "violated")};
}

Outcome c9_lite() {
  std::mt19937_64 rng(909);
  const Index n = 128, d = 3;
  const Matrix zm = gaussian(n, d, rng).cwiseAbs();
  const Labels y = balanced_labels(n, 4, rng);
  PrototypeSet globals;
  globals.dim = d;
  for (int c = 0; c < 4; ++c) globals.classes[c] = {gaussian(1, d, rng).cwiseAbs(), 1};
  LossConfig cfg;
  cfg.margin = 0.5;

  Tape ref_tape;
  const Scalar full = inter_loss(ref_tape.constant(zm), y, globals, cfg).item();
  Scalar worst = 0.0;
  for (Index lite : {10, 50}) {
    cfg.lite_n = lite;
    Scalar acc = 0.0;
    const int draws = 10'000;
    for (int i = 0; i < draws; ++i) {
      Tape tape;
      acc += inter_loss_lite(tape.constant(zm), y, globals, cfg, static_cast<std::uint64_t>(i)).item();
    }
    worst = std::max(worst, std::abs(acc / draws - full) / full);
  }
  cfg.lite_n = n;
  Tape t1, t2;
  const bool exact = inter_loss_lite(t1.constant(zm), y, globals, cfg, 1).item() ==
                     inter_loss(t2.constant(zm), y, globals, cfg).item();
  return {worst <= kLiteRelTol && exact, "max relative gap of resample mean " + num(worst) +
                                             ", lite_n >= batch exact: " + (exact ? "yes" : "no")};
}

Outcome c10_partial() {
  const ArmResult& avg = arm("fedavg-pcdd");
  const ArmResult& mr50 = arm("fedmr-50");
  return {mr50.accuracy > avg.accuracy,
          "mean final accuracy fedmr (50% submitters) " + num(mr50.accuracy) + ", fedavg " +
              num(avg.accuracy)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"C1  lemma1 identity", c1_lemma},
      {"C2  gradient correctness", c2_gradients},
      {"C3  motivation reproduction", c3_motivation},
      {"C4  fedavg oracle equivalence", c4_fedavg_oracle},
      {"C5  fedmr efficacy", c5_efficacy},
      {"C6  collapse metric trend", c6_collapse},
      {"C7  prototype error bound", c7_theorem},
      {"C8  communication accounting", c8_communication},
      {"C9  lite variant", c9_lite},
      {"C10 partial prototype submission", c10_partial},
  };
  int passed = 0;
  bool harness_ok = true;
  for (const auto& [name, fn] : criteria) {
    try {
      const Outcome o = fn();
      passed += o.pass ? 1 : 0;
      std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    } catch (const std::exception& e) {
      harness_ok = false;
      std::cout << "FAIL " << name << ": harness error: " << e.what() << std::endl;
    }
  }
  for (const auto& [key, r] : desk_cache()) {
    std::cout << "  desk " << key << " per-seed final accuracy:";
    for (Scalar a : r.per_seed) std::cout << ' ' << a;
    std::cout << '\n';
  }
  std::cout << passed << "/" << criteria.size() << " criteria met" << std::endl;
  return harness_ok ? 0 : 1;
}
