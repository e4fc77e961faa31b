#include "fedmr/federation.hpp"

#include "fedmr/analysis.hpp"
#include "fedmr/errors.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <thread>

namespace fedmr {

namespace {

enum class Stream : std::uint32_t { kSelect = 1, kEpoch = 2, kLite = 3, kPermission = 4, kEigvar = 5 };

std::mt19937_64 stream_rng(std::uint64_t seed, Stream tag, std::uint64_t a = 0,
                           std::uint64_t b = 0, std::uint64_t c = 0, std::uint64_t d = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag),  static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(c),
                    static_cast<std::uint32_t>(d)};
  return std::mt19937_64(seq);
}

}  // namespace

void FedConfig::validate(int total_clients) const {
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (clients_per_round < 0 || clients_per_round > total_clients)
    throw ConfigError("clients_per_round must lie in [1, " + std::to_string(total_clients) + "]");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (eigvar && (eigvar_k < 1 || eigvar_batch < 2 || !(eigvar_normalizer > 0.0)))
    throw ConfigError("eigvar settings out of range");
  for (Scalar t : accuracy_targets)
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("accuracy targets must lie in [0, 1]");
  loss.validate();
  sgd.validate();
}

std::vector<ClientState> make_clients(const Dataset& train,
                                      const std::vector<ClientShard>& shards) {
  std::vector<ClientState> out;
  out.reserve(shards.size());
  for (const ClientShard& shard : shards) {
    if (shard.indices.empty())
      throw PartitionError("client " + std::to_string(shard.client_id) + " has an empty shard");
    ClientState c;
    c.client_id = shard.client_id;
    c.data = train.subset(shard.indices);
    c.class_set = shard.class_set;
    out.push_back(std::move(c));
  }
  return out;
}

void assign_prototype_permissions(std::vector<ClientState>& clients, Scalar fraction,
                                  std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("fraction must lie in [0, 1]");
  const auto n = clients.size();
  const auto allowed = static_cast<std::size_t>(std::llround(fraction * static_cast<Scalar>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = stream_rng(seed, Stream::kPermission);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < n; ++i) clients[order[i]].prototype_allowed = i < allowed;
}

std::vector<int> select_clients(int total, int k, int round, std::uint64_t seed) {
  if (k < 1 || k > total)
    throw ContractError("select_clients: k=" + std::to_string(k) + " with " +
                        std::to_string(total) + " clients");
  std::vector<int> ids(static_cast<std::size_t>(total));
  std::iota(ids.begin(), ids.end(), 0);
  if (k < total) {
    auto rng = stream_rng(seed, Stream::kSelect, static_cast<std::uint64_t>(round));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

std::vector<Index> epoch_order(std::uint64_t seed, int round, int client, int epoch, Index n) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  auto rng = stream_rng(seed, Stream::kEpoch, static_cast<std::uint64_t>(round),
                        static_cast<std::uint64_t>(client), static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

LocalResult local_train(const ClientState& client, const ModelParams& global_params,
                        const PrototypeSet* global_prototypes, const FedConfig& cfg, int round) {
  if (client.data.size() == 0)
    throw ContractError("local_train: client " + std::to_string(client.client_id) +
                        " has no samples");
  LossConfig loss = cfg.loss;
  // Before any prototype exists the margin term has nothing to pull towards.
  if (global_prototypes == nullptr || global_prototypes->classes.empty()) {
    loss.mu2 = 0.0;
    global_prototypes = nullptr;
  }

  LocalResult out;
  out.params = global_params;
  out.losses.client_id = client.client_id;
  out.losses.samples = client.data.size();

  SgdState state;
  const Index n = client.data.size();
  const Index bs = std::min(cfg.batch_size, n);
  auto lite_rng = stream_rng(cfg.seed, Stream::kLite, static_cast<std::uint64_t>(round),
                             static_cast<std::uint64_t>(client.client_id));

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto order = epoch_order(cfg.seed, round, client.client_id, epoch, n);
    ClientLosses acc;
    Index batches = 0;
    for (Index start = 0; start < n; start += bs) {
      const Index end = std::min(start + bs, n);
      const std::span<const Index> rows(order.data() + start, static_cast<std::size_t>(end - start));
      Matrix x(end - start, client.data.input_dim());
      Labels y(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        x.row(static_cast<Index>(i)) = client.data.features.row(rows[i]);
        y[i] = client.data.labels[static_cast<std::size_t>(rows[i])];
      }

      Tape tape;
      const TapedModel model = make_leaves(tape, out.params);
      const Tensor batch = tape.constant(std::move(x));
      const std::uint64_t lite_seed = lite_rng();
      const LossTerms terms =
          total_loss(model, batch, y, global_prototypes, loss, &global_params, lite_seed);
      tape.backward(terms.total);
      sgd_step(out.params.values, model.flat_grad(out.params.layout), cfg.sgd, state);

      acc.cls += terms.cls;
      acc.intra += terms.intra;
      acc.inter += terms.inter;
      acc.prox += terms.prox;
      acc.total += terms.total.item();
      ++batches;
    }
    const auto b = static_cast<Scalar>(batches);
    out.losses.cls = acc.cls / b;
    out.losses.intra = acc.intra / b;
    out.losses.inter = acc.inter / b;
    out.losses.prox = acc.prox / b;
    out.losses.total = acc.total / b;
    if (epoch == 0) out.losses.first_epoch_total = out.losses.total;
  }

  if (client.prototype_allowed && cfg.loss.mu2 > 0.0) {
    const Features f = forward(out.params, client.data.features);
    out.prototypes = local_prototypes(f.z, client.data.labels);
  }
  return out;
}

ModelParams aggregate_params(std::vector<WeightedParams> updates) {
  if (updates.empty()) throw ProtocolError("aggregate_params: no updates");
  std::sort(updates.begin(), updates.end(),
            [](const WeightedParams& a, const WeightedParams& b) { return a.client_id < b.client_id; });
  const Index len = updates.front().params->size();
  Scalar total = 0.0;
  for (const WeightedParams& u : updates) {
    if (u.params->size() != len)
      throw DimensionError("aggregate_params: parameter length " + std::to_string(u.params->size()) +
                           " != " + std::to_string(len));
    if (u.samples < 1) throw ProtocolError("aggregate_params: client with no samples");
    total += static_cast<Scalar>(u.samples);
  }
  ModelParams out = *updates.front().params;
  out.values.setZero();
  for (const WeightedParams& u : updates)
    out.values += (static_cast<Scalar>(u.samples) / total) * u.params->values;
  return out;
}

PrototypeSet aggregate_prototypes(std::vector<PrototypeSubmission> submissions,
                                  const std::optional<PrototypeSet>& previous) {
  std::sort(submissions.begin(), submissions.end(),
            [](const PrototypeSubmission& a, const PrototypeSubmission& b) {
              return a.client_id < b.client_id;
            });
  PrototypeSet out;
  if (previous) out = *previous;
  Index dim = previous ? previous->dim : -1;
  for (const PrototypeSubmission& s : submissions) {
    if (dim >= 0 && s.prototypes->dim != dim)
      throw DimensionError("aggregate_prototypes: prototype width mismatch");
    dim = s.prototypes->dim;
  }
  if (dim >= 0) out.dim = dim;

  std::map<int, Index> counts;
  for (const PrototypeSubmission& s : submissions)
    for (const auto& [label, p] : s.prototypes->classes) counts[label] += p.count;
  std::map<int, Prototype> fresh;
  for (const PrototypeSubmission& s : submissions) {
    for (const auto& [label, p] : s.prototypes->classes) {
      const Index n = counts.at(label);
      auto [it, inserted] = fresh.try_emplace(label);
      if (inserted) {
        it->second.centroid = RowVector::Zero(dim);
        it->second.count = n;
      }
      it->second.centroid += (static_cast<Scalar>(p.count) / static_cast<Scalar>(n)) * p.centroid;
    }
  }
  for (auto& [label, p] : fresh) out.classes[label] = std::move(p);
  return out;
}

Scalar evaluate_accuracy(const ModelParams& params, const Dataset& test) {
  if (test.size() == 0) throw ContractError("evaluate_accuracy: empty test set");
  const Features f = forward(params, test.features);
  Index correct = 0;
  for (Index i = 0; i < test.size(); ++i) {
    Index arg = 0;
    f.logits.row(i).maxCoeff(&arg);
    if (arg == test.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<Scalar>(correct) / static_cast<Scalar>(test.size());
}

Scalar feature_eigvar(const ModelParams& params, const Dataset& batch, Index k,
                      Scalar normalizer) {
  const Features f = forward(params, batch.features);
  const auto covs = standardized_covariances(f.z, batch.labels);
  if (covs.empty()) throw ContractError("feature_eigvar: no class has two samples");
  Scalar acc = 0.0;
  for (const auto& [label, m] : covs)
    acc += eigvar_topk(sym_eigenvalues(m), std::min(k, m.rows()), normalizer);
  return acc / static_cast<Scalar>(covs.size());
}

ServerState init_server(const MlpSpec& spec, std::uint64_t seed) {
  ServerState s;
  s.global_params = init(spec);
  s.seed = seed;
  return s;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Dataset eigvar_batch(const Dataset& test, Index size, std::uint64_t seed) {
  std::vector<Index> rows(static_cast<std::size_t>(test.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  auto rng = stream_rng(seed, Stream::kEigvar);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(static_cast<std::size_t>(std::min(size, test.size())));
  std::sort(rows.begin(), rows.end());
  return test.subset(rows);
}

}  // namespace

RoundReport run_round(ServerState& server, const std::vector<ClientState>& clients,
                      const Dataset& test, const FedConfig& cfg) {
  const int total = static_cast<int>(clients.size());
  const int k = cfg.clients_per_round == 0 ? total : cfg.clients_per_round;
  RoundReport report;
  report.round = server.round;
  report.selected = select_clients(total, k, server.round, cfg.seed);

  const PrototypeSet* protos = server.global_prototypes ? &*server.global_prototypes : nullptr;
  std::vector<LocalResult> results(report.selected.size());
  parallel_for(results.size(), cfg.threads, [&](std::size_t i) {
    const ClientState& c = clients[static_cast<std::size_t>(report.selected[i])];
    results[i] = local_train(c, server.global_params, protos, cfg, server.round);
  });

  std::vector<WeightedParams> updates;
  std::vector<PrototypeSubmission> submissions;
  report.model_param_count = server.global_params.size();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const int id = clients[static_cast<std::size_t>(report.selected[i])].client_id;
    updates.push_back({id, &results[i].params, results[i].losses.samples});
    report.client_losses.push_back(results[i].losses);
    report.uplink_model_params += report.model_param_count;
    if (results[i].prototypes) {
      submissions.push_back({id, &*results[i].prototypes});
      report.uplink_prototype_params += results[i].prototypes->param_count();
      ++report.prototype_submitters;
    }
  }
  report.uplink_total_params = report.uplink_model_params + report.uplink_prototype_params;

  server.global_params = aggregate_params(std::move(updates));
  if (!submissions.empty() || server.global_prototypes)
    server.global_prototypes = aggregate_prototypes(std::move(submissions), server.global_prototypes);

  report.test_accuracy = evaluate_accuracy(server.global_params, test);
  if (cfg.eigvar)
    report.eigvar = feature_eigvar(server.global_params, eigvar_batch(test, cfg.eigvar_batch, cfg.seed),
                                   cfg.eigvar_k, cfg.eigvar_normalizer);
  ++server.round;
  return report;
}

ExperimentSummary summarize(const std::vector<RoundReport>& reports,
                            const std::vector<Scalar>& targets) {
  ExperimentSummary s;
  s.rounds = static_cast<int>(reports.size());
  for (Scalar t : targets) s.rounds_to_target[t] = std::nullopt;
  for (const RoundReport& r : reports) {
    if (s.best_round < 0 || r.test_accuracy > s.best_accuracy) {
      s.best_accuracy = r.test_accuracy;
      s.best_round = r.round;
    }
    s.total_uplink_params += r.uplink_total_params;
    for (auto& [t, reached] : s.rounds_to_target)
      if (!reached && r.test_accuracy >= t) reached = r.round + 1;
  }
  if (!reports.empty()) s.final_accuracy = reports.back().test_accuracy;
  return s;
}

ExperimentResult run_experiment(const MlpSpec& spec, const std::vector<ClientState>& clients,
                                const Dataset& test, const FedConfig& cfg) {
  cfg.validate(static_cast<int>(clients.size()));
  ExperimentResult out;
  out.final_state = init_server(spec, cfg.seed);
  for (int t = 0; t < cfg.rounds; ++t)
    out.reports.push_back(run_round(out.final_state, clients, test, cfg));
  out.summary = summarize(out.reports, cfg.accuracy_targets);
  return out;
}

Scalar communication_overhead(Index param_count, Index classes, Index dim) {
  if (param_count <= 0) throw ContractError("communication_overhead: param_count must be > 0");
  return static_cast<Scalar>(classes * dim) / static_cast<Scalar>(param_count);
}

nlohmann::json to_json(const RoundReport& r) {
  nlohmann::json losses = nlohmann::json::array();
  for (const ClientLosses& c : r.client_losses)
    losses.push_back({{"client_id", c.client_id},
                      {"samples", c.samples},
                      {"cls", c.cls},
                      {"intra", c.intra},
                      {"inter", c.inter},
                      {"prox", c.prox},
                      {"total", c.total},
                      {"first_epoch_total", c.first_epoch_total}});
  nlohmann::json j = {{"round", r.round},
                      {"selected", r.selected},
                      {"client_losses", std::move(losses)},
                      {"test_accuracy", r.test_accuracy},
                      {"model_param_count", r.model_param_count},
                      {"uplink_model_params", r.uplink_model_params},
                      {"uplink_prototype_params", r.uplink_prototype_params},
                      {"uplink_total_params", r.uplink_total_params},
                      {"prototype_submitters", r.prototype_submitters}};
  j["eigvar"] = r.eigvar ? nlohmann::json(*r.eigvar) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const ExperimentSummary& s) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& [t, reached] : s.rounds_to_target)
    targets.push_back({{"target", t},
                       {"rounds", reached ? nlohmann::json(*reached) : nlohmann::json(nullptr)}});
  return {{"best_accuracy", s.best_accuracy},   {"best_round", s.best_round},
          {"final_accuracy", s.final_accuracy}, {"rounds_to_target", std::move(targets)},
          {"total_uplink_params", s.total_uplink_params}, {"rounds", s.rounds}};
}

void write_jsonl(std::ostream& out, const std::vector<RoundReport>& reports) {
  for (const RoundReport& r : reports) out << to_json(r).dump() << '\n';
}

}  // namespace fedmr
