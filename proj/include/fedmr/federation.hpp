#pragma once

// Round protocol: client selection, local training, sample-weighted model
// and prototype aggregation, evaluation and communication accounting.

#include "fedmr/data.hpp"
#include "fedmr/losses.hpp"
#include "fedmr/model.hpp"
#include "fedmr/optim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <vector>

namespace fedmr {

struct FedConfig {
  int rounds = 0;
  int local_epochs = 10;
  Index batch_size = 128;
  int clients_per_round = 0;  // 0 selects every client
  LossConfig loss;
  SgdConfig sgd;
  std::uint64_t seed = 0;
  int threads = 1;

  // Collapse metric on the global model after each round.
  bool eigvar = false;
  Index eigvar_k = 50;
  Scalar eigvar_normalizer = 128.0;
  Index eigvar_batch = 128;

  std::vector<Scalar> accuracy_targets;

  void validate(int total_clients) const;
};

// A client sees only its own samples.
struct ClientState {
  int client_id = 0;
  Dataset data;
  std::vector<int> class_set;
  bool prototype_allowed = true;
};

std::vector<ClientState> make_clients(const Dataset& train, const std::vector<ClientShard>& shards);

// Marks round(fraction * clients) randomly chosen clients as prototype
// submitters and the rest as withheld; fixed for the whole experiment.
void assign_prototype_permissions(std::vector<ClientState>& clients, Scalar fraction,
                                  std::uint64_t seed);

struct ServerState {
  int round = 0;
  ModelParams global_params;
  std::optional<PrototypeSet> global_prototypes;
  std::uint64_t seed = 0;
};

struct ClientLosses {
  int client_id = 0;
  Index samples = 0;
  // Means over the batches of the final local epoch.
  Scalar cls = 0.0;
  Scalar intra = 0.0;
  Scalar inter = 0.0;
  Scalar prox = 0.0;
  Scalar total = 0.0;
  Scalar first_epoch_total = 0.0;
};

struct LocalResult {
  ModelParams params;
  std::optional<PrototypeSet> prototypes;
  ClientLosses losses;
};

struct RoundReport {
  int round = 0;
  std::vector<int> selected;
  std::vector<ClientLosses> client_losses;
  Scalar test_accuracy = 0.0;
  Index model_param_count = 0;
  Index uplink_model_params = 0;      // |selected| * param_count
  Index uplink_prototype_params = 0;  // sum over submitters of |C_k| * d
  Index uplink_total_params = 0;
  int prototype_submitters = 0;
  std::optional<Scalar> eigvar;
};

// Uniform without replacement, ascending ids; a function of (seed, round).
std::vector<int> select_clients(int total, int k, int round, std::uint64_t seed);

// Sample order for one local epoch; a function of (seed, round, client, epoch).
std::vector<Index> epoch_order(std::uint64_t seed, int round, int client, int epoch, Index n);

LocalResult local_train(const ClientState& client, const ModelParams& global_params,
                        const PrototypeSet* global_prototypes, const FedConfig& cfg, int round);

struct WeightedParams {
  int client_id = 0;
  const ModelParams* params = nullptr;
  Index samples = 0;
};

// Sum of p_k w_k with p_k = N_k / sum N, accumulated in ascending client id.
ModelParams aggregate_params(std::vector<WeightedParams> updates);

struct PrototypeSubmission {
  int client_id = 0;
  const PrototypeSet* prototypes = nullptr;  // counts are the N_k^c
};

// Per-class count-weighted mean over submitters owning the class. Classes with
// no submitter this round keep their previous global prototype.
PrototypeSet aggregate_prototypes(std::vector<PrototypeSubmission> submissions,
                                  const std::optional<PrototypeSet>& previous);

Scalar evaluate_accuracy(const ModelParams& params, const Dataset& test);

// Mean over classes of eigvar_topk on standardized per-class covariances of
// the global model's features for a fixed test batch.
Scalar feature_eigvar(const ModelParams& params, const Dataset& batch, Index k,
                      Scalar normalizer);

ServerState init_server(const MlpSpec& spec, std::uint64_t seed);

RoundReport run_round(ServerState& server, const std::vector<ClientState>& clients,
                      const Dataset& test, const FedConfig& cfg);

struct ExperimentSummary {
  Scalar best_accuracy = 0.0;
  int best_round = -1;
  Scalar final_accuracy = 0.0;
  std::map<Scalar, std::optional<int>> rounds_to_target;
  Index total_uplink_params = 0;
  int rounds = 0;
};

struct ExperimentResult {
  std::vector<RoundReport> reports;
  ServerState final_state;
  ExperimentSummary summary;
};

ExperimentResult run_experiment(const MlpSpec& spec, const std::vector<ClientState>& clients,
                                const Dataset& test, const FedConfig& cfg);

ExperimentSummary summarize(const std::vector<RoundReport>& reports,
                            const std::vector<Scalar>& targets);

// Extra uplink fraction from sending C prototypes of width d next to the model.
Scalar communication_overhead(Index param_count, Index classes, Index dim);

nlohmann::json to_json(const RoundReport& report);
nlohmann::json to_json(const ExperimentSummary& summary);
void write_jsonl(std::ostream& out, const std::vector<RoundReport>& reports);

}  // namespace fedmr
