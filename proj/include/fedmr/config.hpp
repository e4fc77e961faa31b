#pragma once

// Experiment configuration: a strict JSON document describing the dataset,
// the partition, the model and one named algorithm.

#include "fedmr/data.hpp"
#include "fedmr/federation.hpp"
#include "fedmr/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fedmr {

enum class Algorithm { kFedAvg, kFedProx, kFedMR, kFedMRIntra, kFedMRInter, kFedMRLite };

Algorithm parse_algorithm(const std::string& name);
std::string to_string(Algorithm a);

enum class DatasetKind { kCircles, kMotivation, kCsv };
enum class PartitionKind { kPcdd, kDirichlet, kIid };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kCircles;
  Index n_per_class = 5000;
  Index test_per_class = 1000;
  std::uint64_t seed = 0;
  std::filesystem::path train_path;  // csv only
  std::filesystem::path test_path;   // csv only
};

struct PartitionSpec {
  PartitionKind kind = PartitionKind::kPcdd;
  int clients = 0;
  int classes_per_client = 0;  // pcdd
  double beta = 0.5;           // dirichlet
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::kFedAvg;
  DatasetSpec dataset;
  PartitionSpec partition;
  std::vector<Index> hidden{128};
  Index feature_dim = 3;
  FedConfig fed;
  // Fraction of clients allowed to submit prototypes, fixed for the run.
  Scalar prototype_fraction = 1.0;
  std::optional<std::filesystem::path> output;
  bool dump_features = false;
};

// Unknown keys, missing required keys and type mismatches raise ConfigError
// naming the key.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

struct ExperimentData {
  Dataset train;
  Dataset test;
  std::vector<ClientShard> shards;
  std::vector<ClientState> clients;
  MlpSpec spec;
};

// Builds datasets, partition, clients and the model spec; deterministic in
// the configured seeds.
ExperimentData build_experiment(const ExperimentConfig& cfg);

}  // namespace fedmr
