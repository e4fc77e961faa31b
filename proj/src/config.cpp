#include "fedmr/config.hpp"

#include "fedmr/errors.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fedmr {

namespace {

using nlohmann::json;

// Wraps one JSON object, records which keys were read and rejects the rest.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(label("") + " must be an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  template <typename T>
  std::optional<T> get(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) return std::nullopt;
    const json& v = obj_.at(key);
    if (!matches<T>(v)) throw ConfigError(label(key) + ": wrong type");
    return v.get<T>();
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) {
    return get<T>(key).value_or(fallback);
  }

  template <typename T>
  T require(const std::string& key) {
    auto v = get<T>(key);
    if (!v) throw ConfigError(label(key) + ": missing required key");
    return *v;
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) throw ConfigError(label(key) + ": missing required key");
    return Section(obj_.at(key), label(key));
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      if (!seen_.contains(key)) throw ConfigError(label(key) + ": unknown key");
  }

  std::string label(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  template <typename T>
  static bool matches(const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      return v.is_boolean();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return false;
      // Documents built in code store non-negative literals as signed.
      if (std::is_unsigned_v<T>) return v.is_number_unsigned() || v.get<std::int64_t>() >= 0;
      return true;
    } else if constexpr (std::is_floating_point_v<T>) {
      return v.is_number();
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v.is_string();
    } else {
      if (!v.is_array()) return false;
      for (const json& e : v)
        if (!matches<typename T::value_type>(e)) return false;
      return true;
    }
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
void reject_for(Section& s, const std::string& key, const std::string& algo) {
  if (s.has(key) && s.get<T>(key)) throw ConfigError(s.label(key) + ": not used by " + algo);
}

}  // namespace

Algorithm parse_algorithm(const std::string& name) {
  if (name == "fedavg") return Algorithm::kFedAvg;
  if (name == "fedprox") return Algorithm::kFedProx;
  if (name == "fedmr") return Algorithm::kFedMR;
  if (name == "fedmr-intra") return Algorithm::kFedMRIntra;
  if (name == "fedmr-inter") return Algorithm::kFedMRInter;
  if (name == "fedmr-lite") return Algorithm::kFedMRLite;
  throw ConfigError("algorithm: unknown value '" + name + "'");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kFedAvg: return "fedavg";
    case Algorithm::kFedProx: return "fedprox";
    case Algorithm::kFedMR: return "fedmr";
    case Algorithm::kFedMRIntra: return "fedmr-intra";
    case Algorithm::kFedMRInter: return "fedmr-inter";
    case Algorithm::kFedMRLite: return "fedmr-lite";
  }
  return "unknown";
}

ExperimentConfig parse_config(const nlohmann::json& doc) {
  Section root(doc, "");
  ExperimentConfig cfg;
  cfg.algorithm = parse_algorithm(root.require<std::string>("algorithm"));
  const std::string algo = to_string(cfg.algorithm);

  FedConfig& fed = cfg.fed;
  fed.seed = root.get_or<std::uint64_t>("seed", 0);
  fed.rounds = root.require<int>("rounds");
  fed.local_epochs = root.get_or<int>("local_epochs", 10);
  fed.batch_size = root.get_or<Index>("batch_size", 128);
  fed.clients_per_round = root.get_or<int>("clients_per_round", 0);
  fed.threads = root.get_or<int>("threads", 1);
  fed.sgd.learning_rate = root.get_or<double>("learning_rate", 0.01);
  fed.sgd.momentum = root.get_or<double>("momentum", 0.9);
  fed.sgd.weight_decay = root.get_or<double>("weight_decay", 1e-5);
  fed.eigvar = root.get_or<bool>("eigvar", false);
  fed.eigvar_k = root.get_or<Index>("eigvar_k", 50);
  fed.eigvar_normalizer = root.get_or<double>("eigvar_normalizer", 128.0);
  fed.eigvar_batch = root.get_or<Index>("eigvar_batch", 128);
  fed.accuracy_targets = root.get_or<std::vector<double>>("accuracy_targets", {});
  if (auto out = root.get<std::string>("output")) cfg.output = *out;
  cfg.dump_features = root.get_or<bool>("dump_features", false);

  LossConfig& loss = fed.loss;
  loss.contrast_all = root.get_or<bool>("contrast_all", false);
  loss.margin = root.get_or<double>("margin", 0.0);
  loss.std_floor = root.get_or<double>("std_floor", 1e-8);
  loss.skip_missing_prototypes = root.get_or<bool>("skip_missing_prototypes", false);
  if (auto mode = root.get<std::string>("inter_mode")) {
    if (*mode == "hinge") loss.inter_mode = InterMode::kHinge;
    else if (*mode == "pull") loss.inter_mode = InterMode::kPull;
    else throw ConfigError("inter_mode: unknown value '" + *mode + "'");
  }
  cfg.prototype_fraction = root.get_or<double>("prototype_fraction", 1.0);

  const bool uses_intra = cfg.algorithm == Algorithm::kFedMR ||
                          cfg.algorithm == Algorithm::kFedMRIntra ||
                          cfg.algorithm == Algorithm::kFedMRLite;
  const bool uses_inter = cfg.algorithm == Algorithm::kFedMR ||
                          cfg.algorithm == Algorithm::kFedMRInter ||
                          cfg.algorithm == Algorithm::kFedMRLite;
  if (uses_intra) loss.mu1 = root.get_or<double>("mu1", 0.01);
  else reject_for<double>(root, "mu1", algo);
  if (uses_inter) loss.mu2 = root.get_or<double>("mu2", 1e-4);
  else reject_for<double>(root, "mu2", algo);
  if (cfg.algorithm == Algorithm::kFedProx) {
    loss.prox_mu = root.require<double>("prox_mu");
    if (!(loss.prox_mu > 0.0)) throw ConfigError("prox_mu: fedprox requires a value > 0");
  } else {
    reject_for<double>(root, "prox_mu", algo);
  }
  if (cfg.algorithm == Algorithm::kFedMRLite) loss.lite_n = root.require<Index>("lite_n");
  else reject_for<Index>(root, "lite_n", algo);

  {
    Section ds = root.child("dataset");
    const auto kind = ds.require<std::string>("kind");
    if (kind == "circles") cfg.dataset.kind = DatasetKind::kCircles;
    else if (kind == "motivation") cfg.dataset.kind = DatasetKind::kMotivation;
    else if (kind == "csv") cfg.dataset.kind = DatasetKind::kCsv;
    else throw ConfigError("dataset.kind: unknown value '" + kind + "'");
    cfg.dataset.seed = ds.get_or<std::uint64_t>("seed", fed.seed);
    if (cfg.dataset.kind == DatasetKind::kCsv) {
      cfg.dataset.train_path = ds.require<std::string>("train");
      cfg.dataset.test_path = ds.require<std::string>("test");
    } else {
      cfg.dataset.n_per_class = ds.get_or<Index>("n_per_class", 5000);
      cfg.dataset.test_per_class = ds.get_or<Index>("test_per_class", 1000);
      if (cfg.dataset.n_per_class < 1 || cfg.dataset.test_per_class < 1)
        throw ConfigError("dataset: sample counts must be >= 1");
    }
    ds.finish();
  }
  {
    Section p = root.child("partition");
    const auto kind = p.require<std::string>("kind");
    cfg.partition.clients = p.require<int>("clients");
    if (kind == "pcdd") {
      cfg.partition.kind = PartitionKind::kPcdd;
      cfg.partition.classes_per_client = p.require<int>("classes_per_client");
    } else if (kind == "dirichlet") {
      cfg.partition.kind = PartitionKind::kDirichlet;
      cfg.partition.beta = p.require<double>("beta");
    } else if (kind == "iid") {
      cfg.partition.kind = PartitionKind::kIid;
    } else {
      throw ConfigError("partition.kind: unknown value '" + kind + "'");
    }
    if (cfg.partition.clients < 1) throw ConfigError("partition.clients: must be >= 1");
    p.finish();
  }
  if (root.has("model")) {
    Section m = root.child("model");
    cfg.hidden = m.get_or<std::vector<Index>>("hidden", cfg.hidden);
    cfg.feature_dim = m.get_or<Index>("feature_dim", cfg.feature_dim);
    m.finish();
  }
  root.finish();

  if (!(cfg.prototype_fraction >= 0.0 && cfg.prototype_fraction <= 1.0))
    throw ConfigError("prototype_fraction: must lie in [0, 1]");
  fed.validate(cfg.partition.clients);
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, false);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

ExperimentData build_experiment(const ExperimentConfig& cfg) {
  ExperimentData out;
  switch (cfg.dataset.kind) {
    case DatasetKind::kCircles:
      out.train = gen_circles_default(cfg.dataset.n_per_class, 2 * cfg.dataset.seed);
      out.test = gen_circles_default(cfg.dataset.test_per_class, 2 * cfg.dataset.seed + 1);
      break;
    case DatasetKind::kMotivation:
      out.train = gen_motivation(cfg.dataset.n_per_class, 2 * cfg.dataset.seed);
      out.test = gen_motivation(cfg.dataset.test_per_class, 2 * cfg.dataset.seed + 1);
      break;
    case DatasetKind::kCsv:
      out.train = load_csv(cfg.dataset.train_path);
      out.test = load_csv(cfg.dataset.test_path);
      if (out.test.input_dim() != out.train.input_dim())
        throw FormatError("test and train CSV files differ in feature count");
      out.train.num_classes = out.test.num_classes =
          std::max(out.train.num_classes, out.test.num_classes);
      break;
  }

  const std::uint64_t seed = cfg.fed.seed;
  switch (cfg.partition.kind) {
    case PartitionKind::kPcdd:
      out.shards = partition_pcdd(out.train, {cfg.partition.clients, cfg.partition.classes_per_client}, seed);
      break;
    case PartitionKind::kDirichlet:
      out.shards = partition_dirichlet(out.train, {cfg.partition.clients, cfg.partition.beta}, seed);
      break;
    case PartitionKind::kIid:
      out.shards = partition_iid(out.train, {cfg.partition.clients}, seed);
      break;
  }
  out.clients = make_clients(out.train, out.shards);
  if (cfg.prototype_fraction < 1.0)
    assign_prototype_permissions(out.clients, cfg.prototype_fraction, seed);

  out.spec.layer_sizes.push_back(out.train.input_dim());
  for (Index h : cfg.hidden) out.spec.layer_sizes.push_back(h);
  out.spec.layer_sizes.push_back(cfg.feature_dim);
  out.spec.layer_sizes.push_back(out.train.num_classes);
  out.spec.seed = seed;
  out.spec.validate();
  return out;
}

}  // namespace fedmr
