#include "fedmr/analysis.hpp"
#include "fedmr/config.hpp"
#include "fedmr/errors.hpp"
#include "fedmr/federation.hpp"
#include "fedmr/verify.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace fedmr;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
};

ExperimentConfig load(const std::string& path, const Overrides& o) {
  ExperimentConfig cfg = parse_config_file(path);
  if (o.seed) {
    cfg.fed.seed = *o.seed;
    cfg.dataset.seed = *o.seed;
  }
  if (o.threads) {
    cfg.fed.threads = *o.threads;
    cfg.fed.validate(cfg.partition.clients);
  }
  if (o.out) cfg.output = *o.out;
  return cfg;
}

// Writes to the file when a path is given, otherwise to stdout.
class Sink {
 public:
  explicit Sink(const std::optional<std::filesystem::path>& path) {
    if (path) {
      file_.open(*path);
      if (!file_) throw ConfigError(path->string() + ": cannot open for writing");
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

void write_features(std::ostream& out, const ModelParams& params, const Dataset& ds) {
  const Features f = forward(params, ds.features);
  out << std::setprecision(17);
  if (f.z.cols() == 3) {
    const SphereProjection p = project_to_sphere(f.z, ds.labels);
    out << "x,y,z,label\n";
    for (Index i = 0; i < p.points.rows(); ++i)
      out << p.points(i, 0) << ',' << p.points(i, 1) << ',' << p.points(i, 2) << ','
          << p.labels[static_cast<std::size_t>(i)] << '\n';
    std::cerr << "dump-features: " << p.points.rows() << " rows written, " << p.skipped
              << " zero-norm rows skipped\n";
    return;
  }
  for (Index j = 0; j < f.z.cols(); ++j) out << 'z' << j << ',';
  out << "label\n";
  for (Index i = 0; i < f.z.rows(); ++i) {
    for (Index j = 0; j < f.z.cols(); ++j) out << f.z(i, j) << ',';
    out << ds.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

int cmd_run(const std::string& path, const Overrides& o) {
  const ExperimentConfig cfg = load(path, o);
  const ExperimentData data = build_experiment(cfg);
  const ExperimentResult result = run_experiment(data.spec, data.clients, data.test, cfg.fed);
  {
    Sink sink(cfg.output);
    write_jsonl(sink.stream(), result.reports);
  }
  nlohmann::json summary = to_json(result.summary);
  summary["algorithm"] = to_string(cfg.algorithm);
  if (cfg.output) {
    std::ofstream s(cfg.output->string() + ".summary.json");
    s << summary.dump(2) << '\n';
  }
  std::cout << summary.dump() << '\n';
  if (cfg.dump_features) {
    const std::filesystem::path fp =
        cfg.output ? std::filesystem::path(cfg.output->string() + ".features.csv")
                   : std::filesystem::path("features.csv");
    std::ofstream f(fp);
    write_features(f, result.final_state.global_params, data.test);
  }
  return 0;
}

int cmd_dump_features(const std::string& path, const Overrides& o) {
  const ExperimentConfig cfg = load(path, o);
  const ExperimentData data = build_experiment(cfg);
  const ExperimentResult result = run_experiment(data.spec, data.clients, data.test, cfg.fed);
  Sink sink(o.out ? std::optional<std::filesystem::path>(*o.out) : std::nullopt);
  write_features(sink.stream(), result.final_state.global_params, data.test);
  return 0;
}

int cmd_partition_stats(const std::string& path, const Overrides& o) {
  const ExperimentConfig cfg = load(path, o);
  const ExperimentData data = build_experiment(cfg);
  Sink sink(o.out ? std::optional<std::filesystem::path>(*o.out) : std::nullopt);
  std::ostream& out = sink.stream();
  out << "client";
  for (int c = 0; c < data.train.num_classes; ++c) out << ",class_" << c;
  out << ",total\n";
  for (const ClientState& client : data.clients) {
    out << client.client_id;
    for (Index n : client.data.class_counts()) out << ',' << n;
    out << ',' << client.data.size() << '\n';
  }
  return 0;
}

int cmd_verify(const VerifyOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_verification(opts);
  bool ok = true;
  for (const PropertyResult& r : results) {
    std::cout << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(30) << r.name
              << r.detail << '\n';
    ok = ok && r.passed;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << (ok ? "all properties hold" : "verification failed") << " (" << std::fixed
            << std::setprecision(2) << secs << " s)\n";
  if (!ok)
    for (const PropertyResult& r : results)
      if (!r.passed) std::cerr << "failed property: " << r.name << '\n';
  return ok ? 0 : 1;
}

void report_error(const std::string& category, const std::string& message) {
  std::cerr << nlohmann::json{{"error", category}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with manifold-reshaping local objectives"};
  app.require_subcommand(1);

  Overrides o;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Override the experiment seed");
    sub->add_option("--threads", threads, "Clients trained in parallel")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "Output path");
  };

  std::string config;
  auto* run = app.add_subcommand("run", "Run an experiment and write JSONL round reports");
  run->add_option("config", config, "Experiment config (JSON)")->required();
  add_common(run);
  auto* dump = app.add_subcommand("dump-features", "Train, then dump test-set features as CSV");
  dump->add_option("config", config, "Experiment config (JSON)")->required();
  add_common(dump);
  auto* stats = app.add_subcommand("partition-stats", "Per-client class histograms as CSV");
  stats->add_option("config", config, "Experiment config (JSON)")->required();
  add_common(stats);

  VerifyOptions vopts;
  auto* verify = app.add_subcommand("verify", "Run the property-verification battery");
  verify->add_option("--seed", vopts.seed, "Seed for randomized properties");
  verify->add_flag("--remove-std-floor", vopts.remove_std_floor,
                   "Fault injection: drop the standard-deviation floor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (CLI::App* sub : {run, dump, stats}) {
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--threads")) o.threads = threads;
    if (sub->count("--out")) o.out = out;
  }

  try {
    if (*run) return cmd_run(config, o);
    if (*dump) return cmd_dump_features(config, o);
    if (*stats) return cmd_partition_stats(config, o);
    if (*verify) return cmd_verify(vopts);
  } catch (const ConfigError& e) {
    report_error(e.category(), e.what());
    return 2;
  } catch (const Error& e) {
    report_error(e.category(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 0;
}
