#include "fedmr/analysis.hpp"
#include "fedmr/config.hpp"
#include "fedmr/errors.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace fedmr;
using nlohmann::json;

namespace {

json minimal(const std::string& algorithm) {
  return {{"algorithm", algorithm},
          {"seed", 1},
          {"rounds", 2},
          {"local_epochs", 1},
          {"dataset", {{"kind", "circles"}, {"n_per_class", 100}, {"test_per_class", 50}}},
          {"partition", {{"kind", "pcdd"}, {"clients", 4}, {"classes_per_client", 2}}},
          {"model", {{"hidden", {16}}, {"feature_dim", 3}}}};
}

std::string error_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fedmr_cfg_" + name);
}

std::filesystem::path write_config(const std::string& name, const json& doc) {
  const auto p = temp_path(name);
  std::ofstream(p) << doc.dump(2);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FEDMR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, MinimalFedAvgGetsDefaults) {
  const ExperimentConfig c = parse_config({{"algorithm", "fedavg"},
                                           {"seed", 0},
                                           {"rounds", 5},
                                           {"dataset", {{"kind", "circles"}}},
                                           {"partition", {{"kind", "iid"}, {"clients", 3}}}});
  EXPECT_EQ(c.algorithm, Algorithm::kFedAvg);
  EXPECT_EQ(c.fed.rounds, 5);
  EXPECT_EQ(c.fed.batch_size, 128);
  EXPECT_EQ(c.fed.local_epochs, 10);
  EXPECT_DOUBLE_EQ(c.fed.sgd.learning_rate, 0.01);
  EXPECT_DOUBLE_EQ(c.fed.sgd.momentum, 0.9);
  EXPECT_DOUBLE_EQ(c.fed.sgd.weight_decay, 1e-5);
  EXPECT_EQ(c.fed.loss.mu1, 0.0);
  EXPECT_EQ(c.fed.loss.mu2, 0.0);
  EXPECT_EQ(c.hidden, (std::vector<Index>{128}));
  EXPECT_EQ(c.feature_dim, 3);
  EXPECT_EQ(c.dataset.kind, DatasetKind::kCircles);
}

TEST(Config, FedMrDefaultsAndVariants) {
  const ExperimentConfig m = parse_config(minimal("fedmr"));
  EXPECT_DOUBLE_EQ(m.fed.loss.mu1, 0.01);
  EXPECT_DOUBLE_EQ(m.fed.loss.mu2, 1e-4);
  const ExperimentConfig intra = parse_config(minimal("fedmr-intra"));
  EXPECT_GT(intra.fed.loss.mu1, 0.0);
  EXPECT_EQ(intra.fed.loss.mu2, 0.0);
  const ExperimentConfig inter = parse_config(minimal("fedmr-inter"));
  EXPECT_EQ(inter.fed.loss.mu1, 0.0);
  EXPECT_GT(inter.fed.loss.mu2, 0.0);
}

TEST(Config, UnknownKeysAreNamed) {
  json doc = minimal("fedavg");
  doc["algoritm"] = "fedavg";
  EXPECT_NE(error_of(doc).find("algoritm"), std::string::npos) << error_of(doc);
  json nested = minimal("fedavg");
  nested["dataset"]["n_per_clas"] = 3;
  EXPECT_NE(error_of(nested).find("dataset.n_per_clas"), std::string::npos) << error_of(nested);
}

TEST(Config, MissingTypeAndAlgorithmRules) {
  json missing = minimal("fedavg");
  missing.erase("rounds");
  EXPECT_NE(error_of(missing).find("rounds"), std::string::npos);
  json wrong = minimal("fedavg");
  wrong["rounds"] = "ten";
  EXPECT_NE(error_of(wrong).find("rounds"), std::string::npos);
  EXPECT_FALSE(error_of(minimal("fedprox")).empty());
  json prox = minimal("fedprox");
  prox["prox_mu"] = 0.01;
  EXPECT_TRUE(error_of(prox).empty()) << error_of(prox);
  EXPECT_FALSE(error_of(minimal("fedmr-lite")).empty());
  json lite = minimal("fedmr-lite");
  lite["lite_n"] = 8;
  EXPECT_TRUE(error_of(lite).empty()) << error_of(lite);
  json unused = minimal("fedavg");
  unused["mu1"] = 0.1;
  EXPECT_FALSE(error_of(unused).empty());
  EXPECT_FALSE(error_of(minimal("fedsgd")).empty());
}

TEST(Config, BuildExperimentIsDeterministic) {
  const ExperimentConfig c = parse_config(minimal("fedmr"));
  const ExperimentData a = build_experiment(c);
  const ExperimentData b = build_experiment(c);
  EXPECT_EQ(a.train.features, b.train.features);
  EXPECT_EQ(a.test.size(), 4 * 50);
  ASSERT_EQ(a.clients.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(a.shards[k].indices, b.shards[k].indices);
  EXPECT_EQ(param_count(a.spec), 2 * 16 + 16 + 16 * 3 + 3 + 3 * 4 + 4);
}

TEST(Cli, InvalidConfigExitsWithTwo) {
  json doc = minimal("fedavg");
  doc["algoritm"] = 1;
  EXPECT_EQ(run_cli("run " + write_config("bad.json", doc).string()), 2);
  EXPECT_EQ(run_cli("run " + temp_path("does_not_exist.json").string()), 2);
  EXPECT_EQ(run_cli("bogus"), 2);
}

TEST(Cli, RunIsByteReproducibleAndSchemasMatch) {
  const auto cfg = write_config("fedavg.json", minimal("fedavg"));
  const auto out1 = temp_path("run1.jsonl"), out2 = temp_path("run2.jsonl");
  ASSERT_EQ(run_cli("run " + cfg.string() + " --out " + out1.string()), 0);
  ASSERT_EQ(run_cli("run " + cfg.string() + " --out " + out2.string()), 0);
  const std::string a = slurp(out1);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(out2));

  const auto mr = write_config("fedmr.json", minimal("fedmr"));
  const auto out3 = temp_path("run3.jsonl");
  ASSERT_EQ(run_cli("run " + mr.string() + " --out " + out3.string()), 0);
  std::istringstream la(a), lb(slurp(out3));
  std::string first_a, first_b;
  std::getline(la, first_a);
  std::getline(lb, first_b);
  std::vector<std::string> ka, kb;
  const json ja = json::parse(first_a), jb = json::parse(first_b);
  for (const auto& [k, v] : ja.items()) ka.push_back(k);
  for (const auto& [k, v] : jb.items()) kb.push_back(k);
  EXPECT_EQ(ka, kb);
  EXPECT_TRUE(std::filesystem::exists(out3.string() + ".summary.json"));
}

TEST(Cli, DumpFeaturesWritesUnitRows) {
  json doc = minimal("fedmr");
  doc["rounds"] = 3;
  const auto cfg = write_config("dump.json", doc);
  const auto out = temp_path("dump.csv");
  ASSERT_EQ(run_cli("dump-features " + cfg.string() + " --out " + out.string()), 0);
  std::ifstream f(out);
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "x,y,z,label");
  int rows = 0;
  while (std::getline(f, line)) {
    Scalar x, y, z;
    char c;
    std::istringstream ss(line);
    ss >> x >> c >> y >> c >> z;
    EXPECT_NEAR(std::sqrt(x * x + y * y + z * z), 1.0, 1e-9);
    ++rows;
  }
  EXPECT_GT(rows, 0);

  const auto stats = temp_path("stats.csv");
  ASSERT_EQ(run_cli("partition-stats " + cfg.string() + " --out " + stats.string()), 0);
  std::ifstream s(stats);
  std::getline(s, line);
  EXPECT_EQ(line, "client,class_0,class_1,class_2,class_3,total");
}
