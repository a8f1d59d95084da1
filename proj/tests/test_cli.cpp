#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bap/error.hpp"
#include "bap/experiment.hpp"
#include "doctest.h"

using namespace bap;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const std::string& out) {
  ExperimentConfig c;
  c.fg_per_class = 12;
  c.bg_per_group = 20;
  c.image = 32;
  c.dim = 16;
  c.train_per_class = 40;
  c.test_per_cell = 10;
  c.rhos = {1.0};
  c.pool_groups = 3;
  c.pool_per_group = 10;
  c.retention_per_group = 10;
  c.contraction_contexts = 4;
  c.prototype_exemplars = 4;
  c.bap.N = 8;
  c.bap.M = 2;
  c.bap.K = 3;
  c.bap.epochs = 2;
  c.bap.batch = 8;
  c.bap.probe_epochs = 1;
  c.probe.epochs = 3;
  c.finetune.probe_epochs = 1;
  c.finetune.epochs = 1;
  c.finetune.batch = 16;
  c.additivity_n = 12;
  c.k_grid = {1, 2, 4};
  c.var_k_grid = {1, 2, 4};
  c.k_foregrounds = 4;
  c.var_trials = 20;
  c.mu_samples = 60;
  c.num_seeds = 2;
  c.out = (fs::temp_directory_path() / out).string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config round trips through json") {
  ExperimentConfig c;
  c.world_seed = 99;
  c.rhos = {0.9, 0.95, 1.0};
  c.degradation = Degradation::Botched;
  c.bap.lr = 0.0012345678901234;
  c.bap.regenerate = false;
  c.additivity_mode = AdditivityMode::Disjoint;
  c.methods = {"bap-lp", "native-lp"};
  c.learned.epochs = 3;
  const nlohmann::json j = c.to_json();
  const ExperimentConfig back = ExperimentConfig::from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.to_json() == j);
  CHECK(back.bap.lr == c.bap.lr);
  CHECK(back.degradation == Degradation::Botched);

  const auto path = fs::temp_directory_path() / "bap_cfg_test.json";
  save_config(c, path);
  CHECK(load_config(path).to_json() == j);
  fs::remove(path);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"wrold", {}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"bap", {{"lr", "fast"}}}}), ConfigError);
  ExperimentConfig c;
  c.methods = {"bap-lp", "magic"};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ExperimentConfig{};
  c.rhos = {0.3};
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK_NOTHROW(validate(ExperimentConfig{}));
  CHECK(ExperimentConfig{}.additivity_n == 10000);
  CHECK(ExperimentConfig{}.k_grid == std::vector<std::size_t>{1, 2, 3, 5, 8, 10, 15, 20, 30, 40});
  CHECK_THROWS_AS(cmd_ablate(tiny("bap_cli_bad"), "everything"), ConfigError);
}

TEST_CASE("run seeds") {
  CHECK(run_seed(0, 1) == run_seed(0, 1));
  std::set<std::uint64_t> s;
  for (std::size_t i = 0; i < 50; ++i) s.insert(run_seed(5, i));
  CHECK(s.size() == 50);
}

TEST_CASE("metrics csv layout") {
  MetricsRow r;
  r.run_id = "bap-lp-rho1.00-s0";
  r.method = "bap-lp";
  r.avg = 0.5;
  r.wga = 0.25;
  r.acc[1][0] = 0.125;
  r.bsi = 2.0;
  r.seed = 42;
  CHECK(metrics_csv_header() == "run_id,method,rho,avg,wga,acc_00,acc_01,acc_10,acc_11,bsi,seed");
  CHECK(metrics_csv_row(r) == "bap-lp-rho1.00-s0,bap-lp,1.00,0.500000,0.250000,0.000000,0.000000,0.125000,0.000000,2.000000,42");
}

TEST_CASE("gen-data writes leak-free, reproducible manifests") {
  ExperimentConfig c = tiny("bap_cli_gen");
  c.rhos = {0.95, 1.0};
  fs::remove_all(c.out);
  const auto ds = cmd_gen_data(c);
  REQUIRE(ds.size() == 4);
  const fs::path train = fs::path(c.out) / "data" / "train-rho1.00.jsonl";
  const GroupedDataset back = read_manifest(train);
  for (const auto& it : back.items) CHECK(it.g == it.y % 2);
  std::set<std::uint64_t> train_bg, test_bg;
  for (const auto& it : ds[2].items) train_bg.insert(it.bg_id);
  for (const auto& it : ds[3].items) test_bg.insert(it.bg_id);
  for (std::uint64_t id : train_bg) CHECK(test_bg.count(id) == 0);
  const std::string first = slurp(train);
  cmd_gen_data(c);
  CHECK(slurp(train) == first);
  fs::remove_all(c.out);
}

TEST_CASE("run-matrix is byte-deterministic and report lists gaps") {
  ExperimentConfig c = tiny("bap_cli_run_a");
  fs::remove_all(c.out);
  const auto rows = cmd_run_matrix(c);
  CHECK(rows.size() == c.num_seeds * c.methods.size());
  const std::string first = slurp(fs::path(c.out) / "metrics.csv");
  const auto back = read_metrics_csv(fs::path(c.out) / "metrics.csv");
  REQUIRE(back.size() == rows.size());
  for (const auto& r : back) {
    CHECK(r.wga <= r.avg + 1e-9);
    CHECK(r.bsi >= 0.0);
  }
  std::ifstream summary(fs::path(c.out) / "summary.csv");
  std::string line;
  std::getline(summary, line);
  while (std::getline(summary, line)) CHECK(line.find(",1.00,2,") != std::string::npos);

  const std::string dir_a = c.out;
  c.out = (fs::temp_directory_path() / "bap_cli_run_b").string();
  fs::remove_all(c.out);
  cmd_run_matrix(c);
  CHECK(slurp(fs::path(c.out) / "metrics.csv") == first);

  const nlohmann::json rec = nlohmann::json::parse(slurp(fs::path(c.out) / "runs" / "bap-lp-rho1.00-s0.json"));
  CHECK(rec.at("code_hash").get<std::string>() == code_hash());
  const double frac = rec.at("extras").at("contraction_fraction").get<double>();
  CHECK(frac >= 0.0);
  CHECK(frac <= 1.0);
  CHECK(ExperimentConfig::from_json(rec.at("config")).to_json() == c.to_json());

  fs::remove(fs::path(c.out) / "runs" / "ortho-rho1.00-s1.json");
  const ReportResult rep = cmd_report(c.out);
  CHECK(std::find(rep.missing.begin(), rep.missing.end(), "run ortho-rho1.00-s1") != rep.missing.end());
  CHECK(std::find(rep.missing.begin(), rep.missing.end(), "fig4_n_sweep: ablate_n_sweep.csv") != rep.missing.end());
  CHECK(fs::exists(fs::path(c.out) / "report" / "summary.csv"));
  CHECK(fs::exists(fs::path(c.out) / "report" / "missing.txt"));
  fs::remove_all(dir_a);
  fs::remove_all(c.out);
}

TEST_CASE("additivity and k-ablation outputs") {
  ExperimentConfig c = tiny("bap_cli_probe");
  fs::remove_all(c.out);
  const auto reps = cmd_probe_additivity(c);
  REQUIRE(reps.size() == 3);
  for (const auto& r : reps) {
    CHECK(r.encoder == "planted-linear");
    CHECK(r.n == 12);
  }
  const auto k = cmd_k_ablation(c);
  CHECK(k.sweep.Ks.size() == 3);
  for (double v : k.var_eps) CHECK(v > 0.0);
  std::ifstream in(fs::path(c.out) / "k_ablation.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.find("loglog_slope") != std::string::npos);
  fs::remove_all(c.out);
}

TEST_CASE("ablations and the figure files") {
  ExperimentConfig c = tiny("bap_cli_ablate");
  c.num_seeds = 1;
  c.methods = {"native-lp"};
  c.n_grid = {4, 8};
  fs::remove_all(c.out);
  const auto seg = cmd_ablate(c, "seg");
  std::set<std::string> modes;
  for (const auto& r : seg) modes.insert(r.degradation);
  CHECK(modes == std::set<std::string>{"none", "perfect", "noisy", "botched", "bbox"});
  CHECK(cmd_ablate(c, "n_sweep").size() == 2);
  const auto ft = cmd_ablate(c, "ft");
  CHECK(ft.size() == 1 + 1 + c.finetune.epochs);
  cmd_run_matrix(c);
  const ReportResult rep = cmd_report(c.out);
  CHECK(fs::exists(fs::path(c.out) / "report" / "fig4_n_sweep.csv"));
  CHECK(fs::exists(fs::path(c.out) / "report" / "fig6_finetune.csv"));
  CHECK(std::find(rep.missing.begin(), rep.missing.end(), "fig5_m_sweep: ablate_m_sweep.csv") != rep.missing.end());
  fs::remove_all(c.out);
}

TEST_CASE("learned teacher configuration runs") {
  ExperimentConfig c = tiny("bap_cli_learned");
  c.teacher = "learned";
  c.learned.epochs = 1;
  c.learned.items_per_epoch = 32;
  c.learned.batch = 16;
  c.num_seeds = 1;
  c.methods = {"native-lp"};
  fs::remove_all(c.out);
  const auto rows = cmd_run_matrix(c);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].avg >= 0.0);
  fs::remove_all(c.out);
}
