#pragma once

// Experiment configuration, run orchestration and report emission behind the
// bap_lab subcommands. Every command writes under ExperimentConfig::out.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "bap/additivity.hpp"
#include "bap/alignment.hpp"
#include "bap/anchors.hpp"

namespace bap {

struct ExperimentConfig {
  // World. Classes [0, num_classes) form the downstream task; the next
  // held_out_classes only appear in the orthogonal-target OOD check.
  std::uint64_t world_seed = 7;
  std::size_t num_classes = 2;
  std::size_t held_out_classes = 2;
  std::size_t num_groups = 2;
  std::size_t fg_per_class = 150;
  std::size_t bg_per_group = 200;
  std::size_t image = 64;
  double context_correlation = 0.8;

  std::size_t train_per_class = 800;
  std::size_t test_per_cell = 160;
  std::vector<double> rhos = {0.95, 1.0};
  Degradation degradation = Degradation::Perfect;

  // "planted-linear" or "learned" (an mlp trained on randomized composites).
  std::string teacher = "planted-linear";
  double alpha = 0.0;
  std::uint64_t teacher_seed = 3;
  std::size_t dim = 64;
  LearnedTeacherConfig learned;

  std::size_t pool_groups = 6;
  std::size_t pool_per_group = 200;
  // Ten contexts per foreground at twice the base rate; the base schedule
  // leaves the 64x64 linear student short of contraction.
  AlignConfig bap = [] {
    AlignConfig a;
    a.lr = 2e-3;
    a.M = 10;
    return a;
  }();
  ProbeConfig probe;
  FinetuneConfig finetune;
  std::size_t prototype_exemplars = 40;
  // Fresh background pool for the retention probe and the contraction check.
  std::size_t retention_per_group = 100;
  std::size_t contraction_contexts = 32;

  std::size_t additivity_n = 10000;
  std::vector<double> additivity_alphas = {0.0, 0.5, 2.0};
  AdditivityMode additivity_mode = AdditivityMode::Regular;

  std::vector<std::size_t> k_grid = kDefaultKGrid;
  std::size_t k_foregrounds = 50;
  std::size_t var_trials = 200;
  std::size_t mu_samples = 20000;
  std::vector<std::size_t> var_k_grid = {1, 2, 4, 8, 16, 32, 64};

  std::vector<std::size_t> n_grid = {25, 50, 100, 200};
  std::vector<std::size_t> m_grid = {2, 4, 8, 16, 32};
  std::vector<std::size_t> m_sweep_n = {50, 100};
  std::vector<std::size_t> k_train_grid = {1, 2, 4, 8, 16};
  std::size_t ablation_seeds = 1;

  std::uint64_t seed = 0;
  std::size_t num_seeds = 5;
  std::vector<std::string> methods = {"native-zs", "native-lp", "lp-ft", "control", "bap-lp", "bap-zs", "ortho"};
  std::string out = "bap_out";

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys raise ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);
// Range and vocabulary checks; ConfigError on the first violation.
void validate(const ExperimentConfig& cfg);

const std::vector<std::string>& known_methods();
std::string code_hash();
// Seed of run `index` under a global seed.
std::uint64_t run_seed(std::uint64_t global, std::size_t index);

struct MetricsRow {
  std::string run_id;
  std::string method;
  double rho = 1.0;
  double avg = 0.0;
  double wga = 0.0;
  double acc[2][2] = {{0.0, 0.0}, {0.0, 0.0}};  // [y][g]
  double bsi = 0.0;
  std::uint64_t seed = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& r);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct AblationRow {
  std::string sweep;
  std::string label;
  std::size_t N = 0;
  std::size_t M = 0;
  std::size_t K = 0;
  std::string degradation;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  double avg = 0.0;
  double wga = 0.0;
};

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& r);

// Commands. Each returns what it wrote so callers can check it in-process.
std::vector<GroupedDataset> cmd_gen_data(const ExperimentConfig& cfg);
std::vector<AdditivityReport> cmd_probe_additivity(const ExperimentConfig& cfg);
struct KAblationResult {
  KSweepReport sweep;
  std::vector<std::size_t> var_K;
  std::vector<double> var_eps;
  double var_slope = 0.0;
  std::size_t mu_count = 0;
};
KAblationResult cmd_k_ablation(const ExperimentConfig& cfg);
std::vector<MetricsRow> cmd_run_matrix(const ExperimentConfig& cfg);
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, const std::string& which);

struct ReportResult {
  std::vector<std::string> missing;
  std::vector<std::filesystem::path> written;
};
ReportResult cmd_report(const std::filesystem::path& dir);

}  // namespace bap
