// Command-line front end: bap_lab <subcommand> [--config f] [--seed n] [--out dir] ...

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "bap/error.hpp"
#include "bap/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string methods;
  std::optional<double> rho;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "global seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--methods", c.methods, "comma-separated method list");
  cmd->add_option("--rho", c.rho, "single spurious-correlation strength");
}

bap::ExperimentConfig resolve(const Common& c) {
  bap::ExperimentConfig cfg = c.config.empty() ? bap::ExperimentConfig{} : bap::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (c.rho) cfg.rhos = {*c.rho};
  if (!c.methods.empty()) {
    cfg.methods.clear();
    std::stringstream ss(c.methods);
    std::string m;
    while (std::getline(ss, m, ',')) {
      if (!m.empty()) cfg.methods.push_back(m);
    }
  }
  bap::validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Background-invariant anchor pre-training lab"};
  app.require_subcommand(1);

  Common gen_c, add_c, k_c, run_c, abl_c;
  auto* gen = app.add_subcommand("gen-data", "build the world and write grouped-dataset manifests");
  add_common(gen, gen_c);
  auto* add = app.add_subcommand("probe-additivity", "linear-additivity scores over an alpha sweep");
  add_common(add, add_c);
  auto* kab = app.add_subcommand("k-ablation", "anchor quality and residual variance versus K");
  add_common(kab, k_c);
  auto* run = app.add_subcommand("run-matrix", "methods x rho x seeds metrics");
  add_common(run, run_c);
  auto* abl = app.add_subcommand("ablate", "seg | n_sweep | m_sweep | k_train_sweep | ft");
  add_common(abl, abl_c);
  std::string which;
  abl->add_option("which", which, "ablation name")->required();
  auto* rep = app.add_subcommand("report", "summary and plot-data files from a run directory");
  std::string report_dir = "bap_out";
  rep->add_option("--out,dir", report_dir, "run directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto cfg = resolve(gen_c);
      const auto ds = bap::cmd_gen_data(cfg);
      std::printf("wrote %zu manifests to %s/data\n", ds.size(), cfg.out.c_str());
    } else if (add->parsed()) {
      const auto cfg = resolve(add_c);
      for (const auto& r : bap::cmd_probe_additivity(cfg)) std::printf("%s\n", bap::additivity_csv_row(r).c_str());
    } else if (kab->parsed()) {
      const auto cfg = resolve(k_c);
      const auto r = bap::cmd_k_ablation(cfg);
      std::printf("var loglog slope %.4f over %zu backgrounds\n", r.var_slope, r.mu_count);
    } else if (run->parsed()) {
      const auto cfg = resolve(run_c);
      std::printf("%s\n", bap::metrics_csv_header().c_str());
      for (const auto& r : bap::cmd_run_matrix(cfg)) std::printf("%s\n", bap::metrics_csv_row(r).c_str());
    } else if (abl->parsed()) {
      const auto cfg = resolve(abl_c);
      std::printf("%s\n", bap::ablation_csv_header().c_str());
      for (const auto& r : bap::cmd_ablate(cfg, which)) std::printf("%s\n", bap::ablation_csv_row(r).c_str());
    } else if (rep->parsed()) {
      const auto r = bap::cmd_report(report_dir);
      for (const auto& p : r.written) std::printf("wrote %s\n", p.string().c_str());
      for (const auto& m : r.missing) std::printf("missing %s\n", m.c_str());
    }
  } catch (const bap::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
