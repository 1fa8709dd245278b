#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <string>

#include "mfid/mfid.h"

namespace {

int report(mfid_status st) {
  if (st != MFID_OK) std::fprintf(stderr, "mfid: %s: %s\n", mfid_status_name(st), mfid_last_error());
  return static_cast<int>(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mechanism design in mean-field games via adjoint differentiation"};
  app.set_version_flag("--version", std::string(mfid_version()));
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Master seed (overrides training.seed)");
    sub->add_option("--out", out_dir, "Output directory (overrides output)");
  };
  auto* solve = app.add_subcommand("solve", "Run OMD at fixed parameters and record exploitability");
  auto* design = app.add_subcommand("design", "Optimize the game parameters");
  auto* simulate = app.add_subcommand("simulate-n", "Finite-population revenue gap study");
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare adjoint gradients with finite differences");
  for (auto* sub : {solve, design, simulate, gradcheck}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  mfid_config* cfg = nullptr;
  if (mfid_status st = mfid_config_load(config_path.c_str(), &cfg); st != MFID_OK) return report(st);
  mfid_status st = MFID_OK;
  if (app.get_subcommands().front()->count("--seed")) st = mfid_config_set_seed(cfg, seed);
  if (st == MFID_OK && !out_dir.empty()) st = mfid_config_set_output_dir(cfg, out_dir.c_str());

  if (st == MFID_OK) {
    if (solve->parsed()) {
      double e = 0.0;
      st = mfid_run_solve(cfg, &e);
      if (st == MFID_OK) std::printf("final exploitability %.17g\n", e);
    } else if (design->parsed()) {
      double g = 0.0;
      st = mfid_run_design(cfg, &g);
      if (st == MFID_OK) std::printf("final objective %.17g\n", g);
    } else if (simulate->parsed()) {
      double slope = 0.0;
      st = mfid_run_simulate_n(cfg, &slope);
      if (st == MFID_OK) std::printf("log-log slope %.17g\n", slope);
    } else {
      double err = 0.0, norm = 0.0;
      st = mfid_run_gradcheck(cfg, &err, &norm);
      std::printf("max relative error %.17g\ngradient norm %.17g\n", err, norm);
    }
  }
  mfid_config_free(cfg);
  return report(st);
}
