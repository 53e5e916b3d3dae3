#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "spatialrl/harness/config.hpp"
#include "spatialrl/harness/evaluation.hpp"
#include "spatialrl/harness/experiment.hpp"
#include "spatialrl/harness/oracles.hpp"

namespace fs = std::filesystem;
using namespace spatialrl;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfigError = 2, kRuntimeError = 3 };

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string regime;
  std::string reward;
  std::vector<std::string> ablate;
};

harness::ExperimentConfig resolve(const CommonOptions& o) {
  harness::ExperimentConfig cfg = o.config.empty() ? harness::parse_config("") : harness::load_config(o.config);
  harness::apply_overrides(cfg, o.overrides);
  if (!o.regime.empty()) harness::apply_overrides(cfg, std::vector<std::string>{"noise.regime=" + o.regime});
  if (!o.reward.empty()) harness::apply_overrides(cfg, std::vector<std::string>{"reward.mode=" + o.reward});
  for (const auto& a : o.ablate) harness::apply_ablation(cfg, a);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  cfg.validate();
  return cfg;
}

std::string fmt(const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("-"); }

// Highest step_NNNN.ckpt under dir/checkpoints.
fs::path latest_checkpoint(const fs::path& dir) {
  fs::path best;
  if (!fs::exists(dir / "checkpoints")) return best;
  for (const auto& e : fs::directory_iterator(dir / "checkpoints")) {
    const auto name = e.path().filename().string();
    if (name.starts_with("step_") && name.ends_with(".ckpt") && (best.empty() || name > best.filename().string())) {
      best = e.path();
    }
  }
  return best;
}

int cmd_train(const harness::ExperimentConfig& cfg) {
  for (const auto seed : cfg.seeds) {
    const fs::path dir = cfg.out_dir / ("seed_" + std::to_string(seed));
    std::cout << "training seed " << seed << " into " << dir << std::endl;
    const auto o = harness::run_training(cfg, seed, dir);
    std::cout << "seed " << seed << ": initial train-split success " << fmt(o.initial_train_success) << ", final "
              << fmt(o.final_train_success) << ", iterations to " << cfg.success_threshold << ": "
              << (o.iterations_to_threshold ? std::to_string(*o.iterations_to_threshold) : std::string("not reached"))
              << " (" << o.seconds << " s)" << std::endl;
  }
  return kOk;
}

struct EvalOptions {
  std::string checkpoint;
  std::string report;
  int episodes = 0;
  bool scripted = false;
  bool untrained = false;
  bool view_only = false;
};

int cmd_eval(const harness::ExperimentConfig& cfg, const EvalOptions& e) {
  const int episodes = e.episodes > 0 ? e.episodes : cfg.eval.episodes;
  const auto buckets = e.view_only ? harness::view_buckets(cfg.eval.buckets) : cfg.eval.buckets;
  if (buckets.empty()) throw harness::ConfigError("no evaluation buckets selected");
  harness::EvalReport report;
  if (e.scripted) {
    const harness::ActorFactory f = [&](std::uint64_t, int) { return harness::scripted_actor(cfg.geometry); };
    report = harness::evaluate(cfg, f, cfg.seeds, buckets, episodes);
  } else if (e.untrained) {
    std::vector<std::unique_ptr<train::Agent>> agents;
    for (const auto s : cfg.seeds) agents.push_back(std::make_unique<train::Agent>(cfg.agent, cfg.geometry, s));
    const harness::ActorFactory f = [&](std::uint64_t s, int epoch) {
      const auto i = static_cast<std::size_t>(std::find(cfg.seeds.begin(), cfg.seeds.end(), s) - cfg.seeds.begin());
      return train::policy_actor(*agents[i], agents[i]->params(),
                                 train::derive_seed(s, 701, static_cast<std::uint64_t>(epoch)));
    };
    report = harness::evaluate(cfg, f, cfg.seeds, buckets, episodes);
  } else {
    std::vector<harness::SeedCheckpoint> runs;
    for (const auto s : cfg.seeds) {
      fs::path ck = e.checkpoint.empty() ? latest_checkpoint(cfg.out_dir / ("seed_" + std::to_string(s))) : fs::path(e.checkpoint);
      if (ck.empty() || !fs::exists(ck)) {
        throw std::runtime_error("no checkpoint for seed " + std::to_string(s) + " (train first or pass --checkpoint)");
      }
      runs.push_back({s, ck});
    }
    report = harness::evaluate_checkpoints(cfg, runs, buckets, episodes);
  }
  const fs::path out = e.report.empty() ? cfg.out_dir / "eval_report.json" : fs::path(e.report);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << report.to_json().dump(2) << '\n';
  std::cout << "success mean " << report.mean << " std " << report.std << " over " << report.seeds.size()
            << " seed(s), " << episodes << " episodes each\n";
  for (const auto& b : report.buckets) {
    std::cout << "  " << b.name << ": " << b.successes << "/" << b.episodes << "\n";
  }
  std::cout << "report written to " << out << "\n";
  return kOk;
}

int cmd_sweep(const harness::ExperimentConfig& cfg) {
  const auto result = harness::run_sweep(cfg, cfg.out_dir);
  std::cout << result.summary().dump(2) << "\n";
  std::cout << "sweep written to " << cfg.out_dir << "\n";
  return kOk;
}

int cmd_oracles() {
  const auto rows = harness::run_oracles();
  harness::print_oracle_table(std::cout, rows);
  return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; }) ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially-aware flow-policy RL on a planar pick-place task"};
  app.require_subcommand(1);
  CommonOptions common;
  app.add_option("--config", common.config, "YAML experiment configuration");
  app.add_option("--seed", common.seed, "Run a single seed instead of the configured list");
  app.add_option("--override", common.overrides, "section.field=value, repeatable")->take_all();
  app.add_option("--out-dir", common.out_dir, "Output directory");
  app.add_option("--regime", common.regime, "Noise regime")->check(CLI::IsMember({"sde", "flow", "scan"}));
  app.add_option("--reward", common.reward, "Reward mode")->check(CLI::IsMember({"sparse", "dense"}));
  app.add_option("--ablate", common.ablate, "Ablation switch, repeatable")
      ->check(CLI::IsMember({"fusion", "dr", "scan"}))
      ->take_all();

  auto* train_cmd = app.add_subcommand("train", "Pretrain and PPO-train each configured seed");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints on the held-out buckets");
  EvalOptions eval_opts;
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint for every seed (default: latest per seed)");
  eval_cmd->add_option("--report", eval_opts.report, "Report path (default: <out-dir>/eval_report.json)");
  eval_cmd->add_option("--episodes", eval_opts.episodes, "Episodes per seed (default: eval.episodes)");
  eval_cmd->add_flag("--scripted", eval_opts.scripted, "Evaluate the scripted controller");
  eval_cmd->add_flag("--untrained", eval_opts.untrained, "Evaluate freshly initialized policies");
  eval_cmd->add_flag("--view-only", eval_opts.view_only, "Restrict to view-perturbation buckets");
  auto* sweep_cmd = app.add_subcommand("sweep", "Ablation grid and regime comparison over all seeds");
  auto* oracle_cmd = app.add_subcommand("oracle-tests", "Run the independent-oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (oracle_cmd->parsed()) return cmd_oracles();
    const auto cfg = resolve(common);
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (eval_cmd->parsed()) return cmd_eval(cfg, eval_opts);
    if (sweep_cmd->parsed()) return cmd_sweep(cfg);
  } catch (const harness::ConfigError& e) {
    std::cerr << "error[config]: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error[runtime]: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
