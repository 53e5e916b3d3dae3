#include "spatialrl/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "spatialrl/diff/checkpoint.hpp"

namespace spatialrl::harness {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_double(const nlohmann::json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

}  // namespace

std::string RunSpec::key() const {
  return std::string(noise::regime_name(regime)) + (reward == phases::RewardMode::Dense ? "-dense" : "-sparse") +
         (fusion ? "-fusion" : "-nofusion");
}

std::vector<RunSpec> ablation_rows() {
  using noise::Regime;
  using phases::RewardMode;
  return {{"full", Regime::SCAN, RewardMode::Dense, true},
          {"-SCAN", Regime::FlowNoise, RewardMode::Dense, true},
          {"-SCAN-DR", Regime::FlowNoise, RewardMode::Sparse, true},
          {"-all", Regime::FlowNoise, RewardMode::Sparse, false}};
}

std::vector<RunSpec> regime_rows() {
  using noise::Regime;
  using phases::RewardMode;
  return {{"sde", Regime::SDE, RewardMode::Dense, true},
          {"flow", Regime::FlowNoise, RewardMode::Dense, true},
          {"scan", Regime::SCAN, RewardMode::Dense, true}};
}

std::vector<RunSpec> reward_rows() {
  using noise::Regime;
  using phases::RewardMode;
  return {{"dense", Regime::SCAN, RewardMode::Dense, true}, {"sparse", Regime::SCAN, RewardMode::Sparse, true}};
}

ExperimentConfig configure(const ExperimentConfig& base, const RunSpec& spec) {
  ExperimentConfig cfg = base;
  cfg.agent.noise.regime = spec.regime;
  cfg.train.reward.mode = spec.reward;
  cfg.agent.fusion_enabled = spec.fusion;
  return cfg;
}

std::optional<int> iterations_to_threshold(std::optional<double> initial, std::span<const train::MetricsRow> rows,
                                           double threshold) {
  if (initial && *initial >= threshold) return 0;
  for (const auto& r : rows) {
    if (r.eval_success && *r.eval_success >= threshold) return r.step + 1;
  }
  return std::nullopt;
}

nlohmann::json RunOutcome::to_json() const {
  return {{"seed", seed},
          {"initial_train_success", optional_json(initial_train_success)},
          {"final_train_success", optional_json(final_train_success)},
          {"iterations_to_threshold",
           iterations_to_threshold ? nlohmann::json(*iterations_to_threshold) : nlohmann::json()},
          {"final_checkpoint", final_checkpoint.string()},
          {"seconds", seconds}};
}

RunOutcome RunOutcome::from_json(const nlohmann::json& j) {
  RunOutcome o;
  o.seed = j.at("seed").get<std::uint64_t>();
  o.initial_train_success = optional_double(j.at("initial_train_success"));
  o.final_train_success = optional_double(j.at("final_train_success"));
  const auto& it = j.at("iterations_to_threshold");
  if (!it.is_null()) o.iterations_to_threshold = it.get<int>();
  o.final_checkpoint = j.at("final_checkpoint").get<std::string>();
  o.seconds = j.at("seconds").get<double>();
  return o;
}

diff::ParameterSet pretrain_parameters(const ExperimentConfig& cfg, std::uint64_t seed) {
  const env::PickPlaceEnv world(cfg.geometry);
  train::Agent agent(cfg.agent, cfg.geometry, seed);
  train::pretrain(agent, world, cfg.train, train::pretrain_seed(seed));
  return agent.params().snapshot();
}

RunOutcome run_training(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir,
                        const diff::ParameterSet* pretrained) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(dir);
  write_text(dir / "config.yaml", to_yaml(cfg));
  const env::PickPlaceEnv world(cfg.geometry);
  train::Agent agent(cfg.agent, cfg.geometry, seed);
  train::TrainConfig tc = cfg.train;
  if (pretrained != nullptr) {
    diff::load_values(*pretrained, agent.params());
    tc.bc_episodes = 0;
  }
  const auto result = train::train(agent, world, tc, seed, dir);

  RunOutcome o;
  o.seed = seed;
  o.initial_train_success = result.initial_eval_success;
  for (const auto& r : result.rows) {
    if (r.eval_success) o.final_train_success = r.eval_success;
  }
  o.iterations_to_threshold = iterations_to_threshold(result.initial_eval_success, result.rows, cfg.success_threshold);
  if (!result.checkpoints.empty()) o.final_checkpoint = result.checkpoints.back();
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  RunOutcome stored = o;
  if (!stored.final_checkpoint.empty()) stored.final_checkpoint = fs::proximate(o.final_checkpoint, dir);
  write_text(dir / "outcome.json", stored.to_json().dump(2) + "\n");
  return o;
}

RunOutcome load_outcome(const fs::path& dir) {
  std::ifstream in(dir / "outcome.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "outcome.json").string());
  RunOutcome o = RunOutcome::from_json(nlohmann::json::parse(in));
  if (o.final_checkpoint.is_relative()) o.final_checkpoint = dir / o.final_checkpoint;
  return o;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::optional<double> median_iterations(std::span<const std::optional<int>> values) {
  std::vector<double> v;
  for (const auto& x : values) v.push_back(x ? static_cast<double>(*x) : std::numeric_limits<double>::infinity());
  const double m = median(std::move(v));
  return std::isinf(m) ? std::nullopt : std::optional<double>(m);
}

double SweepResult::max_pretrain_seconds() const {
  double m = 0.0;
  for (const auto& [name, s] : pretrain_seconds) m = std::max(m, s);
  return m;
}

nlohmann::json SweepResult::summary() const {
  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& e : entries) {
    const std::pair<std::string, std::string> id{e.group, e.spec.label};
    if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
  }
  for (const auto& [group, label] : order) {
    std::vector<double> held;
    std::vector<std::optional<int>> iters;
    nlohmann::json seeds = nlohmann::json::array();
    std::string key;
    for (const auto& e : entries) {
      if (e.group != group || e.spec.label != label) continue;
      key = e.spec.key();
      held.push_back(e.heldout_success);
      iters.push_back(e.outcome.iterations_to_threshold);
      seeds.push_back({{"seed", e.seed},
                       {"heldout_success", e.heldout_success},
                       {"initial_train_success", optional_json(e.outcome.initial_train_success)},
                       {"final_train_success", optional_json(e.outcome.final_train_success)},
                       {"iterations_to_threshold", e.outcome.iterations_to_threshold
                                                       ? nlohmann::json(*e.outcome.iterations_to_threshold)
                                                       : nlohmann::json()}});
    }
    rows.push_back({{"group", group},
                    {"label", label},
                    {"run", key},
                    {"median_heldout_success", median(held)},
                    {"median_iterations_to_threshold", optional_json(median_iterations(iters))},
                    {"seeds", seeds}});
  }
  nlohmann::json j;
  j["rows"] = rows;
  double longest_run = 0.0;
  double compute = 0.0;
  for (const auto& [name, s] : run_seconds) {
    longest_run = std::max(longest_run, s);
    compute += s;
  }
  for (const auto& [name, s] : pretrain_seconds) compute += s;
  j["timing"] = {{"longest_run_seconds", longest_run},
                 {"longest_pretrain_seconds", max_pretrain_seconds()},
                 {"total_compute_seconds", compute}};
  j["pretrained_view_success"] = {{"fusion", pretrained_view_fusion},
                                  {"no_fusion", pretrained_view_no_fusion},
                                  {"median_fusion", pretrained_view_fusion.empty() ? nlohmann::json() : nlohmann::json(median(pretrained_view_fusion))},
                                  {"median_no_fusion", pretrained_view_no_fusion.empty() ? nlohmann::json() : nlohmann::json(median(pretrained_view_no_fusion))}};
  return j;
}

SweepResult run_sweep(const ExperimentConfig& base, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text(out_dir / "config.yaml", to_yaml(base));
  SweepResult result;

  std::vector<std::pair<std::string, RunSpec>> grid;
  for (const auto& r : ablation_rows()) grid.emplace_back("ablation", r);
  for (const auto& r : regime_rows()) grid.emplace_back("regime", r);
  for (const auto& r : reward_rows()) grid.emplace_back("reward", r);

  const auto view = view_buckets(base.eval.buckets);
  for (const auto seed : base.seeds) {
    std::map<bool, diff::ParameterSet> pretrained;
    auto pretrained_for = [&](bool fusion) -> const diff::ParameterSet& {
      auto it = pretrained.find(fusion);
      if (it != pretrained.end()) return it->second;
      const std::string name = std::string(fusion ? "fusion_" : "nofusion_") + seed_dir(seed);
      const fs::path path = out_dir / "pretrained" / (name + ".ckpt");
      const fs::path timing = out_dir / "pretrained" / (name + ".json");
      ExperimentConfig cfg = base;
      cfg.agent.fusion_enabled = fusion;
      diff::ParameterSet params;
      if (fs::exists(path) && fs::exists(timing)) {
        train::Agent agent(cfg.agent, cfg.geometry, seed);
        diff::load_checkpoint(path, agent.params());
        params = agent.params().snapshot();
        std::ifstream in(timing);
        result.pretrain_seconds[name] = nlohmann::json::parse(in).at("seconds").get<double>();
      } else {
        const auto start = std::chrono::steady_clock::now();
        params = pretrain_parameters(cfg, seed);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        fs::create_directories(path.parent_path());
        diff::save_checkpoint(path, params);
        write_text(timing, nlohmann::json{{"seconds", secs}}.dump() + "\n");
        result.pretrain_seconds[name] = secs;
      }
      return pretrained.emplace(fusion, std::move(params)).first->second;
    };

    std::map<std::string, std::pair<RunOutcome, double>> done;
    for (const auto& [group, spec] : grid) {
      const ExperimentConfig cfg = configure(base, spec);
      const fs::path dir = out_dir / "runs" / spec.key() / seed_dir(seed);
      auto it = done.find(spec.key());
      if (it == done.end()) {
        RunOutcome outcome;
        if (fs::exists(dir / "outcome.json")) {
          outcome = load_outcome(dir);
        } else {
          outcome = run_training(cfg, seed, dir, &pretrained_for(spec.fusion));
        }
        const SeedCheckpoint ck{seed, outcome.final_checkpoint};
        const auto report = evaluate_checkpoints(cfg, std::span(&ck, 1), cfg.eval.buckets, cfg.eval.episodes);
        write_text(dir / "eval.json", report.to_json().dump(2) + "\n");
        it = done.emplace(spec.key(), std::make_pair(outcome, report.mean)).first;
        result.run_seconds[spec.key() + "/" + seed_dir(seed)] = outcome.seconds;
      }
      result.entries.push_back({group, spec, seed, it->second.first, it->second.second});
    }

    for (const bool fusion : {true, false}) {
      ExperimentConfig cfg = base;
      cfg.agent.fusion_enabled = fusion;
      train::Agent agent(cfg.agent, cfg.geometry, seed);
      diff::load_values(pretrained_for(fusion), agent.params());
      const ActorFactory factory = [&](std::uint64_t s, int epoch) {
        return train::policy_actor(agent, agent.params(), train::derive_seed(s, 701, static_cast<std::uint64_t>(epoch)));
      };
      const std::uint64_t seeds[] = {seed};
      const auto report = evaluate(cfg, factory, seeds, view, cfg.eval.episodes);
      (fusion ? result.pretrained_view_fusion : result.pretrained_view_no_fusion).push_back(report.mean);
    }
  }

  std::ostringstream csv;
  csv << "group,label,run,seed,heldout_success,initial_train_success,final_train_success,iterations_to_threshold\n";
  auto opt = [](const auto& v) {
    std::ostringstream s;
    if (v) s << *v;
    return s.str();
  };
  for (const auto& e : result.entries) {
    csv << e.group << ',' << e.spec.label << ',' << e.spec.key() << ',' << e.seed << ',' << e.heldout_success << ','
        << opt(e.outcome.initial_train_success) << ',' << opt(e.outcome.final_train_success) << ','
        << opt(e.outcome.iterations_to_threshold) << '\n';
  }
  write_text(out_dir / "sweep.csv", csv.str());
  write_text(out_dir / "summary.json", result.summary().dump(2) + "\n");
  return result;
}

}  // namespace spatialrl::harness
