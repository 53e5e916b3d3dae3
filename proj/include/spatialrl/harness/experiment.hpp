#pragma once

// Per-seed training runs and the comparison sweep: the four-row ablation
// grid, the three-regime comparison and the dense/sparse reward pair under
// SCAN, with shared pretraining per
// (seed, fusion) and resumable run directories.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spatialrl/harness/config.hpp"
#include "spatialrl/harness/evaluation.hpp"
#include "spatialrl/train/trainer.hpp"

namespace spatialrl::harness {

struct RunSpec {
  std::string label;
  noise::Regime regime = noise::Regime::SCAN;
  phases::RewardMode reward = phases::RewardMode::Dense;
  bool fusion = true;

  // Directory-safe identity shared by equal specs, e.g. "scan-dense-fusion".
  std::string key() const;
};

// full, -SCAN, -SCAN-DR, -all.
std::vector<RunSpec> ablation_rows();
// SDE, flow noise and SCAN, each with dense reward and fusion.
std::vector<RunSpec> regime_rows();
// SCAN with fusion under dense and under sparse reward.
std::vector<RunSpec> reward_rows();

ExperimentConfig configure(const ExperimentConfig& base, const RunSpec& spec);

// First iteration count at which train-split success reaches threshold;
// 0 when the pretrained policy already does. Empty when never reached.
std::optional<int> iterations_to_threshold(std::optional<double> initial, std::span<const train::MetricsRow> rows,
                                           double threshold);

struct RunOutcome {
  std::uint64_t seed = 0;
  std::optional<double> initial_train_success;
  std::optional<double> final_train_success;
  std::optional<int> iterations_to_threshold;
  std::filesystem::path final_checkpoint;
  double seconds = 0.0;

  nlohmann::json to_json() const;
  static RunOutcome from_json(const nlohmann::json& j);
};

// Trains one seed into dir: config.yaml, metrics.csv, checkpoints/ and
// outcome.json. With pretrained parameters the pretraining stage is skipped.
RunOutcome run_training(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir,
                        const diff::ParameterSet* pretrained = nullptr);

// Reads dir/outcome.json; its checkpoint path is stored relative to dir.
RunOutcome load_outcome(const std::filesystem::path& dir);

// Demonstration-pretrained parameters for (cfg fusion flag, seed); identical
// to the stage run_training performs itself.
diff::ParameterSet pretrain_parameters(const ExperimentConfig& cfg, std::uint64_t seed);

struct SweepEntry {
  std::string group;  // "ablation", "regime" or "reward"
  RunSpec spec;
  std::uint64_t seed = 0;
  RunOutcome outcome;
  double heldout_success = 0.0;
};

struct SweepResult {
  std::vector<SweepEntry> entries;
  // Pretrained-only success on view buckets, per seed.
  std::vector<double> pretrained_view_fusion;
  std::vector<double> pretrained_view_no_fusion;
  // Wall-clock seconds per distinct run ("key/seed_N") and per pretraining
  // stage ("fusion_seed_N" or "nofusion_seed_N"), as recorded when produced.
  std::map<std::string, double> run_seconds;
  std::map<std::string, double> pretrain_seconds;

  double max_pretrain_seconds() const;

  nlohmann::json summary() const;
};

// Runs (or resumes) every row for every seed under out_dir, writing
// sweep.csv and summary.json.
SweepResult run_sweep(const ExperimentConfig& base, const std::filesystem::path& out_dir);

// Median; unreached iteration counts sort above every reached one.
double median(std::vector<double> values);
std::optional<double> median_iterations(std::span<const std::optional<int>> values);

}  // namespace spatialrl::harness
