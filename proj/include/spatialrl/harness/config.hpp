#pragma once

// Experiment configuration: a nested YAML document with a fixed schema,
// dotted-key command-line overrides and ablation switches.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spatialrl/env/world.hpp"
#include "spatialrl/train/agent.hpp"
#include "spatialrl/train/config.hpp"

namespace spatialrl::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalBucket {
  std::string name;
  env::Perturbation pert;
};

// Held-out buckets: view rotation +-15 and +-30 degrees, view translation,
// initial shift, heavy clutter and all axes combined.
std::vector<EvalBucket> default_eval_buckets();

struct EvalSettings {
  int episodes = 64;         // per seed, spread round-robin over buckets
  int sampling_epochs = 4;   // disjoint episode blocks with independent sampling streams
  std::vector<EvalBucket> buckets = default_eval_buckets();
};

struct ExperimentConfig {
  env::Geometry geometry;
  train::AgentConfig agent;
  train::TrainConfig train;
  EvalSettings eval;
  double success_threshold = 0.8;  // train-split success that counts as converged
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::filesystem::path out_dir = "runs/default";

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Parses YAML text; every key must belong to the schema. Diagnostics carry
// the source name, line and dotted field path.
ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies "section.field=value" overrides; unknown keys are rejected.
void apply_overrides(ExperimentConfig& cfg, std::span<const std::string> overrides);

// "fusion" disables fusion, "dr" switches to sparse reward, "scan" replaces
// the annealed floor with plain flow noise.
void apply_ablation(ExperimentConfig& cfg, const std::string& name);

// Full resolved configuration as YAML; parse_config(to_yaml(c)) == c.
std::string to_yaml(const ExperimentConfig& cfg);

// Every dotted key the schema accepts.
std::vector<std::string> schema_keys();

}  // namespace spatialrl::harness
