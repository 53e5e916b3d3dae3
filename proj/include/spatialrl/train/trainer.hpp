#pragma once

// Demonstration pretraining, policy evaluation and the PPO training loop.

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spatialrl/train/agent.hpp"
#include "spatialrl/train/config.hpp"
#include "spatialrl/train/ppo.hpp"
#include "spatialrl/train/rollout.hpp"

namespace spatialrl::train {

struct EpisodeSpec {
  std::uint64_t seed = 0;
  env::Perturbation pert;
};

// Actions for the still-active episodes of a chunk at step t, in order.
using BatchActor = std::function<std::vector<env::Action>(
    std::span<const env::WorldState> states, std::span<const env::Observation> obs, std::size_t chunk_begin, int t)>;

// Runs each episode to success or max_len in chunks. Returns per-episode success.
std::vector<bool> run_episodes(const env::PickPlaceEnv& world, std::span<const EpisodeSpec> episodes, int max_len,
                               const BatchActor& actor, std::size_t chunk = 64);

// Policy with evaluation-mode noise: the SCAN floor is dropped and k sits at
// the horizon. Holds references to agent and params.
BatchActor policy_actor(const Agent& agent, const diff::ParameterSet& params, std::uint64_t sample_seed);

// run_episodes driven by policy_actor.
std::vector<bool> run_policy_episodes(const Agent& agent, const diff::ParameterSet& params,
                                      const env::PickPlaceEnv& world, std::span<const EpisodeSpec> episodes,
                                      int max_len, std::uint64_t sample_seed, std::size_t chunk = 64);

struct PretrainReport {
  std::size_t demo_transitions = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

// Seed train() hands to pretrain for a given run seed.
std::uint64_t pretrain_seed(std::uint64_t run_seed);

// Scripted-expert demonstrations on the training split, fitted with the
// flow-matching loss over the actor parameters.
PretrainReport pretrain(Agent& agent, const env::PickPlaceEnv& world, const TrainConfig& cfg, std::uint64_t seed);

struct MetricsRow {
  int step = 0;
  double mean_episode_reward = 0.0;
  double train_success = 0.0;
  std::optional<double> eval_success;
  PpoDiagnostics ppo;
  double sigma_mean = 0.0;
  double floor_scale = 0.0;  // alpha(k)
  double phase_fraction[3] = {0.0, 0.0, 0.0};
};

std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

struct TrainResult {
  PretrainReport pretrain;
  std::optional<double> initial_eval_success;  // train split, before the first update
  std::vector<MetricsRow> rows;
  std::vector<std::filesystem::path> checkpoints;
};

// Pretrains (when configured) and runs total_steps PPO iterations. With an
// output directory, writes metrics.csv row by row and checkpoints under
// checkpoints/ every checkpoint_every steps and at the end.
TrainResult train(Agent& agent, const env::PickPlaceEnv& world, const TrainConfig& cfg, std::uint64_t seed,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace spatialrl::train
