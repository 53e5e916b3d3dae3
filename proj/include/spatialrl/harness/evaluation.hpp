#pragma once

// Held-out evaluation: deterministic episode plans over perturbation
// buckets, per-seed success rates and the structured report.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spatialrl/harness/config.hpp"
#include "spatialrl/train/trainer.hpp"

namespace spatialrl::harness {

struct PlannedEpisode {
  train::EpisodeSpec spec;
  std::size_t bucket = 0;
  int epoch = 0;
};

// n episodes assigned round-robin to buckets and split into contiguous
// sampling epochs; placement seeds never repeat within a plan.
std::vector<PlannedEpisode> make_eval_plan(std::span<const EvalBucket> buckets, int n_episodes, int sampling_epochs,
                                           std::uint64_t seed);

struct BucketResult {
  std::string name;
  int episodes = 0;
  int successes = 0;
  double success_rate = 0.0;
};

struct EvalReport {
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed;  // success rate per seed
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over seeds, 0 for one seed
  int episodes_per_seed = 0;
  std::vector<BucketResult> buckets;  // pooled over seeds

  nlohmann::json to_json() const;
};

// Builds one batch actor per seed.
using ActorFactory = std::function<train::BatchActor(std::uint64_t seed, int epoch)>;

EvalReport evaluate(const ExperimentConfig& cfg, const ActorFactory& make_actor, std::span<const std::uint64_t> seeds,
                    std::span<const EvalBucket> buckets, int n_episodes);

// Scripted expert acting on the true world state.
train::BatchActor scripted_actor(const env::Geometry& geometry);

struct SeedCheckpoint {
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint;
};

// Loads each checkpoint into an agent built from cfg (dimension mismatch is
// rejected) and evaluates it under that seed's episode plan.
EvalReport evaluate_checkpoints(const ExperimentConfig& cfg, std::span<const SeedCheckpoint> runs,
                                std::span<const EvalBucket> buckets, int n_episodes);

// Buckets whose perturbation only moves the observation frame.
std::vector<EvalBucket> view_buckets(std::span<const EvalBucket> buckets);

}  // namespace spatialrl::harness
