#pragma once

#include <cstdint>

#include "spatialrl/env/world.hpp"
#include "spatialrl/phases/phase_tracker.hpp"

namespace spatialrl::train {

struct PerturbationRange {
  double rotation_max = 0.0;     // radians, symmetric
  double translation_max = 0.0;  // per axis, symmetric
  double shift_max = 0.0;        // per axis, symmetric
  int clutter_min = 0;
  int clutter_max = 0;

  bool contains(const env::Perturbation& p) const;
};

// Training split: small view and placement jitter, light clutter.
PerturbationRange training_range();

struct TrainConfig {
  double lr_policy = 5e-6;
  double lr_value = 1e-4;
  double clip_ratio = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double grad_clip = 1.0;
  std::size_t batch_size = 512;  // PPO minibatch
  std::size_t n_envs = 16;
  int rollout_epochs = 4;
  int max_episode_len = 240;
  int total_steps = 100;
  int checkpoint_every = 10;
  int eval_every = 10;       // 0 disables in-training evaluation
  int eval_episodes = 32;

  // Demonstration pretraining that stands in for the pretrained backbone.
  int bc_episodes = 64;
  int bc_demos_per_pair = 1;  // consecutive episodes sharing one perturbation
  int bc_epochs = 30;
  std::size_t bc_batch = 256;
  double bc_lr = 1e-3;
  double bc_target_reach = 3.0;

  phases::RewardConfig reward;
  PerturbationRange train_range = training_range();

  // Throws std::invalid_argument on a violated invariant.
  void validate() const;
};

}  // namespace spatialrl::train
