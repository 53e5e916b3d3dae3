#pragma once

// Clipped-surrogate policy update with a squared-error critic.
//
// Actor and critic gradients come from one backward pass (the critic reads
// detached tokens, so the groups do not interact) and are clipped to
// grad_clip separately. A non-finite loss or gradient aborts the update and
// restores parameters and optimizer moments bit-exactly.

#include <string>
#include <vector>

#include "spatialrl/diff/adam.hpp"
#include "spatialrl/train/agent.hpp"
#include "spatialrl/train/config.hpp"
#include "spatialrl/train/rollout.hpp"

namespace spatialrl::train {

struct PpoDiagnostics {
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  double mean_loss = 0.0;         // combined actor and critic loss
  double actor_grad_norm = 0.0;   // largest pre-clip norm seen
  double clipped_grad_norm = 0.0; // largest post-clip norm seen
  int minibatches = 0;
  bool aborted = false;
  std::string abort_reason;
};

struct Optimizers {
  diff::Adam actor;
  diff::Adam critic;

  Optimizers(Agent& agent, const TrainConfig& cfg);
};

// Elementwise min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv).
diff::Tensor clipped_surrogate(const diff::Tensor& ratio, const diff::Tensor& advantages, double clip_ratio);

// Ratios of the selected transitions under params relative to their stored
// log-probabilities.
diff::Tensor ratios(const Agent& agent, const diff::ParameterSet& params, const RolloutBuffer& buffer,
                    std::span<const std::size_t> indices);

// Mean clipped surrogate over the whole buffer, evaluated without a tape.
double mean_surrogate(const Agent& agent, const diff::ParameterSet& params, const RolloutBuffer& buffer,
                      const std::vector<double>& advantages, const TrainConfig& cfg);

// Differentiable per-minibatch objective: -mean surrogate + mean squared
// value error.
struct MinibatchLoss {
  diff::Tensor total;
  diff::Tensor policy;  // -mean clipped surrogate
  diff::Tensor value;   // mean squared error to returns
  diff::Tensor ratio;
};
MinibatchLoss minibatch_loss(const Agent& agent, const diff::ParameterSet& params, const RolloutBuffer& buffer,
                             const GaeResult& gae, std::span<const std::size_t> indices, const TrainConfig& cfg);

PpoDiagnostics ppo_update(Agent& agent, Optimizers& opt, const RolloutBuffer& buffer, const GaeResult& gae,
                          const TrainConfig& cfg, diff::Rng& rng);

}  // namespace spatialrl::train
