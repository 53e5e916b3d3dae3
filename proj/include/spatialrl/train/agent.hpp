#pragma once

// Encoder, fusion, actor and critic sharing one parameter set, plus the
// training-split perturbation sampler and seed derivation.

#include <cstdint>
#include <span>

#include "spatialrl/diff/parameters.hpp"
#include "spatialrl/env/world.hpp"
#include "spatialrl/fusion/fusion.hpp"
#include "spatialrl/policy/flow_policy.hpp"
#include "spatialrl/train/config.hpp"

namespace spatialrl::train {

struct AgentConfig {
  fusion::FusionDims fusion;
  policy::PolicyDims policy;
  noise::NoiseSchedule noise;
  bool fusion_enabled = true;
  std::size_t view_id = 0;
};

class Agent {
 public:
  Agent(const AgentConfig& cfg, const env::Geometry& geometry, std::uint64_t seed);

  const AgentConfig& config() const { return cfg_; }
  const policy::FlowPolicy& policy() const { return policy_; }
  diff::ParameterSet& params() { return params_; }
  const diff::ParameterSet& params() const { return params_; }

  // Fused tokens [B, L + G, C] for a batch of observations under params.
  diff::Tensor tokens(std::span<const env::Observation> obs, const diff::ParameterSet& params) const;

  // Actor-side trainable tensors (everything but the critic and the frozen
  // spatial encoder) and critic tensors.
  std::vector<diff::Tensor> actor_parameters() const;
  std::vector<diff::Tensor> critic_parameters() const;

 private:
  AgentConfig cfg_;
  diff::ParameterSet params_;
  policy::FlowPolicy policy_;
};

env::Perturbation sample_perturbation(const PerturbationRange& range, diff::Rng& rng);

// Stateless seed mixing (splitmix64 finalizer over the combined words).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace spatialrl::train
