#pragma once

// Flow-matching actor with exact per-increment likelihoods, plus a critic.
//
// An action is generated by integrating x from x_0 ~ N(0, I) over N steps at
// t = i / N: x_{i+1} = x_i + dt f(x_i, t, cond) + sigma_i * eps_i. Each
// increment is Gaussian with mean x_i + dt f and scale sigma_i from the noise
// schedule, so the log-probability of a recorded path is a sum of Gaussian
// log-densities (x_0 excluded) and PPO ratios are exact.
//
// The final state maps to an action as delta = a_max * x[0:2] (the simulator
// clamps its norm) and gripper_cmd = clamp(x[2], -1, 1). Log-probabilities
// are taken before this mapping.
//
// Parameter namespaces: "policy/" (conditioning, velocity net, noise head)
// and "value/". The critic reads detached fused tokens.

#include <cstdint>
#include <vector>

#include "spatialrl/diff/parameters.hpp"
#include "spatialrl/diff/tensor.hpp"
#include "spatialrl/env/world.hpp"
#include "spatialrl/fusion/fusion.hpp"
#include "spatialrl/noise/schedule.hpp"

namespace spatialrl::policy {

struct PolicyDims {
  std::size_t action_dim = 3;
  std::size_t cond_width = 64;
  std::size_t hidden = 64;
  int flow_steps = 4;
  double sigma_init = 0.3;  // initial learned scale
  double a_max = 0.05;      // flow units to workspace displacement

  double step_size() const { return 1.0 / flow_steps; }
  void validate() const;
};

struct ActionSample {
  env::Action action;
  double log_prob = 0.0;
  long train_step = 0;                           // k used for the noise floor
  std::vector<std::vector<double>> flow_path;    // N + 1 states
  std::vector<std::vector<double>> means;        // N increment means
  std::vector<std::vector<double>> scales;       // N increment scales
  std::vector<std::vector<double>> noise;        // N standard normal draws
};

class NonFiniteFlow : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

void init_policy_params(diff::ParameterSet& params, const PolicyDims& dims, const fusion::FusionDims& fdims,
                        diff::Rng& rng);
void init_value_params(diff::ParameterSet& params, const PolicyDims& dims, const fusion::FusionDims& fdims,
                       diff::Rng& rng);

env::Action to_action(std::span<const double> x, const PolicyDims& dims);
// Inverse used for demonstration targets: displacement / a_max capped at
// norm `reach`, gripper +-reach.
std::vector<double> flow_target(const env::Action& action, const PolicyDims& dims, double reach);

class FlowPolicy {
 public:
  FlowPolicy(PolicyDims dims, fusion::FusionDims fdims, noise::NoiseSchedule schedule);

  const PolicyDims& dims() const { return dims_; }
  const noise::NoiseSchedule& schedule() const { return schedule_; }

  // [B, L + G, C] fused tokens -> [B, cond_width].
  diff::Tensor condition(const diff::ParameterSet& params, const diff::Tensor& h) const;
  // [B, action_dim] velocity at flow time t.
  diff::Tensor velocity(const diff::ParameterSet& params, const diff::Tensor& x, double t,
                        const diff::Tensor& cond) const;
  // [B, action_dim] strictly positive learned scale.
  diff::Tensor sigma_learned(const diff::ParameterSet& params, const diff::Tensor& cond, double t) const;
  // Scale actually used for the increment at (t, k) under the schedule.
  diff::Tensor increment_scale(const diff::ParameterSet& params, const diff::Tensor& cond, double t, long k) const;

  // x + dt f(x, t) + sigma * eps. Throws NonFiniteFlow when f is not finite.
  diff::Tensor integrate_step(const diff::ParameterSet& params, const diff::Tensor& x, double t,
                              const diff::Tensor& cond, const diff::Tensor& sigma, const diff::Tensor& eps,
                              double dt) const;

  // One sample per batch row, deterministic given seed.
  std::vector<ActionSample> sample_actions(const diff::ParameterSet& params, const diff::Tensor& h, long k,
                                           std::uint64_t seed) const;

  // [B] log-density of each recorded path under params, differentiable.
  // Throws std::invalid_argument on a path/shape mismatch.
  diff::Tensor log_prob_under(const diff::ParameterSet& params, const std::vector<const ActionSample*>& samples,
                              const diff::Tensor& h) const;

  // [B] critic estimate.
  diff::Tensor value(const diff::ParameterSet& params, const diff::Tensor& h) const;

  // Conditional flow-matching regression toward targets [B, action_dim] with
  // x_t = (1 - t) x_0 + t target and t drawn from the integration grid.
  diff::Tensor flow_matching_loss(const diff::ParameterSet& params, const diff::Tensor& h,
                                  const diff::Tensor& targets, diff::Rng& rng) const;

 private:
  PolicyDims dims_;
  fusion::FusionDims fdims_;
  noise::NoiseSchedule schedule_;
};

}  // namespace spatialrl::policy
