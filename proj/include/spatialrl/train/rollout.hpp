#pragma once

// Rollout collection and advantage estimation.
//
// Each environment runs one episode per collection: until success
// (terminal) or max_episode_len (truncated). Transitions are stored episode
// by episode. Truncated episodes bootstrap from V(s_{T+1}).

#include <cstdint>
#include <functional>
#include <vector>

#include "spatialrl/env/world.hpp"
#include "spatialrl/phases/phase_tracker.hpp"
#include "spatialrl/policy/flow_policy.hpp"
#include "spatialrl/train/agent.hpp"
#include "spatialrl/train/config.hpp"

namespace spatialrl::train {

struct Transition {
  env::Observation obs;
  policy::ActionSample sample;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;       // terminal: no bootstrap
  bool last = false;       // final transition of its episode
  double bootstrap = 0.0;  // V(s_{T+1}) for a truncated last transition
  phases::Phase phase = phases::Phase::Reach;
  std::size_t episode = 0;
};

struct EpisodeSummary {
  double total_reward = 0.0;
  bool success = false;
  int length = 0;
  int phase_steps[3] = {0, 0, 0};
};

struct RolloutBuffer {
  std::vector<Transition> transitions;
  std::vector<EpisodeSummary> episodes;

  double success_rate() const;
  double mean_episode_reward() const;
};

using ActionOverride = std::function<env::Action(const env::WorldState&)>;

struct RolloutRequest {
  long train_step = 0;  // k, drives the noise floor
  std::uint64_t seed = 0;
  PerturbationRange range = training_range();
  bool record = true;    // false skips storing transitions
  ActionOverride override_action;  // replaces the sampled action when set
};

// Throws std::runtime_error naming the environment index when a reset fails.
RolloutBuffer collect_rollouts(const Agent& agent, const diff::ParameterSet& snapshot, const env::PickPlaceEnv& world,
                               const TrainConfig& cfg, const RolloutRequest& request);

struct GaeResult {
  std::vector<double> advantages;  // normalized
  std::vector<double> raw_advantages;
  std::vector<double> returns;     // raw advantage + value
};

// Episode-structured input for GAE.
struct GaeInput {
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<bool> done;
  std::vector<bool> last;
  std::vector<double> bootstrap;
};

GaeInput gae_input(const RolloutBuffer& buffer);
GaeResult compute_gae(const GaeInput& in, double gamma, double lambda, bool normalize = true);

}  // namespace spatialrl::train
