#include "spatialrl/train/rollout.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "spatialrl/diff/ops.hpp"

namespace spatialrl::train {

double RolloutBuffer::success_rate() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : episodes) s += e.success ? 1.0 : 0.0;
  return s / static_cast<double>(episodes.size());
}

double RolloutBuffer::mean_episode_reward() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : episodes) s += e.total_reward;
  return s / static_cast<double>(episodes.size());
}

RolloutBuffer collect_rollouts(const Agent& agent, const diff::ParameterSet& snapshot, const env::PickPlaceEnv& world,
                               const TrainConfig& cfg, const RolloutRequest& request) {
  const std::size_t n = cfg.n_envs;
  std::vector<env::Perturbation> perts(n);
  std::vector<env::WorldState> states(n);
  std::vector<phases::PhaseTracker> trackers(n);
  for (std::size_t e = 0; e < n; ++e) {
    diff::Rng rng(derive_seed(request.seed, e, 1));
    perts[e] = sample_perturbation(request.range, rng);
    try {
      states[e] = world.reset(derive_seed(request.seed, e, 2), perts[e]);
    } catch (const env::PlacementError& err) {
      throw std::runtime_error("collect_rollouts: environment " + std::to_string(e) + ": " + err.what());
    }
    trackers[e] = phases::PhaseTracker(states[e], world.geometry(), cfg.reward);
  }

  std::vector<std::vector<Transition>> per_env(n);
  std::vector<EpisodeSummary> summaries(n);
  std::vector<bool> active(n, true);
  std::vector<std::size_t> truncated;
  std::vector<env::Observation> truncated_obs;

  for (int t = 0; t < cfg.max_episode_len; ++t) {
    std::vector<std::size_t> idx;
    std::vector<env::Observation> obs;
    for (std::size_t e = 0; e < n; ++e) {
      if (!active[e]) continue;
      idx.push_back(e);
      obs.push_back(world.observe(states[e], perts[e]));
    }
    if (idx.empty()) break;
    const diff::Tensor h = agent.tokens(obs, snapshot);
    const diff::Tensor values = agent.policy().value(snapshot, h);
    auto samples = agent.policy().sample_actions(snapshot, h, request.train_step,
                                                 derive_seed(request.seed, static_cast<std::uint64_t>(t), 3));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::size_t e = idx[j];
      const env::Action action = request.override_action ? request.override_action(states[e]) : samples[j].action;
      const env::WorldState next = world.step(states[e], action);
      auto& tracker = trackers[e];
      tracker.update_phase(next);
      const double dense = tracker.dense_reward(tracker.normalized_distances(next));
      const bool success = world.is_success(next);
      const double reward = phases::total_step_reward(dense, success, cfg.reward);
      const bool last = success || t + 1 == cfg.max_episode_len;

      auto& sum = summaries[e];
      sum.total_reward += reward;
      sum.length += 1;
      sum.success = success;
      sum.phase_steps[static_cast<int>(tracker.phase())] += 1;
      if (request.record) {
        Transition tr;
        tr.obs = std::move(obs[j]);
        tr.sample = std::move(samples[j]);
        tr.reward = reward;
        tr.value = values.at(j);
        tr.done = success;
        tr.last = last;
        tr.phase = tracker.phase();
        tr.episode = e;
        per_env[e].push_back(std::move(tr));
      }
      states[e] = next;
      if (last) {
        active[e] = false;
        if (!success && request.record) {
          truncated.push_back(e);
          truncated_obs.push_back(world.observe(next, perts[e]));
        }
      }
    }
  }

  if (!truncated.empty()) {
    const diff::Tensor v = agent.policy().value(snapshot, agent.tokens(truncated_obs, snapshot));
    for (std::size_t j = 0; j < truncated.size(); ++j) per_env[truncated[j]].back().bootstrap = v.at(j);
  }

  RolloutBuffer buffer;
  buffer.episodes = std::move(summaries);
  for (auto& v : per_env) {
    for (auto& tr : v) buffer.transitions.push_back(std::move(tr));
  }
  return buffer;
}

GaeInput gae_input(const RolloutBuffer& buffer) {
  GaeInput in;
  for (const auto& t : buffer.transitions) {
    in.rewards.push_back(t.reward);
    in.values.push_back(t.value);
    in.done.push_back(t.done);
    in.last.push_back(t.last);
    in.bootstrap.push_back(t.bootstrap);
  }
  return in;
}

GaeResult compute_gae(const GaeInput& in, double gamma, double lambda, bool normalize) {
  const std::size_t n = in.rewards.size();
  if (in.values.size() != n || in.done.size() != n || in.last.size() != n || in.bootstrap.size() != n) {
    throw std::invalid_argument("compute_gae: field lengths differ");
  }
  if (n > 0 && !in.last.back()) throw std::invalid_argument("compute_gae: final transition must end an episode");
  GaeResult out;
  out.raw_advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    double next_value = 0.0;
    if (in.last[i]) {
      next_value = in.done[i] ? 0.0 : in.bootstrap[i];
      running = 0.0;
    } else {
      next_value = in.values[i + 1];
    }
    const double delta = in.rewards[i] + gamma * next_value - in.values[i];
    running = delta + gamma * lambda * running;
    out.raw_advantages[i] = running;
    out.returns[i] = running + in.values[i];
  }
  out.advantages = out.raw_advantages;
  if (normalize && n > 0) {
    const double mean = std::accumulate(out.advantages.begin(), out.advantages.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double a : out.advantages) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (double& a : out.advantages) a = sd > 0.0 ? (a - mean) / sd : 0.0;
  }
  return out;
}

}  // namespace spatialrl::train
