#include "spatialrl/train/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>

#include "spatialrl/diff/checkpoint.hpp"
#include "spatialrl/diff/ops.hpp"
#include "spatialrl/env/scripted_controller.hpp"

namespace spatialrl::train {

using diff::Tensor;

namespace {

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string step_name(int step) {
  std::string s = std::to_string(step);
  return "step_" + std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s + ".ckpt";
}

}  // namespace

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("TrainConfig: gamma must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("TrainConfig: gae_lambda must be in [0, 1]");
  if (!(clip_ratio > 0.0)) throw std::invalid_argument("TrainConfig: clip_ratio must be > 0");
  if (!(lr_policy > 0.0) || !(lr_value > 0.0) || !(bc_lr > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  }
  if (!(grad_clip > 0.0)) throw std::invalid_argument("TrainConfig: grad_clip must be > 0");
  if (batch_size == 0 || n_envs == 0 || bc_batch == 0) throw std::invalid_argument("TrainConfig: batch sizes must be > 0");
  if (rollout_epochs < 1 || max_episode_len < 1 || total_steps < 0) {
    throw std::invalid_argument("TrainConfig: epochs and episode length must be >= 1, total_steps >= 0");
  }
  if (checkpoint_every < 1) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 1");
  if (bc_demos_per_pair < 1) throw std::invalid_argument("TrainConfig: bc_demos_per_pair must be >= 1");
  if (eval_every < 0 || eval_episodes < 0 || bc_episodes < 0 || bc_epochs < 0) {
    throw std::invalid_argument("TrainConfig: counts must be >= 0");
  }
  if (!(train_range.rotation_max >= 0.0 && train_range.translation_max >= 0.0 && train_range.shift_max >= 0.0) ||
      train_range.clutter_min < 0 || train_range.clutter_min > train_range.clutter_max) {
    throw std::invalid_argument("TrainConfig: train_range must be non-negative with clutter_min <= clutter_max");
  }
  if (reward.lambda_dense < 0.0) throw std::invalid_argument("TrainConfig: lambda_dense must be >= 0");
  if (!(reward.reward_clip > 0.0)) throw std::invalid_argument("TrainConfig: reward_clip must be > 0");
}

std::vector<bool> run_episodes(const env::PickPlaceEnv& world, std::span<const EpisodeSpec> episodes, int max_len,
                               const BatchActor& actor, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("run_episodes: chunk must be > 0");
  std::vector<bool> success(episodes.size(), false);
  for (std::size_t begin = 0; begin < episodes.size(); begin += chunk) {
    const std::size_t end = std::min(episodes.size(), begin + chunk);
    std::vector<env::WorldState> states;
    std::vector<bool> active;
    for (std::size_t e = begin; e < end; ++e) {
      states.push_back(world.reset(episodes[e].seed, episodes[e].pert));
      active.push_back(true);
    }
    for (int t = 0; t < max_len; ++t) {
      std::vector<std::size_t> idx;
      std::vector<env::WorldState> live;
      std::vector<env::Observation> obs;
      for (std::size_t j = 0; j < states.size(); ++j) {
        if (!active[j]) continue;
        idx.push_back(j);
        live.push_back(states[j]);
        obs.push_back(world.observe(states[j], episodes[begin + j].pert));
      }
      if (idx.empty()) break;
      const auto actions = actor(live, obs, begin, t);
      if (actions.size() != idx.size()) throw std::logic_error("run_episodes: actor returned a wrong action count");
      for (std::size_t j = 0; j < idx.size(); ++j) {
        auto& s = states[idx[j]];
        s = world.step(s, actions[j]);
        if (world.is_success(s)) {
          success[begin + idx[j]] = true;
          active[idx[j]] = false;
        }
      }
    }
  }
  return success;
}

BatchActor policy_actor(const Agent& agent, const diff::ParameterSet& params, std::uint64_t sample_seed) {
  const auto& cfg = agent.config();
  auto pol = std::make_shared<const policy::FlowPolicy>(cfg.policy, cfg.fusion, noise::evaluation_schedule(cfg.noise));
  const long k = cfg.noise.horizon;
  return [&agent, &params, pol, k, sample_seed](std::span<const env::WorldState>, std::span<const env::Observation> obs,
                                                std::size_t begin, int t) {
    const Tensor h = agent.tokens(obs, params);
    const auto samples = pol->sample_actions(params, h, k, derive_seed(sample_seed, begin, static_cast<std::uint64_t>(t)));
    std::vector<env::Action> actions;
    actions.reserve(samples.size());
    for (const auto& s : samples) actions.push_back(s.action);
    return actions;
  };
}

std::vector<bool> run_policy_episodes(const Agent& agent, const diff::ParameterSet& params,
                                      const env::PickPlaceEnv& world, std::span<const EpisodeSpec> episodes,
                                      int max_len, std::uint64_t sample_seed, std::size_t chunk) {
  return run_episodes(world, episodes, max_len, policy_actor(agent, params, sample_seed), chunk);
}

std::uint64_t pretrain_seed(std::uint64_t run_seed) { return derive_seed(run_seed, 100); }

PretrainReport pretrain(Agent& agent, const env::PickPlaceEnv& world, const TrainConfig& cfg, std::uint64_t seed) {
  PretrainReport report;
  if (cfg.bc_episodes == 0 || cfg.bc_epochs == 0) return report;
  const env::ScriptedController expert(world.geometry());
  std::vector<env::Observation> obs;
  std::vector<double> targets;
  for (int ep = 0; ep < cfg.bc_episodes; ++ep) {
    const auto pair = static_cast<std::uint64_t>(ep / cfg.bc_demos_per_pair);
    diff::Rng rng(derive_seed(seed, pair, 11));
    const auto pert = sample_perturbation(cfg.train_range, rng);
    auto s = world.reset(derive_seed(seed, static_cast<std::uint64_t>(ep), 12), pert);
    for (int t = 0; t < cfg.max_episode_len && !world.is_success(s); ++t) {
      const env::Action a = expert.act(s);
      obs.push_back(world.observe(s, pert));
      const auto x = policy::flow_target(a, agent.config().policy, cfg.bc_target_reach);
      targets.insert(targets.end(), x.begin(), x.end());
      s = world.step(s, a);
    }
  }
  report.demo_transitions = obs.size();
  const std::size_t a = agent.config().policy.action_dim;

  diff::Adam opt(agent.actor_parameters(), cfg.bc_lr);
  diff::Rng rng(derive_seed(seed, 13));
  std::vector<std::size_t> order(obs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.bc_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.bc_batch) {
      const std::size_t end = std::min(order.size(), start + cfg.bc_batch);
      std::vector<env::Observation> bo;
      std::vector<double> bt;
      for (std::size_t i = start; i < end; ++i) {
        bo.push_back(obs[order[i]]);
        bt.insert(bt.end(), targets.begin() + order[i] * a, targets.begin() + (order[i] + 1) * a);
      }
      opt.zero_grad();
      {
        diff::Tape tape;
        const Tensor h = agent.tokens(bo, agent.params());
        const Tensor loss =
            agent.policy().flow_matching_loss(agent.params(), h, Tensor::from({end - start, a}, std::move(bt)), rng);
        epoch_loss += loss.item();
        diff::backward(loss);
      }
      diff::clip_grad_norm(opt.params(), cfg.grad_clip);
      opt.step();
      ++batches;
    }
    epoch_loss /= static_cast<double>(std::max<std::size_t>(batches, 1));
    if (epoch == 0) report.first_loss = epoch_loss;
    report.final_loss = epoch_loss;
  }
  agent.params().zero_grad();
  return report;
}

std::string metrics_header() {
  return "step,mean_episode_reward,train_success,eval_success,mean_ratio,clip_fraction,approx_kl,sigma_mean,"
         "floor_scale,phase_reach,phase_place,phase_leave,surrogate_before,surrogate_after,grad_norm,aborted";
}

std::string metrics_line(const MetricsRow& r) {
  std::string s = std::to_string(r.step);
  auto col = [&](const std::string& v) {
    s += ',';
    s += v;
  };
  col(fmt(r.mean_episode_reward));
  col(fmt(r.train_success));
  col(r.eval_success ? fmt(*r.eval_success) : std::string());
  col(fmt(r.ppo.mean_ratio));
  col(fmt(r.ppo.clip_fraction));
  col(fmt(r.ppo.approx_kl));
  col(fmt(r.sigma_mean));
  col(fmt(r.floor_scale));
  for (double f : r.phase_fraction) col(fmt(f));
  col(fmt(r.ppo.surrogate_before));
  col(fmt(r.ppo.surrogate_after));
  col(fmt(r.ppo.actor_grad_norm));
  col(r.ppo.aborted ? "1" : "0");
  return s;
}

TrainResult train(Agent& agent, const env::PickPlaceEnv& world, const TrainConfig& cfg, std::uint64_t seed,
                  const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  TrainResult result;
  std::ofstream metrics;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir / "checkpoints");
    metrics.open(*out_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics) throw std::runtime_error("train: cannot open " + (*out_dir / "metrics.csv").string());
    metrics << metrics_header() << '\n';
    metrics.flush();
  }
  auto save = [&](int step) {
    if (!out_dir) return;
    const auto path = *out_dir / "checkpoints" / step_name(step);
    diff::save_checkpoint(path, agent.params());
    result.checkpoints.push_back(path);
  };

  result.pretrain = pretrain(agent, world, cfg, pretrain_seed(seed));
  save(0);

  const bool eval_enabled = cfg.eval_every > 0 && cfg.eval_episodes > 0;
  auto train_split_success = [&](std::uint64_t tag, std::uint64_t k) {
    std::vector<EpisodeSpec> specs(static_cast<std::size_t>(cfg.eval_episodes));
    for (std::size_t i = 0; i < specs.size(); ++i) {
      diff::Rng rng(derive_seed(seed, tag, k, i));
      specs[i] = {derive_seed(seed, tag + 1, k, i), sample_perturbation(cfg.train_range, rng)};
    }
    const auto ok = run_policy_episodes(agent, agent.params(), world, specs, cfg.max_episode_len,
                                        derive_seed(seed, tag + 2, k));
    return static_cast<double>(std::count(ok.begin(), ok.end(), true)) / static_cast<double>(ok.size());
  };
  if (eval_enabled) result.initial_eval_success = train_split_success(410, 0);

  Optimizers opt(agent, cfg);
  diff::Rng shuffle_rng(derive_seed(seed, 200));
  for (int k = 0; k < cfg.total_steps; ++k) {
    RolloutRequest req;
    req.train_step = k;
    req.seed = derive_seed(seed, 300, static_cast<std::uint64_t>(k));
    req.range = cfg.train_range;
    const RolloutBuffer buffer = collect_rollouts(agent, agent.params(), world, cfg, req);
    const GaeResult gae = compute_gae(gae_input(buffer), cfg.gamma, cfg.gae_lambda);

    MetricsRow row;
    row.step = k;
    row.mean_episode_reward = buffer.mean_episode_reward();
    row.train_success = buffer.success_rate();
    row.floor_scale = noise::alpha(k, agent.config().noise);
    double sigma_sum = 0.0;
    std::size_t sigma_count = 0;
    for (const auto& t : buffer.transitions) {
      for (const auto& s : t.sample.scales) {
        for (double v : s) {
          sigma_sum += v;
          ++sigma_count;
        }
      }
    }
    row.sigma_mean = sigma_count ? sigma_sum / static_cast<double>(sigma_count) : 0.0;
    double steps = 0.0;
    for (const auto& e : buffer.episodes) {
      for (int p = 0; p < 3; ++p) row.phase_fraction[p] += e.phase_steps[p];
      steps += e.length;
    }
    for (double& f : row.phase_fraction) f = steps > 0.0 ? f / steps : 0.0;

    row.ppo = ppo_update(agent, opt, buffer, gae, cfg, shuffle_rng);

    if (eval_enabled && ((k + 1) % cfg.eval_every == 0 || k + 1 == cfg.total_steps)) {
      row.eval_success = train_split_success(400, static_cast<std::uint64_t>(k));
    }
    if (metrics.is_open()) {
      metrics << metrics_line(row) << '\n';
      metrics.flush();
    }
    result.rows.push_back(row);
    if ((k + 1) % cfg.checkpoint_every == 0 || k + 1 == cfg.total_steps) save(k + 1);
  }
  return result;
}

}  // namespace spatialrl::train
