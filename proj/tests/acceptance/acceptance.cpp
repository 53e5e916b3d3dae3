// One PASS/FAIL line per acceptance criterion. Tolerances and runtime
// budgets are fixed here; the trend criterion reads (or resumes) a sweep
// directory produced with the trend configuration.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "spatialrl/diff/gradcheck.hpp"
#include "spatialrl/diff/ops.hpp"
#include "spatialrl/env/scripted_controller.hpp"
#include "spatialrl/harness/config.hpp"
#include "spatialrl/harness/experiment.hpp"
#include "spatialrl/phases/phase_tracker.hpp"
#include "spatialrl/train/ppo.hpp"
#include "spatialrl/train/trainer.hpp"

using namespace spatialrl;
using diff::Tensor;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kSurrogateGradTol = 1e-3;
// The surrogate has entries with true gradients near 1e-8, where two-point
// rounding noise alone exceeds the tolerance. Every tensor is checked on every
// seed; the entries sampled within a tensor change with the seed.
const diff::GradCheckOptions kSurrogateCheck{.step = 1e-3, .stencil = 4, .max_entries_per_tensor = 24, .entry_seed = 0};
constexpr int kGradSeeds = 100;
constexpr double kTelescopeTol = 1e-12;
constexpr int kTelescopeEpisodes = 1000;
constexpr int kPhaseEpisodes = 10000;
constexpr int kFloorSamples = 100000;
constexpr double kRatioTol = 1e-12;
constexpr double kGaeTol = 1e-10;
constexpr int kGaeEpisodes = 500;
constexpr double kGradClipSlack = 1e-12;
constexpr double kAttentionRowTol = 1e-12;
constexpr double kRunBudgetSeconds = 15 * 60;
constexpr double kSuiteBudgetSeconds = 6 * 3600;
constexpr std::size_t kMinTrendSeeds = 5;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

train::AgentConfig small_agent(noise::Regime regime = noise::Regime::SCAN) {
  train::AgentConfig ac;
  ac.fusion.visual_tokens = 3;
  ac.fusion.grid_tokens = 3;
  ac.fusion.global_tokens = 1;
  ac.fusion.channels = 6;
  ac.fusion.encoder_hidden = 8;
  ac.fusion.mlp_hidden = 8;
  ac.policy.cond_width = 8;
  ac.policy.hidden = 8;
  ac.noise.regime = regime;
  return ac;
}

train::TrainConfig small_train() {
  train::TrainConfig tc;
  tc.n_envs = 3;
  tc.max_episode_len = 20;
  tc.batch_size = 16;
  tc.rollout_epochs = 1;
  tc.lr_policy = 1e-6;
  return tc;
}

// Moves every zero-initialized output layer to random values so all paths
// carry gradient.
void randomize_zero_init(diff::ParameterSet& p, std::uint64_t seed) {
  diff::Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  for (const char* name : {"fusion/gate", "fusion/mlp_w2", "fusion/mlp_b2", "policy/sigma_w2", "value/w3", "value/b3"}) {
    for (auto& v : p.get(name).mutable_data()) v = n(rng);
  }
}

std::vector<Tensor> select(const diff::ParameterSet& p, const std::function<bool(const std::string&)>& keep) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : p.entries()) {
    if (t.requires_grad() && keep(name)) out.push_back(t);
  }
  return out;
}

std::vector<env::Observation> random_observations(const env::PickPlaceEnv& world, std::uint64_t seed, int n) {
  diff::Rng rng(seed);
  std::vector<env::Observation> obs;
  for (int i = 0; i < n; ++i) {
    const auto pert = train::sample_perturbation(train::training_range(), rng);
    obs.push_back(world.observe(world.reset(train::derive_seed(seed, static_cast<std::uint64_t>(i)), pert), pert));
  }
  return obs;
}

std::vector<const policy::ActionSample*> pointers(const std::vector<policy::ActionSample>& v) {
  std::vector<const policy::ActionSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

Outcome gradient_fidelity() {
  const env::PickPlaceEnv world;
  double worst[5] = {0, 0, 0, 0, 0};
  const char* names[5] = {"fusion", "velocity", "sigma", "value", "surrogate"};
  for (int seed = 0; seed < kGradSeeds; ++seed) {
    const auto s = static_cast<std::uint64_t>(seed);
    train::Agent agent(small_agent(), world.geometry(), s);
    auto& p = agent.params();
    randomize_zero_init(p, s + 1000);
    const auto obs = random_observations(world, s, 3);
    const auto& pol = agent.policy();

    auto fusion_fn = [&] {
      const Tensor h = agent.tokens(obs, p);
      return diff::sum(diff::tanh(h) * h);
    };
    worst[0] = std::max(worst[0], diff::finite_diff_check(fusion_fn, select(p, [](const std::string& n) {
                                                            return n.starts_with("fusion/");
                                                          })).max_relative_error);

    const Tensor h = agent.tokens(obs, p).detach();
    const auto samples = pol.sample_actions(p, h, seed % 120, s);
    auto logp_fn = [&] { return diff::sum(pol.log_prob_under(p, pointers(samples), h)); };
    worst[1] = std::max(worst[1], diff::finite_diff_check(logp_fn, select(p, [](const std::string& n) {
                                                            return n.starts_with("policy/") && !n.starts_with("policy/sigma_");
                                                          })).max_relative_error);
    worst[2] = std::max(worst[2], diff::finite_diff_check(logp_fn, select(p, [](const std::string& n) {
                                                            return n.starts_with("policy/sigma_");
                                                          })).max_relative_error);
    auto value_fn = [&] { return diff::sum(diff::square(pol.value(p, h))); };
    worst[3] = std::max(worst[3], diff::finite_diff_check(value_fn, p.with_prefix("value/")).max_relative_error);

    train::TrainConfig tc = small_train();
    tc.n_envs = 1;
    tc.max_episode_len = 4;
    train::RolloutRequest req;
    req.seed = s + 7;
    req.train_step = seed;
    const auto buf = train::collect_rollouts(agent, p, world, tc, req);
    const auto gae = train::compute_gae(train::gae_input(buf), tc.gamma, tc.gae_lambda);
    diff::Rng rng(s + 3);
    std::normal_distribution<double> n(0.0, 1e-3);
    for (auto& t : agent.actor_parameters()) {
      for (auto& v : t.mutable_data()) v += n(rng);
    }
    std::vector<std::size_t> idx(buf.transitions.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto policy_fn = [&] { return train::minibatch_loss(agent, p, buf, gae, idx, tc).policy; };
    auto critic_fn = [&] { return train::minibatch_loss(agent, p, buf, gae, idx, tc).value; };
    diff::GradCheckOptions surrogate = kSurrogateCheck;
    surrogate.entry_seed = s;
    worst[4] = std::max({worst[4], diff::finite_diff_check(policy_fn, agent.actor_parameters(), surrogate).max_relative_error,
                         diff::finite_diff_check(critic_fn, agent.critic_parameters(), surrogate).max_relative_error});
  }
  Outcome o;
  std::ostringstream d;
  for (int i = 0; i < 5; ++i) {
    const double tol = i == 4 ? kSurrogateGradTol : kGradTol;
    o.pass = o.pass && worst[i] < tol;
    d << names[i] << " " << sci(worst[i]) << (i < 4 ? ", " : "");
  }
  o.detail = "worst relative error over " + std::to_string(kGradSeeds) + " seeds: " + d.str() + " (tol " +
             sci(kGradTol) + ", surrogate " + sci(kSurrogateGradTol) + ")";
  return o;
}

struct StepRecord {
  phases::Phase phase;
  double reward;
  double d_ro;
  double d_od;
  bool entry;
};

// Expert with Gaussian displacement noise and gripper flips, or a uniform
// random walk when noise is negative.
std::vector<StepRecord> random_episode(std::uint64_t seed, const phases::RewardConfig& cfg, double noise,
                                       double flip_prob) {
  const env::PickPlaceEnv world;
  const env::ScriptedController expert(world.geometry());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  diff::Rng prng(seed);
  const auto pert = train::sample_perturbation(train::training_range(), prng);
  auto s = world.reset(seed, pert);
  phases::PhaseTracker tracker(s, world.geometry(), cfg);
  std::vector<StepRecord> out;
  for (int t = 0; t < 240; ++t) {
    env::Action a;
    if (noise < 0.0) {
      a.delta = world.geometry().a_max * env::Vec2{u(rng), u(rng)};
      a.gripper_cmd = u(rng);
    } else {
      a = expert.act(s);
      a.delta = a.delta + noise * env::Vec2{n01(rng), n01(rng)};
      if (0.5 * (u(rng) + 1.0) < flip_prob) a.gripper_cmd = -a.gripper_cmd;
    }
    s = world.step(s, a);
    const auto before = tracker.phase();
    tracker.update_phase(s);
    const auto d = tracker.normalized_distances(s);
    const double r = tracker.dense_reward(d);
    out.push_back({tracker.phase(), r, d.d_ro, d.d_od, tracker.phase() != before});
    if (world.is_success(s)) break;
  }
  return out;
}

Outcome reward_telescoping() {
  phases::RewardConfig cfg;
  cfg.reward_clip = std::numeric_limits<double>::infinity();
  double worst = 0.0;
  std::size_t segments = 0;
  for (int e = 0; e < kTelescopeEpisodes; ++e) {
    const auto seed = static_cast<std::uint64_t>(e) + 50000;
    const double noise = e % 5 == 4 ? -1.0 : 0.015 * (e % 4);
    const auto ep = random_episode(seed, cfg, noise, 0.01 * (e % 3));
    std::size_t i = 0;
    while (i < ep.size()) {
      const auto p = ep[i].phase;
      const double base = ep[i].entry ? (p == phases::Phase::Place ? ep[i].d_od : ep[i].d_ro) : 1.0;
      std::size_t j = ep[i].entry ? i + 1 : i;
      double end = base;
      double sum = 0.0;
      for (; j < ep.size() && ep[j].phase == p && !ep[j].entry; ++j) {
        sum += ep[j].reward;
        end = p == phases::Phase::Place ? ep[j].d_od : ep[j].d_ro;
      }
      const double signed_change = p == phases::Phase::Leave ? end - base : base - end;
      worst = std::max(worst, std::abs(sum - cfg.lambda_dense * signed_change));
      ++segments;
      i = j;
    }
  }
  return {worst <= kTelescopeTol, std::to_string(kTelescopeEpisodes) + " trajectories, " + std::to_string(segments) +
                                      " constant-phase segments, worst |sum - lambda*change| " + sci(worst) + " (tol " +
                                      sci(kTelescopeTol) + ")"};
}

bool leave_overrides_place() {
  env::Geometry g;
  phases::RewardConfig cfg;
  cfg.place_entry_attach_steps = 2;
  env::WorldState s;
  s.p_eef = {0.0, -0.5};
  s.p_obj = {0.0, 0.0};
  s.p_dest = {0.0, 0.5};
  phases::PhaseTracker t(s, g, cfg);
  // Grasp then release on the destination before the dwell counter allows a
  // transition; once it does, both Place and Leave conditions hold.
  s.p_eef = s.p_obj = s.p_dest;
  s.attached = true;
  for (int i = 0; i < 2; ++i) t.update_phase(s);
  s.attached = false;
  while (t.dwell_counter() + 1 < cfg.stability_horizon) {
    t.update_phase(s);
    if (t.phase() != phases::Phase::Reach) return false;
  }
  return t.update_phase(s) == phases::Phase::Leave;
}

Outcome phase_machine() {
  phases::RewardConfig cfg;
  std::size_t order_violations = 0;
  std::size_t spacing_violations = 0;
  std::size_t reached_place = 0;
  std::size_t reached_leave = 0;
  for (int e = 0; e < kPhaseEpisodes; ++e) {
    const auto seed = static_cast<std::uint64_t>(e) + 90000;
    const double noise = e % 4 == 3 ? -1.0 : 0.02 * (e % 3);
    const auto ep = random_episode(seed, cfg, noise, 0.02 * (e % 4));
    if (ep.front().phase != phases::Phase::Reach && !ep.front().entry) ++order_violations;
    int last = 0;  // a fresh tracker counts as a transition at step 0
    auto prev = phases::Phase::Reach;
    for (std::size_t i = 0; i < ep.size(); ++i) {
      if (ep[i].phase == prev) continue;
      if (static_cast<int>(ep[i].phase) < static_cast<int>(prev)) ++order_violations;
      if (static_cast<int>(i) + 1 - last < cfg.stability_horizon) ++spacing_violations;
      last = static_cast<int>(i) + 1;
      prev = ep[i].phase;
    }
    bool saw_place = false;
    bool saw_leave = false;
    for (const auto& r : ep) {
      saw_place |= r.phase == phases::Phase::Place;
      saw_leave |= r.phase == phases::Phase::Leave;
    }
    reached_place += saw_place;
    reached_leave += saw_leave;
  }
  const bool priority = leave_overrides_place();
  return {order_violations == 0 && spacing_violations == 0 && priority,
          std::to_string(kPhaseEpisodes) + " episodes (" + std::to_string(reached_place) + " reach Place, " +
              std::to_string(reached_leave) + " reach Leave): order violations " + std::to_string(order_violations) +
              ", transitions closer than H=" + std::to_string(cfg.stability_horizon) + ": " +
              std::to_string(spacing_violations) + ", Leave-over-Place case " + (priority ? "Leave" : "WRONG")};
}

Outcome scan_floor() {
  noise::NoiseSchedule sched;
  sched.regime = noise::Regime::SCAN;
  const int n_steps = 4;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t floor_violations = 0;
  std::size_t nonpositive = 0;
  for (int i = 0; i < kFloorSamples; ++i) {
    const double sl = std::exp(-8.0 + 11.0 * u(rng));
    const double t = (n_steps - 1.0) / n_steps * u(rng);
    const long k = static_cast<long>(u(rng) * 3 * sched.horizon);
    const double floor = noise::sigma_min(t, k, sched);
    if (noise::sigma_total(sl, t, k, 1.0 / n_steps, sched) < floor) ++floor_violations;
    if (t > 0.0 && !(floor > 0.0)) ++nonpositive;
  }
  for (int j = 1; j <= n_steps - 1; ++j) {
    if (!(noise::sigma_min(static_cast<double>(j) / n_steps, 1000, sched) > 0.0)) ++nonpositive;
  }
  bool midpoint = true;
  for (long k = 0; k <= 2 * sched.horizon; ++k) midpoint &= noise::sigma_min(0.5, k, sched) == noise::alpha(k, sched);
  const bool ends = noise::alpha(0, sched) == sched.alpha0 && noise::alpha(sched.horizon, sched) == sched.alpha1;
  return {floor_violations == 0 && nonpositive == 0 && midpoint && ends,
          std::to_string(kFloorSamples) + " samples: below floor " + std::to_string(floor_violations) +
              ", non-positive floor " + std::to_string(nonpositive) + ", sigma_min(0.5,k)=alpha(k) " +
              (midpoint ? "exact" : "MISMATCH") + ", alpha(0)=a0 and alpha(K)=a1 " + (ends ? "exact" : "MISMATCH")};
}

// Sigma-head gradient of the PPO objective on a random batch.
bool sigma_gradient_nonzero(noise::Regime regime, std::uint64_t seed) {
  const env::PickPlaceEnv world;
  train::Agent agent(small_agent(regime), world.geometry(), seed);
  auto& p = agent.params();
  randomize_zero_init(p, seed + 500);
  train::TrainConfig tc = small_train();
  train::RolloutRequest req;
  req.seed = seed;
  req.train_step = static_cast<long>(seed % 100);
  const auto buf = train::collect_rollouts(agent, p, world, tc, req);
  const auto gae = train::compute_gae(train::gae_input(buf), tc.gamma, tc.gae_lambda);
  diff::Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto& t : agent.actor_parameters()) {
    for (auto& v : t.mutable_data()) v += n(rng);
  }
  std::vector<std::size_t> idx(buf.transitions.size());
  std::iota(idx.begin(), idx.end(), 0);
  p.zero_grad();
  {
    diff::Tape tape;
    diff::backward(train::minibatch_loss(agent, p, buf, gae, idx, tc).total);
  }
  for (const auto& [name, t] : p.entries()) {
    if (!name.starts_with("policy/sigma_") || !t.has_grad()) continue;
    for (double g : t.grad()) {
      if (g != 0.0) return true;
    }
  }
  return false;
}

Outcome regime_separation() {
  int sde_nonzero = 0;
  int flow_zero = 0;
  int scan_zero = 0;
  const int trials = 10;
  for (int i = 0; i < trials; ++i) {
    const auto s = static_cast<std::uint64_t>(i) + 300;
    sde_nonzero += sigma_gradient_nonzero(noise::Regime::SDE, s);
    flow_zero += !sigma_gradient_nonzero(noise::Regime::FlowNoise, s);
    scan_zero += !sigma_gradient_nonzero(noise::Regime::SCAN, s);
  }
  return {sde_nonzero == 0 && flow_zero == 0 && scan_zero == 0,
          std::to_string(trials) + " random batches per regime: SDE batches with a nonzero sigma-head gradient " +
              std::to_string(sde_nonzero) + ", flow-noise batches with all-zero " + std::to_string(flow_zero) +
              ", SCAN batches with all-zero " + std::to_string(scan_zero)};
}

std::vector<double> brute_force_gae(const train::GaeInput& in, double gamma, double lambda) {
  const std::size_t n = in.rewards.size();
  std::vector<double> delta(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double next = in.last[i] ? (in.done[i] ? 0.0 : in.bootstrap[i]) : in.values[i + 1];
    delta[i] = in.rewards[i] + gamma * next - in.values[i];
  }
  std::vector<double> adv(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; i + l < n; ++l) {
      adv[i] += std::pow(gamma * lambda, static_cast<double>(l)) * delta[i + l];
      if (in.last[i + l]) break;
    }
  }
  return adv;
}

Outcome ppo_correctness() {
  const env::PickPlaceEnv world;
  double worst_ratio = 0.0;
  for (auto regime : {noise::Regime::SDE, noise::Regime::FlowNoise, noise::Regime::SCAN}) {
    for (std::uint64_t s = 0; s < 4; ++s) {
      train::Agent agent(small_agent(regime), world.geometry(), s);
      randomize_zero_init(agent.params(), s + 9);
      train::RolloutRequest req;
      req.seed = s + 40;
      req.train_step = static_cast<long>(s * 30);
      const auto buf = train::collect_rollouts(agent, agent.params(), world, small_train(), req);
      std::vector<std::size_t> idx(buf.transitions.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), std::mt19937_64(s));
      const Tensor r_all = train::ratios(agent, agent.params(), buf, idx);
      for (double r : r_all.data()) {
        worst_ratio = std::max(worst_ratio, std::abs(r - 1.0));
      }
    }
  }

  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> len(1, 20);
  double worst_gae = 0.0;
  for (int e = 0; e < kGaeEpisodes; ++e) {
    train::GaeInput in;
    const int n = len(rng);
    const bool terminal = u(rng) > 0.0;
    for (int t = 0; t < n; ++t) {
      in.rewards.push_back(u(rng));
      in.values.push_back(u(rng));
      const bool last = t + 1 == n;
      in.last.push_back(last);
      in.done.push_back(last && terminal);
      in.bootstrap.push_back(last && !terminal ? u(rng) : 0.0);
    }
    const auto fast = train::compute_gae(in, 0.99, 0.95, false);
    const auto slow = brute_force_gae(in, 0.99, 0.95);
    for (std::size_t i = 0; i < slow.size(); ++i) worst_gae = std::max(worst_gae, std::abs(fast.raw_advantages[i] - slow[i]));
  }

  double worst_norm = 0.0;
  double largest_preclip = 0.0;
  int decreases = 0;
  const int updates = 10;
  for (std::uint64_t s = 0; s < updates; ++s) {
    train::Agent agent(small_agent(), world.geometry(), s + 60);
    randomize_zero_init(agent.params(), s + 61);
    // Half the updates use a steep velocity output so pre-clip norms exceed the bound.
    if (s % 2 == 1) {
      for (auto& v : agent.params().get("policy/vel_w3").mutable_data()) v *= 30.0;
    }
    train::TrainConfig tc = small_train();
    tc.batch_size = 100000;
    train::RolloutRequest req;
    req.seed = s + 62;
    const auto buf = train::collect_rollouts(agent, agent.params(), world, tc, req);
    const auto gae = train::compute_gae(train::gae_input(buf), tc.gamma, tc.gae_lambda);
    train::Optimizers opt(agent, tc);
    diff::Rng r(s);
    const auto d = train::ppo_update(agent, opt, buf, gae, tc, r);
    worst_norm = std::max(worst_norm, d.clipped_grad_norm);
    largest_preclip = std::max(largest_preclip, d.actor_grad_norm);
    if (d.aborted || d.surrogate_after < d.surrogate_before) ++decreases;
  }
  return {worst_ratio <= kRatioTol && worst_gae <= kGaeTol && worst_norm <= 1.0 + kGradClipSlack && decreases == 0,
          "max |ratio-1| " + sci(worst_ratio) + " (tol " + sci(kRatioTol) + "), GAE vs double sum over " +
              std::to_string(kGaeEpisodes) + " episodes " + sci(worst_gae) + " (tol " + sci(kGaeTol) +
              "), max post-clip norm " + fixed(worst_norm, 12) + " (pre-clip up to " + fixed(largest_preclip, 2) + "), small-step updates that lowered the surrogate " +
              std::to_string(decreases) + "/" + std::to_string(updates)};
}

Outcome fusion_identity() {
  const env::PickPlaceEnv world;
  int identity_failures = 0;
  int leaked_gradients = 0;
  double worst_row = 0.0;
  const int trials = 20;
  for (int i = 0; i < trials; ++i) {
    const auto s = static_cast<std::uint64_t>(i) + 700;
    train::AgentConfig ac;  // full-size dimensions
    train::Agent agent(ac, world.geometry(), s);
    auto& p = agent.params();
    const auto& d = ac.fusion;
    const auto obs = random_observations(world, s, 3);
    {
      const auto tokens = fusion::encode_tokens(obs, p, d);
      const Tensor h = fusion::fuse(tokens, p, d, s % d.views);
      for (std::size_t b = 0; b < obs.size(); ++b) {
        for (std::size_t j = 0; j < d.visual_tokens * d.channels; ++j) {
          if (h.at(b * d.fused_tokens() * d.channels + j) != tokens.visual.at(b * d.visual_tokens * d.channels + j)) {
            ++identity_failures;
            break;
          }
        }
      }
    }
    randomize_zero_init(p, s + 1);
    p.zero_grad();
    {
      diff::Tape tape;
      const auto tokens = fusion::encode_tokens(obs, p, d);
      const auto z = fusion::project_spatial(tokens.spatial_grid, p, d, s % d.views);
      const auto att = fusion::cross_attend(tokens.visual, z, p, d);
      for (std::size_t row = 0; row < att.weights.size() / d.grid_tokens; ++row) {
        double sum = 0.0;
        for (std::size_t j = 0; j < d.grid_tokens; ++j) sum += att.weights.at(row * d.grid_tokens + j);
        worst_row = std::max(worst_row, std::abs(sum - 1.0));
      }
      const Tensor h = fusion::fuse(tokens, p, d, s % d.views);
      diff::backward(diff::sum(diff::tanh(h)) + diff::sum(agent.policy().value(p, h)));
      if (tokens.spatial_grid.has_grad() || tokens.spatial_global.has_grad()) ++leaked_gradients;
    }
    for (const auto& [name, t] : p.entries()) {
      if (!name.starts_with("spatial/") || !t.has_grad()) continue;
      for (double g : t.grad()) {
        if (g != 0.0) {
          ++leaked_gradients;
          break;
        }
      }
    }
  }
  return {identity_failures == 0 && leaked_gradients == 0 && worst_row <= kAttentionRowTol,
          std::to_string(trials) + " random scenes: zero-init outputs differing from visual tokens " +
              std::to_string(identity_failures) + ", spatial sources with gradient " + std::to_string(leaked_gradients) +
              ", max |attention row sum - 1| " + sci(worst_row) + " (tol " + sci(kAttentionRowTol) + ")"};
}

Outcome trend(const fs::path& config_path, const fs::path& sweep_dir) {
  auto cfg = harness::load_config(config_path);
  if (cfg.seeds.size() < kMinTrendSeeds) {
    return {false, "configuration lists " + std::to_string(cfg.seeds.size()) + " seeds, need >= " +
                       std::to_string(kMinTrendSeeds)};
  }
  const auto result = harness::run_sweep(cfg, sweep_dir);
  auto rows_for = [&](const std::string& group, const std::string& label) {
    std::vector<const harness::SweepEntry*> out;
    for (const auto& e : result.entries) {
      if (e.group == group && e.spec.label == label) out.push_back(&e);
    }
    return out;
  };
  auto med_iters = [&](const std::string& group, const std::string& label) {
    std::vector<std::optional<int>> v;
    for (const auto* e : rows_for(group, label)) v.push_back(e->outcome.iterations_to_threshold);
    return harness::median_iterations(v);
  };
  auto med_heldout = [&](const std::string& label) {
    std::vector<double> v;
    for (const auto* e : rows_for("ablation", label)) v.push_back(e->heldout_success);
    return harness::median(v);
  };
  // Reward comparison under identical (SCAN) exploration; the flow-noise pair
  // is reported alongside.
  const auto dense_iters = med_iters("reward", "dense");
  const auto sparse_iters = med_iters("reward", "sparse");
  const auto flow_dense_iters = med_iters("ablation", "-SCAN");
  const auto flow_sparse_iters = med_iters("ablation", "-SCAN-DR");
  double full_final = 0.0;
  const auto full_rows = rows_for("ablation", "full");
  for (const auto* e : full_rows) full_final += e->outcome.final_train_success.value_or(0.0);
  full_final /= static_cast<double>(full_rows.size());
  const bool a = dense_iters && (!sparse_iters || *dense_iters <= *sparse_iters);
  const double full = med_heldout("full");
  const double dense = med_heldout("-SCAN");
  const double sparse = med_heldout("-SCAN-DR");
  const bool b = full >= dense && dense > sparse;
  const double fusion_on = harness::median(result.pretrained_view_fusion);
  const double fusion_off = harness::median(result.pretrained_view_no_fusion);
  const bool c = fusion_on >= fusion_off;

  double longest = 0.0;
  double total = 0.0;
  for (const auto& e : result.entries) longest = std::max(longest, e.outcome.seconds);
  for (const auto& [key, seconds] : result.run_seconds) total += seconds;
  for (const auto& [key, seconds] : result.pretrain_seconds) total += seconds;
  const double longest_with_pretrain = longest + result.max_pretrain_seconds();
  const bool budget = longest_with_pretrain <= kRunBudgetSeconds && total <= kSuiteBudgetSeconds;

  auto opt = [](const std::optional<double>& v) { return v ? fixed(*v, 1) : std::string("never"); };
  return {a && b && c && budget,
          std::to_string(cfg.seeds.size()) + " seeds. (a) median iterations to " + fixed(cfg.success_threshold, 2) +
              " under SCAN: dense " + opt(dense_iters) + " vs sparse " + opt(sparse_iters) + (a ? " ok" : " FAIL") +
              " (flow noise: dense " + opt(flow_dense_iters) + ", sparse " + opt(flow_sparse_iters) + ")" +
              "; (b) median held-out success full " + fixed(full) + " >= dense-only " + fixed(dense) + " > sparse " +
              fixed(sparse) + (b ? " ok" : " FAIL") + "; (c) pretrained view-bucket success fusion " +
              fixed(fusion_on) + " >= no fusion " + fixed(fusion_off) + (c ? " ok" : " FAIL") +
              "; full-model mean final train-split success " + fixed(full_final) +
              "; longest run incl. pretraining " + fixed(longest_with_pretrain, 0) + " s, suite compute " +
              fixed(total / 3600.0, 2) + " h" + (budget ? " ok" : " OVER BUDGET")};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const fs::path& work) {
  const env::PickPlaceEnv world;
  int mismatches = 0;
  int pairs = 0;
  for (auto regime : {noise::Regime::SDE, noise::Regime::FlowNoise, noise::Regime::SCAN}) {
    for (std::uint64_t seed : {1u, 2u}) {
      train::AgentConfig ac;
      ac.noise.regime = regime;
      train::TrainConfig tc;
      tc.total_steps = 2;
      tc.n_envs = 4;
      tc.max_episode_len = 60;
      tc.batch_size = 64;
      tc.rollout_epochs = 2;
      tc.eval_every = 1;
      tc.eval_episodes = 4;
      tc.checkpoint_every = 1;
      tc.bc_episodes = 4;
      tc.bc_epochs = 1;
      tc.reward.mode = seed == 1 ? phases::RewardMode::Dense : phases::RewardMode::Sparse;
      std::string first;
      std::string first_ckpt;
      for (int run = 0; run < 2; ++run) {
        const fs::path dir = work / (std::string(noise::regime_name(regime)) + "_" + std::to_string(seed) + "_" +
                                     std::to_string(run));
        fs::remove_all(dir);
        train::Agent agent(ac, world.geometry(), seed);
        const auto res = train::train(agent, world, tc, seed, dir);
        const std::string metrics = read_file(dir / "metrics.csv");
        const std::string ckpt = read_file(res.checkpoints.back());
        if (run == 0) {
          first = metrics;
          first_ckpt = ckpt;
        } else if (metrics != first || ckpt != first_ckpt || metrics.empty()) {
          ++mismatches;
        }
      }
      ++pairs;
    }
  }
  fs::remove_all(work);
  return {mismatches == 0, std::to_string(pairs) + " (config, seed) pairs trained twice: metrics/checkpoint files differing " +
                               std::to_string(mismatches)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string config = "configs/trend.yaml";
  std::string sweep_dir = "results/trend";
  std::string work_dir = (fs::temp_directory_path() / "spatialrl_acceptance").string();
  std::vector<int> only;
  app.add_option("--config", config, "Trend-experiment configuration");
  app.add_option("--sweep-dir", sweep_dir, "Sweep directory (resumed if partially present)");
  app.add_option("--work-dir", work_dir, "Scratch directory for the determinism runs");
  app.add_option("--only", only, "Run only these criteria")->take_all();
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient fidelity", 60, gradient_fidelity},
      {2, "reward telescoping", 60, reward_telescoping},
      {3, "phase machine", 120, phase_machine},
      {4, "SCAN floor", 10, scan_floor},
      {5, "regime separation", 10, regime_separation},
      {6, "PPO correctness", 60, ppo_correctness},
      {7, "fusion identity and isolation", 10, fusion_identity},
      {8, "trend reproduction", kSuiteBudgetSeconds, [&] { return trend(config, sweep_dir); }},
      {9, "determinism", 300, [&] { return determinism(work_dir); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // The trend budget applies per training run inside the sweep, not to
    // re-reading its results.
    const bool in_time = c.id == 8 || secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << "; " << fixed(secs, 1)
              << " s" << (c.id == 8 ? "" : " (budget " + fixed(c.budget_seconds, 0) + " s)")
              << (in_time ? "" : " OVER BUDGET") << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
