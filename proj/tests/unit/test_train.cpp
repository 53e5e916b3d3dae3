#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "spatialrl/diff/gradcheck.hpp"
#include "spatialrl/diff/ops.hpp"
#include "spatialrl/env/scripted_controller.hpp"
#include "spatialrl/train/trainer.hpp"

using namespace spatialrl;
using namespace spatialrl::train;
using diff::Tensor;

namespace {

AgentConfig small_agent(noise::Regime regime = noise::Regime::SCAN) {
  AgentConfig ac;
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

TrainConfig small_train() {
  TrainConfig tc;
  tc.n_envs = 3;
  tc.max_episode_len = 20;
  tc.batch_size = 16;
  tc.rollout_epochs = 2;
  tc.total_steps = 2;
  tc.lr_policy = 1e-3;
  tc.eval_every = 1;
  tc.eval_episodes = 3;
  tc.bc_episodes = 2;
  tc.bc_epochs = 2;
  tc.bc_batch = 32;
  return tc;
}

// Direct double sum over each episode.
std::vector<double> brute_force_gae(const GaeInput& in, double gamma, double lambda) {
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

GaeInput random_episodes(std::mt19937_64& rng, int episodes) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> len(1, 20);
  GaeInput in;
  for (int e = 0; e < episodes; ++e) {
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
  }
  return in;
}

}  // namespace

TEST_CASE("GAE hand examples") {
  GaeInput one{{1.0}, {0.0}, {true}, {true}, {0.0}};
  const auto g1 = compute_gae(one, 0.99, 0.95, false);
  CHECK(g1.raw_advantages[0] == 1.0);
  CHECK(g1.returns[0] == 1.0);

  GaeInput two{{0.0, 1.0}, {0.0, 0.0}, {false, true}, {false, true}, {0.0, 0.0}};
  const auto g2 = compute_gae(two, 0.99, 0.95, false);
  CHECK(g2.raw_advantages[0] == doctest::Approx(0.9405).epsilon(1e-15));
  CHECK(g2.raw_advantages[1] == 1.0);

  std::mt19937_64 rng(3);
  const auto in = random_episodes(rng, 5);
  const auto td0 = compute_gae(in, 0.9, 0.0, false);
  for (std::size_t i = 0; i < in.rewards.size(); ++i) {
    const double next = in.last[i] ? (in.done[i] ? 0.0 : in.bootstrap[i]) : in.values[i + 1];
    CHECK(td0.raw_advantages[i] == in.rewards[i] + 0.9 * next - in.values[i]);
  }
}

TEST_CASE("GAE recursion matches the brute-force double sum") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const auto in = random_episodes(rng, 1 + trial % 4);
    const auto fast = compute_gae(in, 0.99, 0.95, false);
    const auto slow = brute_force_gae(in, 0.99, 0.95);
    for (std::size_t i = 0; i < slow.size(); ++i) REQUIRE(std::abs(fast.raw_advantages[i] - slow[i]) <= 1e-10);
  }
}

TEST_CASE("advantage normalization gives zero mean and unit deviation") {
  std::mt19937_64 rng(12);
  const auto in = random_episodes(rng, 10);
  const auto g = compute_gae(in, 0.99, 0.95);
  const double n = static_cast<double>(g.advantages.size());
  const double mean = std::accumulate(g.advantages.begin(), g.advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : g.advantages) var += (a - mean) * (a - mean);
  CHECK(std::abs(mean) < 1e-10);
  CHECK(std::abs(std::sqrt(var / n) - 1.0) < 1e-6);
}

TEST_CASE("clipped surrogate takes the pessimistic branch") {
  const Tensor ratio = Tensor::from({6}, {0.5, 1.5, 0.5, 1.5, 1.1, 0.9});
  const Tensor adv = Tensor::from({6}, {1.0, 1.0, -1.0, -1.0, 2.0, -3.0});
  const Tensor s = clipped_surrogate(ratio, adv, 0.2);
  const double expected[] = {0.5, 1.2, -0.8, -1.5, 2.2, -2.7};
  for (std::size_t i = 0; i < 6; ++i) {
    const double r = ratio.at(i);
    const double a = adv.at(i);
    const double direct = std::min(r * a, std::clamp(r, 0.8, 1.2) * a);
    CHECK(s.at(i) == doctest::Approx(expected[i]).epsilon(1e-15));
    CHECK(s.at(i) == direct);
  }
}

TEST_CASE("collection is deterministic, and the scripted override succeeds") {
  env::PickPlaceEnv world;
  Agent agent(small_agent(), world.geometry(), 4);
  TrainConfig tc = small_train();
  RolloutRequest req;
  req.seed = 9;
  req.train_step = 3;
  const auto a = collect_rollouts(agent, agent.params(), world, tc, req);
  const auto b = collect_rollouts(agent, agent.params(), world, tc, req);
  REQUIRE(a.transitions.size() == b.transitions.size());
  for (std::size_t i = 0; i < a.transitions.size(); ++i) {
    CHECK(a.transitions[i].reward == b.transitions[i].reward);
    CHECK(a.transitions[i].sample.log_prob == b.transitions[i].sample.log_prob);
    CHECK(a.transitions[i].obs.features == b.transitions[i].obs.features);
    CHECK(std::isfinite(a.transitions[i].sample.log_prob));
  }
  std::size_t total = 0;
  for (const auto& e : a.episodes) total += static_cast<std::size_t>(e.length);
  CHECK(total == a.transitions.size());

  env::ScriptedController expert(world.geometry());
  tc.n_envs = 1;
  tc.max_episode_len = 240;
  req.override_action = [&](const env::WorldState& s) { return expert.act(s); };
  const auto scripted = collect_rollouts(agent, agent.params(), world, tc, req);
  REQUIRE(scripted.episodes.size() == 1);
  CHECK(scripted.episodes[0].success);
  CHECK(scripted.transitions.back().done);
  CHECK(scripted.transitions.back().reward >= 1.0);
  CHECK(scripted.episodes[0].phase_steps[2] > 0);
}

TEST_CASE("sparse collection gives episode returns in {0, 1}") {
  env::PickPlaceEnv world;
  Agent agent(small_agent(), world.geometry(), 5);
  TrainConfig tc = small_train();
  tc.reward.mode = phases::RewardMode::Sparse;
  tc.n_envs = 8;
  tc.max_episode_len = 240;
  env::ScriptedController expert(world.geometry());
  RolloutRequest req;
  req.seed = 2;
  for (int variant = 0; variant < 2; ++variant) {
    if (variant == 1) req.override_action = [&](const env::WorldState& s) { return expert.act(s); };
    const auto buf = collect_rollouts(agent, agent.params(), world, tc, req);
    for (const auto& e : buf.episodes) CHECK((e.total_reward == 0.0 || e.total_reward == 1.0));
  }
}

TEST_CASE("PPO ratios are exactly one at the generating parameters") {
  for (auto regime : {noise::Regime::SDE, noise::Regime::FlowNoise, noise::Regime::SCAN}) {
    env::PickPlaceEnv world;
    Agent agent(small_agent(regime), world.geometry(), 6);
    TrainConfig tc = small_train();
    RolloutRequest req;
    req.seed = 1;
    req.train_step = 7;
    const auto buf = collect_rollouts(agent, agent.params(), world, tc, req);
    std::vector<std::size_t> idx(buf.transitions.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), std::mt19937_64(2));
    const Tensor r = ratios(agent, agent.params(), buf, idx);
    for (double v : r.data()) CHECK(std::abs(v - 1.0) <= 1e-12);
    const auto gae = compute_gae(gae_input(buf), tc.gamma, tc.gae_lambda);
    const double mean_adv = std::accumulate(gae.advantages.begin(), gae.advantages.end(), 0.0) / gae.advantages.size();
    CHECK(mean_surrogate(agent, agent.params(), buf, gae.advantages, tc) == doctest::Approx(mean_adv).scale(1.0).epsilon(1e-12));
  }
}

TEST_CASE("one small update does not decrease the clipped surrogate and clips gradients") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    env::PickPlaceEnv world;
    Agent agent(small_agent(), world.geometry(), seed);
    TrainConfig tc = small_train();
    tc.lr_policy = 1e-6;
    tc.rollout_epochs = 1;
    tc.batch_size = 100000;
    RolloutRequest req;
    req.seed = seed + 10;
    const auto buf = collect_rollouts(agent, agent.params(), world, tc, req);
    const auto gae = compute_gae(gae_input(buf), tc.gamma, tc.gae_lambda);
    Optimizers opt(agent, tc);
    diff::Rng rng(seed);
    const auto d = ppo_update(agent, opt, buf, gae, tc, rng);
    REQUIRE_FALSE(d.aborted);
    CHECK(d.minibatches == 1);
    CHECK(d.surrogate_after >= d.surrogate_before);
    CHECK(d.clipped_grad_norm <= tc.grad_clip + 1e-9);
  }
}

TEST_CASE("non-finite loss rolls parameters back bit-exactly") {
  env::PickPlaceEnv world;
  Agent agent(small_agent(), world.geometry(), 8);
  TrainConfig tc = small_train();
  RolloutRequest req;
  req.seed = 4;
  auto buf = collect_rollouts(agent, agent.params(), world, tc, req);
  auto gae = compute_gae(gae_input(buf), tc.gamma, tc.gae_lambda);
  Optimizers opt(agent, tc);
  diff::Rng rng(1);
  // A first good update gives the optimizers non-trivial moments.
  REQUIRE_FALSE(ppo_update(agent, opt, buf, gae, tc, rng).aborted);
  const auto before = agent.params().snapshot();
  const auto moments = opt.actor.state();
  gae.returns[1] = std::numeric_limits<double>::infinity();
  const auto d = ppo_update(agent, opt, buf, gae, tc, rng);
  CHECK(d.aborted);
  CHECK_FALSE(d.abort_reason.empty());
  CHECK(agent.params().values_equal(before));
  CHECK(opt.actor.state().step == moments.step);
  CHECK(opt.actor.state().m == moments.m);
}

TEST_CASE("full surrogate gradient on a four-transition batch matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    env::PickPlaceEnv world;
    Agent agent(small_agent(), world.geometry(), seed);
    auto& p = agent.params();
    diff::Rng rng(seed + 1);
    std::normal_distribution<double> n(0.0, 0.3);
    for (const char* name : {"fusion/gate", "fusion/mlp_w2", "policy/sigma_w2", "value/w3"}) {
      for (auto& v : p.get(name).mutable_data()) v = n(rng);
    }
    TrainConfig tc = small_train();
    tc.n_envs = 1;
    tc.max_episode_len = 4;
    RolloutRequest req;
    req.seed = seed;
    const auto buf = collect_rollouts(agent, p, world, tc, req);
    REQUIRE(buf.transitions.size() == 4);
    const auto gae = compute_gae(gae_input(buf), tc.gamma, tc.gae_lambda);
    // Move away from the generating parameters so ratios differ from 1
    // but stay inside the clip range.
    for (auto& t : agent.actor_parameters()) {
      for (auto& v : t.mutable_data()) v += 1e-3 * n(rng);
    }
    const std::size_t idx[] = {0, 1, 2, 3};
    // The critic reads detached tokens, so each group is checked against its
    // own term of the objective.
    auto policy_fn = [&] { return minibatch_loss(agent, p, buf, gae, idx, tc).policy; };
    auto value_fn = [&] { return minibatch_loss(agent, p, buf, gae, idx, tc).value; };
    CHECK(diff::finite_diff_check(policy_fn, agent.actor_parameters()).max_relative_error < 1e-3);
    CHECK(diff::finite_diff_check(value_fn, agent.critic_parameters()).max_relative_error < 1e-3);
  }
}

TEST_CASE("training writes metrics and checkpoints and is reproducible") {
  env::PickPlaceEnv world;
  const TrainConfig tc = small_train();
  const auto dir = std::filesystem::temp_directory_path() / "spatialrl_test_train";
  std::filesystem::remove_all(dir);
  auto run = [&](const std::string& name) {
    Agent agent(small_agent(), world.geometry(), 3);
    const auto res = spatialrl::train::train(agent, world, tc, 3, dir / name);
    std::ifstream in(dir / name / "metrics.csv", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return std::make_pair(res, ss.str());
  };
  const auto [r1, m1] = run("a");
  const auto [r2, m2] = run("b");
  CHECK(m1 == m2);
  CHECK(m1.rfind(metrics_header() + "\n", 0) == 0);
  CHECK(std::count(m1.begin(), m1.end(), '\n') == 3);
  CHECK(r1.checkpoints.size() == 2);
  for (const auto& p : r1.checkpoints) CHECK(std::filesystem::exists(p));
  CHECK(r1.pretrain.demo_transitions > 0);
  std::filesystem::remove_all(dir);
}
