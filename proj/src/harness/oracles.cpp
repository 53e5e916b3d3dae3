#include "spatialrl/harness/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "spatialrl/diff/adam.hpp"
#include "spatialrl/diff/gradcheck.hpp"
#include "spatialrl/diff/ops.hpp"
#include "spatialrl/env/scripted_controller.hpp"
#include "spatialrl/harness/config.hpp"
#include "spatialrl/harness/evaluation.hpp"
#include "spatialrl/phases/phase_tracker.hpp"
#include "spatialrl/train/trainer.hpp"

namespace spatialrl::harness {

namespace {

using diff::Tensor;

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(12) << v;
  return s.str();
}

class Table {
 public:
  void add(std::string module, std::string check, std::string method, std::string expected, double observed,
           bool pass) {
    rows_.push_back({std::move(module), std::move(check), std::move(method), std::move(expected), num(observed), pass});
  }
  // |observed - expected| <= tol.
  void near(std::string module, std::string check, std::string method, double expected, double observed, double tol) {
    add(std::move(module), std::move(check), std::move(method), num(expected) + " +- " + num(tol), observed,
        std::abs(observed - expected) <= tol);
  }
  std::vector<OracleResult> take() { return std::move(rows_); }

 private:
  std::vector<OracleResult> rows_;
};

train::AgentConfig small_agent(noise::Regime regime) {
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

void randomize(diff::ParameterSet& p, std::initializer_list<const char*> names, std::uint64_t seed, double scale) {
  diff::Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (const char* name : names) {
    for (auto& v : p.get(name).mutable_data()) v = n(rng);
  }
}

void diffcore_oracles(Table& t) {
  const Tensor sp = diff::softplus(Tensor::zeros({1, 1}));
  t.near("diffcore", "softplus(0)", "long double log(2)", static_cast<double>(std::log(2.0L)), sp.item(), 1e-15);

  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    diff::Rng rng(seed);
    diff::ParameterSet p;
    p.add_glorot("w1", 4, 6, rng);
    p.add_filled("b1", {6}, 0.1);
    p.add_glorot("w2", 6, 2, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> xv(12);
    for (auto& v : xv) v = n(rng);
    const Tensor x = Tensor::from({3, 4}, xv);
    auto f = [&] {
      return diff::sum(diff::square(diff::matmul(diff::tanh(diff::linear(x, p.get("w1"), p.get("b1"))), p.get("w2"))));
    };
    worst = std::max(worst, diff::finite_diff_check(f, p.trainable()).max_relative_error);
  }
  t.add("diffcore", "two-layer MLP gradient, 10 seeds", "central differences, step 1e-5", "rel err < 1e-4", worst,
        worst < 1e-4);

  const Tensor z = Tensor::zeros({1, 2});
  const Tensor one = Tensor::filled({1, 2}, 1.0);
  t.near("diffcore", "log N(0; 0, I_2)", "-ln(2 pi) in long double",
         static_cast<double>(-std::log(2.0L * std::numbers::pi_v<long double>)), diff::gaussian_log_prob(z, z, one).item(),
         1e-15);
}

void env_oracles(Table& t) {
  const env::PickPlaceEnv world;
  const auto& g = world.geometry();
  double min_sep = 1e9;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = world.reset(seed, env::Perturbation{0.0, {}, {}, static_cast<int>(seed % 5)});
    std::vector<env::Vec2> pts{s.p_eef, s.p_obj, s.p_dest};
    pts.insert(pts.end(), s.distractors.begin(), s.distractors.end());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t j = i + 1; j < pts.size(); ++j) min_sep = std::min(min_sep, env::distance(pts[i], pts[j]));
    }
  }
  t.add("env", "min pairwise separation, seeds 0..999", "exhaustive sweep", ">= " + num(2.0 * g.grasp_radius), min_sep,
        min_sep >= 2.0 * g.grasp_radius);

  env::WorldState s;
  s.p_eef = {0.0, 0.0};
  s.p_obj = {0.0, 0.0};
  s.p_dest = {0.5, 0.5};
  s = world.step(s, {{0.0, 0.0}, 1.0});
  const env::Vec2 start = s.p_obj;
  s = world.step(s, {{0.1, 0.0}, 1.0});
  s = world.step(s, {{0.1, 0.0}, 1.0});
  t.near("env", "attached object displacement after two (0.1, 0) requests", "hand trace: 2 steps clamped to a_max",
         2.0 * g.a_max, s.p_obj.x - start.x, 1e-12);

  const auto base = world.reset(3, env::Perturbation{0.0, {}, {}, 2});
  const auto ref = world.observe(base, {}).canonical_geometry;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double max_diff = 0.0;
  for (int i = 0; i < 50; ++i) {
    const env::Perturbation view{std::numbers::pi * u(rng), {u(rng), u(rng)}, {}, 0};
    const auto o = world.observe(base, view).canonical_geometry;
    for (std::size_t j = 0; j < o.size(); ++j) max_diff = std::max(max_diff, std::abs(o[j] - ref[j]));
  }
  t.near("env", "canonical geometry change over 50 views", "invariance sweep", 0.0, max_diff, 0.0);

  env::WorldState edge;
  edge.p_dest = {0.0, 0.0};
  edge.p_obj = {0.0, g.dest_radius};
  edge.p_eef = {0.0, 0.23};
  t.add("env", "success with object exactly at dest_radius", "inclusive boundary convention", "1",
        world.is_success(edge) ? 1.0 : 0.0, world.is_success(edge));
}

void phase_oracles(Table& t) {
  env::WorldState s;
  s.p_eef = {0.0, -0.5};
  s.p_obj = {0.0, 0.0};
  s.p_dest = {0.0, 0.5};
  const env::Geometry g;
  phases::RewardConfig cfg;
  phases::PhaseTracker reach(s, g, cfg);
  reach.set_previous(1.0, 1.0);
  t.near("phases", "Reach reward 1.0 -> 0.8, lambda 0.3", "hand evaluation 0.3 * 0.2", 0.3 * 0.2,
         reach.dense_reward({0.8, 1.0}), 1e-12);

  phases::PhaseTracker leave(s, g, cfg);
  auto w = s;
  w.p_obj = w.p_dest;
  w.p_eef = w.p_dest;
  for (int i = 0; i < 5; ++i) {
    w.attached = true;
    leave.update_phase(w);
    leave.dense_reward(leave.normalized_distances(w));
  }
  w.attached = false;
  for (int i = 0; i < 5; ++i) {
    leave.update_phase(w);
    leave.dense_reward(leave.normalized_distances(w));
  }
  leave.set_previous(0.2, 0.0);
  const double r = leave.phase() == phases::Phase::Leave ? leave.dense_reward({0.5, 0.0}) : -1.0;
  t.near("phases", "Leave reward 0.2 -> 0.5, lambda 0.3", "hand evaluation 0.3 * 0.3", 0.3 * 0.3, r, 1e-12);

  phases::PhaseTracker place(s, g, cfg);
  auto p = s;
  double ref_at_entry = -1.0;
  double expected_ref = -1.0;
  for (int i = 1; i <= 6; ++i) {
    p.attached = true;
    p.p_obj = {0.0, 0.02 * i};
    p.p_eef = p.p_obj;
    place.update_phase(p);
    if (place.entry_pending() && ref_at_entry < 0.0) {
      ref_at_entry = place.d_od_ref();
      expected_ref = env::distance(p.p_obj, p.p_dest);
    }
    place.dense_reward(place.normalized_distances(p));
  }
  t.near("phases", "d_od_ref at Place entry", "hand trace of the entry rule", expected_ref, ref_at_entry, 1e-12);
}

void fusion_oracles(Table& t) {
  const fusion::FusionDims dims;
  const env::PickPlaceEnv world;
  diff::ParameterSet params;
  diff::Rng rng(5);
  fusion::init_encoder_params(params, dims, world.geometry(), rng);
  fusion::init_fusion_params(params, dims, rng);
  const auto s = world.reset(9, env::Perturbation{0.0, {}, {}, 1});
  const std::vector<env::Observation> obs{world.observe(s, env::Perturbation{0.3, {0.1, -0.1}, {}, 0}),
                                          world.observe(s, env::Perturbation{-0.4, {-0.05, 0.2}, {}, 0})};
  const auto tokens = fusion::encode_tokens(obs, params, dims);

  auto flat_params = params.snapshot();
  for (const char* name : {"fusion/grid_pos", "fusion/view_embed"}) {
    for (auto& v : flat_params.get(name).mutable_data()) v = 0.0;
  }
  const Tensor flat = Tensor::zeros({1, dims.grid_tokens, dims.channels});
  const Tensor zp = fusion::project_spatial(flat, flat_params, dims, 0);
  bool finite = true;
  for (double v : zp.data()) finite &= std::isfinite(v);
  t.add("fusion", "LayerNorm of a constant token is finite", "evaluate with eps 1e-5", "1", finite ? 1.0 : 0.0, finite);

  double spatial_diff = 0.0;
  const std::size_t per = tokens.spatial_grid.size() / 2;
  for (std::size_t i = 0; i < per; ++i) {
    spatial_diff = std::max(spatial_diff, std::abs(tokens.spatial_grid.at(i) - tokens.spatial_grid.at(per + i)));
  }
  t.near("fusion", "spatial token change across two views", "invariance sweep", 0.0, spatial_diff, 0.0);

  randomize(params, {"fusion/gate", "fusion/mlp_w2", "fusion/mlp_b2"}, 6, 0.5);
  {
    params.zero_grad();
    diff::Tape tape;
    diff::backward(diff::sum(diff::square(fusion::fuse(tokens, params, dims, 0))));
  }
  double spatial_grad = 0.0;
  for (const char* name : {"spatial/w", "spatial/b"}) {
    for (double v : params.get(name).grad()) spatial_grad = std::max(spatial_grad, std::abs(v));
  }
  t.near("fusion", "spatial encoder gradient after backward", "run backward and inspect", 0.0, spatial_grad, 0.0);

  auto altered = tokens;
  altered.spatial_global = Tensor::zeros(tokens.spatial_global.shape());
  const Tensor a = fusion::fuse(tokens, params, dims, 0);
  const Tensor b = fusion::fuse(altered, params, dims, 0);
  double head_diff = 0.0;
  const std::size_t rows = a.dim(1);
  for (std::size_t bi = 0; bi < a.dim(0); ++bi) {
    for (std::size_t r = 0; r < dims.visual_tokens; ++r) {
      for (std::size_t c = 0; c < dims.channels; ++c) {
        const std::size_t i = (bi * rows + r) * dims.channels + c;
        head_diff = std::max(head_diff, std::abs(a.at(i) - b.at(i)));
      }
    }
  }
  t.near("fusion", "fused visual tokens after zeroing global tokens", "ablate and compare", 0.0, head_diff, 0.0);

  const auto before = diff::checksum(params, "spatial/");
  diff::Adam opt(params.trainable(), 1e-2);
  for (int i = 0; i < 100; ++i) {
    opt.zero_grad();
    diff::Tape tape;
    diff::backward(diff::sum(diff::square(fusion::fuse(fusion::encode_tokens(obs, params, dims), params, dims, 0))));
    opt.step();
  }
  const bool frozen = diff::checksum(params, "spatial/") == before;
  t.add("fusion", "frozen encoder checksum after 100 updates", "checksum before and after", "unchanged",
        frozen ? 1.0 : 0.0, frozen);
}

void noise_oracles(Table& t) {
  const noise::NoiseSchedule q{noise::Regime::SCAN, 0.1, 0.1, 80, 0.4, 10.0};
  t.near("noise", "sigma_min(0.9), alpha 0.1", "0.1 * sqrt(0.9 / 0.1) = 0.3", 0.3, noise::sigma_min(0.9, 0, q), 1e-14);
  const noise::NoiseSchedule s;
  const double floor = noise::sigma_min(0.5, 0, s);
  t.near("noise", "SCAN with learned scale on the floor", "floor + log(2) in long double",
         floor + static_cast<double>(std::log(2.0L)), noise::sigma_total(floor, 0.5, 0, 0.25, s), 1e-15);
  const noise::NoiseSchedule unit{noise::Regime::SCAN, 1.0, 0.05, 80, 0.4, 2.0};
  const std::vector<double> half{0.5};
  const long double e = 0.5L * std::log(2.0L * std::numbers::pi_v<long double> * std::numbers::e_v<long double>);
  t.near("noise", "entropy floor per unit-scale increment", "0.5 ln(2 pi e) in long double", static_cast<double>(e),
         noise::effective_entropy_floor(unit, 0, 1, half), 1e-15);
}

void policy_oracles(Table& t) {
  const env::PickPlaceEnv world;
  train::Agent agent(small_agent(noise::Regime::SCAN), world.geometry(), 2);
  randomize(agent.params(), {"policy/sigma_w2"}, 3, 0.3);
  const auto s = world.reset(4, {});
  const std::vector<env::Observation> obs{world.observe(s, {})};
  const Tensor h = agent.tokens(obs, agent.params());
  const auto sample = agent.policy().sample_actions(agent.params(), h, 0, 3).front();
  double worst = 0.0;
  for (std::size_t i = 0; i < sample.means.size(); ++i) {
    const double mu = sample.means[i][0];
    const double sigma = sample.scales[i][0];
    const int n = 20000;
    const double lo = mu - 12.0 * sigma;
    const double step = 24.0 * sigma / n;
    double acc = 0.0;
    for (int j = 0; j <= n; ++j) {
      const double z = (lo + j * step - mu) / sigma;
      const double w = (j == 0 || j == n) ? 1.0 : (j % 2 ? 4.0 : 2.0);
      acc += w * std::exp(-0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma) - 0.5 * z * z);
    }
    worst = std::max(worst, std::abs(acc * step / 3.0 - 1.0));
  }
  t.near("policy", "increment density integral", "composite Simpson quadrature", 0.0, worst, 1e-6);

  for (auto regime : {noise::Regime::SDE, noise::Regime::FlowNoise, noise::Regime::SCAN}) {
    train::Agent a(small_agent(regime), world.geometry(), 5);
    randomize(a.params(), {"policy/sigma_w2"}, 6, 0.3);
    const Tensor ha = a.tokens(obs, a.params());
    const auto samples = a.policy().sample_actions(a.params(), ha, 10, 8);
    a.params().zero_grad();
    {
      diff::Tape tape;
      diff::backward(diff::sum(a.policy().log_prob_under(a.params(), {&samples[0]}, ha)));
    }
    double g = 0.0;
    for (const auto& [name, p] : a.params().entries()) {
      if (!name.starts_with("policy/sigma_")) continue;
      for (double v : p.grad()) g = std::max(g, std::abs(v));
    }
    const bool sde = regime == noise::Regime::SDE;
    t.add("policy", std::string("max |grad| of noise head, ") + std::string(noise::regime_name(regime)),
          "backward and inspect", sde ? "0" : "> 0", g, sde ? g == 0.0 : g > 0.0);
  }

  randomize(agent.params(), {"value/w3", "value/b3"}, 9, 0.3);
  auto vf = [&] { return diff::sum(diff::square(agent.policy().value(agent.params(), h))); };
  const double ve = diff::finite_diff_check(vf, agent.critic_parameters()).max_relative_error;
  t.add("policy", "value net gradient", "central differences, step 1e-5", "rel err < 1e-4", ve, ve < 1e-4);
}

void train_oracles(Table& t) {
  train::GaeInput two{{0.0, 1.0}, {0.0, 0.0}, {false, true}, {false, true}, {0.0, 0.0}};
  const auto g = train::compute_gae(two, 0.99, 0.95, false);
  t.near("train", "GAE A_0 for rewards (0, 1)", "hand expansion 0.99 * 0.95", 0.99 * 0.95, g.raw_advantages[0], 1e-15);

  const env::PickPlaceEnv world;
  train::Agent agent(small_agent(noise::Regime::SCAN), world.geometry(), 4);
  train::TrainConfig tc;
  tc.n_envs = 1;
  tc.max_episode_len = 240;
  const env::ScriptedController expert(world.geometry());
  train::RolloutRequest req;
  req.seed = 9;
  req.override_action = [&](const env::WorldState& s) { return expert.act(s); };
  const auto buf = train::collect_rollouts(agent, agent.params(), world, tc, req);
  const double last = buf.transitions.empty() ? 0.0 : buf.transitions.back().reward;
  const bool ok = buf.episodes.size() == 1 && buf.episodes[0].success && last >= 1.0;
  t.add("train", "scripted rollout terminal reward", "run the scripted controller", ">= 1 with success", last, ok);

  double worst_drop = -std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    train::Agent a(small_agent(noise::Regime::SCAN), world.geometry(), seed);
    train::TrainConfig c;
    c.n_envs = 3;
    c.max_episode_len = 20;
    c.lr_policy = 1e-6;
    c.rollout_epochs = 1;
    c.batch_size = 100000;
    train::RolloutRequest r;
    r.seed = seed + 10;
    const auto b = train::collect_rollouts(a, a.params(), world, c, r);
    const auto gae = train::compute_gae(train::gae_input(b), c.gamma, c.gae_lambda);
    train::Optimizers opt(a, c);
    diff::Rng rng(seed);
    const auto d = train::ppo_update(a, opt, b, gae, c, rng);
    worst_drop = std::max(worst_drop, d.aborted ? 1.0 : d.surrogate_before - d.surrogate_after);
  }
  t.add("train", "surrogate drop after one small step", "run and assert", "<= 0", worst_drop, worst_drop <= 0.0);
}

void harness_oracles(Table& t) {
  ExperimentConfig cfg;
  cfg.eval.episodes = 100;
  const std::uint64_t seeds[] = {1};
  const env::Perturbation none;
  const EvalBucket zero[] = {{"none", none}};
  const ActorFactory scripted = [&](std::uint64_t, int) { return scripted_actor(cfg.geometry); };
  const auto rs = evaluate(cfg, scripted, seeds, zero, 100);
  t.near("harness", "scripted controller success, no perturbation", "scripted-controller run", 1.0, rs.mean, 0.0);

  train::Agent agent(cfg.agent, cfg.geometry, 1);
  const ActorFactory untrained = [&](std::uint64_t s, int epoch) {
    return train::policy_actor(agent, agent.params(), train::derive_seed(s, 701, static_cast<std::uint64_t>(epoch)));
  };
  const auto ru = evaluate(cfg, untrained, seeds, cfg.eval.buckets, 100);
  t.add("harness", "untrained policy success, 100 episodes", "measured random baseline", "< 0.05", ru.mean,
        ru.mean < 0.05);
}

}  // namespace

std::vector<OracleResult> run_oracles() {
  Table t;
  diffcore_oracles(t);
  env_oracles(t);
  phase_oracles(t);
  fusion_oracles(t);
  noise_oracles(t);
  policy_oracles(t);
  train_oracles(t);
  harness_oracles(t);
  return t.take();
}

void print_oracle_table(std::ostream& os, const std::vector<OracleResult>& rows) {
  std::size_t wm = 6, wc = 5, wh = 6, we = 8;
  for (const auto& r : rows) {
    wm = std::max(wm, r.module.size());
    wc = std::max(wc, r.check.size());
    wh = std::max(wh, r.method.size());
    we = std::max(we, r.expected.size());
  }
  auto cell = [&](const std::string& s, std::size_t w) { os << std::left << std::setw(static_cast<int>(w) + 2) << s; };
  cell("module", wm);
  cell("check", wc);
  cell("oracle", wh);
  cell("expected", we);
  cell("observed", 20);
  os << "status\n";
  int passed = 0;
  for (const auto& r : rows) {
    cell(r.module, wm);
    cell(r.check, wc);
    cell(r.method, wh);
    cell(r.expected, we);
    cell(r.observed, 20);
    os << (r.pass ? "PASS" : "FAIL") << '\n';
    passed += r.pass ? 1 : 0;
  }
  os << passed << "/" << rows.size() << " oracle checks passed\n";
}

}  // namespace spatialrl::harness
