#include "spatialrl/harness/evaluation.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "spatialrl/diff/checkpoint.hpp"
#include "spatialrl/env/scripted_controller.hpp"

namespace spatialrl::harness {

std::vector<PlannedEpisode> make_eval_plan(std::span<const EvalBucket> buckets, int n_episodes, int sampling_epochs,
                                           std::uint64_t seed) {
  if (buckets.empty()) throw std::invalid_argument("make_eval_plan: no buckets");
  if (n_episodes < 1 || sampling_epochs < 1 || sampling_epochs > n_episodes) {
    throw std::invalid_argument("make_eval_plan: need 1 <= sampling_epochs <= n_episodes");
  }
  std::vector<PlannedEpisode> plan(static_cast<std::size_t>(n_episodes));
  for (std::size_t i = 0; i < plan.size(); ++i) {
    auto& p = plan[i];
    p.bucket = i % buckets.size();
    p.epoch = static_cast<int>(i * static_cast<std::size_t>(sampling_epochs) / plan.size());
    p.spec.seed = train::derive_seed(seed, 700, i);
    p.spec.pert = buckets[p.bucket].pert;
  }
  return plan;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["seeds"] = seeds;
  j["per_seed_success"] = per_seed;
  j["mean"] = mean;
  j["std"] = std;
  j["episodes_per_seed"] = episodes_per_seed;
  auto& b = j["buckets"] = nlohmann::json::array();
  for (const auto& r : buckets) {
    b.push_back({{"name", r.name}, {"episodes", r.episodes}, {"successes", r.successes},
                 {"success_rate", r.success_rate}});
  }
  return j;
}

EvalReport evaluate(const ExperimentConfig& cfg, const ActorFactory& make_actor, std::span<const std::uint64_t> seeds,
                    std::span<const EvalBucket> buckets, int n_episodes) {
  if (seeds.empty()) throw std::invalid_argument("evaluate: no seeds");
  const env::PickPlaceEnv world(cfg.geometry);
  const int epochs = std::min(cfg.eval.sampling_epochs, n_episodes);
  EvalReport report;
  report.episodes_per_seed = n_episodes;
  report.buckets.resize(buckets.size());
  for (std::size_t b = 0; b < buckets.size(); ++b) report.buckets[b].name = buckets[b].name;

  for (const auto seed : seeds) {
    const auto plan = make_eval_plan(buckets, n_episodes, epochs, seed);
    int successes = 0;
    for (int e = 0; e < epochs; ++e) {
      std::vector<train::EpisodeSpec> specs;
      std::vector<std::size_t> bucket_of;
      for (const auto& p : plan) {
        if (p.epoch != e) continue;
        specs.push_back(p.spec);
        bucket_of.push_back(p.bucket);
      }
      const auto ok = train::run_episodes(world, specs, cfg.train.max_episode_len, make_actor(seed, e));
      for (std::size_t i = 0; i < ok.size(); ++i) {
        auto& br = report.buckets[bucket_of[i]];
        ++br.episodes;
        if (ok[i]) {
          ++br.successes;
          ++successes;
        }
      }
    }
    report.seeds.push_back(seed);
    report.per_seed.push_back(static_cast<double>(successes) / static_cast<double>(n_episodes));
  }
  for (auto& br : report.buckets) {
    br.success_rate = br.episodes ? static_cast<double>(br.successes) / static_cast<double>(br.episodes) : 0.0;
  }
  double sum = 0.0;
  for (double r : report.per_seed) sum += r;
  const double n = static_cast<double>(report.per_seed.size());
  report.mean = sum / n;
  if (report.per_seed.size() > 1) {
    double ss = 0.0;
    for (double r : report.per_seed) ss += (r - report.mean) * (r - report.mean);
    report.std = std::sqrt(ss / (n - 1.0));
  }
  return report;
}

train::BatchActor scripted_actor(const env::Geometry& geometry) {
  const env::ScriptedController expert(geometry);
  return [expert](std::span<const env::WorldState> states, std::span<const env::Observation>, std::size_t, int) {
    std::vector<env::Action> actions;
    actions.reserve(states.size());
    for (const auto& s : states) actions.push_back(expert.act(s));
    return actions;
  };
}

EvalReport evaluate_checkpoints(const ExperimentConfig& cfg, std::span<const SeedCheckpoint> runs,
                                std::span<const EvalBucket> buckets, int n_episodes) {
  std::vector<std::uint64_t> seeds;
  std::vector<std::unique_ptr<train::Agent>> agents;
  for (const auto& r : runs) {
    auto agent = std::make_unique<train::Agent>(cfg.agent, cfg.geometry, r.seed);
    try {
      diff::load_checkpoint(r.checkpoint, agent->params());
    } catch (const std::exception& e) {
      throw std::invalid_argument("evaluate_checkpoints: " + r.checkpoint.string() + " does not match the config: " +
                                  e.what());
    }
    seeds.push_back(r.seed);
    agents.push_back(std::move(agent));
  }
  const ActorFactory factory = [&](std::uint64_t seed, int epoch) {
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (seeds[i] == seed) {
        return train::policy_actor(*agents[i], agents[i]->params(), train::derive_seed(seed, 701, static_cast<std::uint64_t>(epoch)));
      }
    }
    throw std::logic_error("evaluate_checkpoints: unknown seed");
  };
  return evaluate(cfg, factory, seeds, buckets, n_episodes);
}

std::vector<EvalBucket> view_buckets(std::span<const EvalBucket> buckets) {
  std::vector<EvalBucket> out;
  for (const auto& b : buckets) {
    const auto& p = b.pert;
    if (p.init_shift == env::Vec2{} && p.clutter_count == 0) out.push_back(b);
  }
  return out;
}

}  // namespace spatialrl::harness
