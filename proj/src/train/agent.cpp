#include "spatialrl/train/agent.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace spatialrl::train {

Agent::Agent(const AgentConfig& cfg, const env::Geometry& geometry, std::uint64_t seed)
    : cfg_(cfg), policy_(cfg.policy, cfg.fusion, cfg.noise) {
  if (cfg_.view_id >= cfg_.fusion.views) throw std::invalid_argument("AgentConfig: view_id out of range");
  diff::Rng rng(seed);
  fusion::init_encoder_params(params_, cfg_.fusion, geometry, rng);
  fusion::init_fusion_params(params_, cfg_.fusion, rng);
  policy::init_policy_params(params_, cfg_.policy, cfg_.fusion, rng);
  policy::init_value_params(params_, cfg_.policy, cfg_.fusion, rng);
}

diff::Tensor Agent::tokens(std::span<const env::Observation> obs, const diff::ParameterSet& params) const {
  const auto set = fusion::encode_tokens(obs, params, cfg_.fusion);
  return fusion::fuse(set, params, cfg_.fusion, cfg_.view_id, cfg_.fusion_enabled);
}

std::vector<diff::Tensor> Agent::actor_parameters() const {
  std::vector<diff::Tensor> out;
  for (const auto& [name, t] : params_.entries()) {
    if (!t.requires_grad() || name.starts_with("value/")) continue;
    // Fusion weights are inert when fusion is disabled.
    if (!cfg_.fusion_enabled && name.starts_with("fusion/")) continue;
    out.push_back(t);
  }
  return out;
}

std::vector<diff::Tensor> Agent::critic_parameters() const { return params_.with_prefix("value/"); }

PerturbationRange training_range() {
  return {10.0 * std::numbers::pi / 180.0, 0.05, 0.05, 0, 2};
}

bool PerturbationRange::contains(const env::Perturbation& p) const {
  auto within = [](double v, double m) { return std::abs(v) <= m; };
  return within(p.view_rotation, rotation_max) && within(p.view_translation.x, translation_max) &&
         within(p.view_translation.y, translation_max) && within(p.init_shift.x, shift_max) &&
         within(p.init_shift.y, shift_max) && p.clutter_count >= clutter_min && p.clutter_count <= clutter_max;
}

env::Perturbation sample_perturbation(const PerturbationRange& range, diff::Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> clutter(range.clutter_min, range.clutter_max);
  env::Perturbation p;
  p.view_rotation = range.rotation_max * u(rng);
  p.view_translation = {range.translation_max * u(rng), range.translation_max * u(rng)};
  p.init_shift = {range.shift_max * u(rng), range.shift_max * u(rng)};
  p.clutter_count = clutter(rng);
  return p;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t s = mix(base);
  s = mix(s ^ a);
  s = mix(s ^ b);
  return mix(s ^ c);
}

}  // namespace spatialrl::train
