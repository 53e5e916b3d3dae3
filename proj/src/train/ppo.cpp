#include "spatialrl/train/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spatialrl/diff/ops.hpp"

namespace spatialrl::train {

using diff::Tensor;

namespace {

struct Batch {
  std::vector<env::Observation> obs;
  std::vector<const policy::ActionSample*> samples;
  std::vector<double> old_log_prob;
};

Batch gather(const RolloutBuffer& buffer, std::span<const std::size_t> indices) {
  Batch b;
  for (std::size_t i : indices) {
    const auto& t = buffer.transitions.at(i);
    b.obs.push_back(t.obs);
    b.samples.push_back(&t.sample);
    b.old_log_prob.push_back(t.sample.log_prob);
  }
  return b;
}

Tensor pick(const std::vector<double>& v, std::span<const std::size_t> indices) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(v.at(i));
  return Tensor::from({indices.size()}, std::move(out));
}

bool all_finite(const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

}  // namespace

Optimizers::Optimizers(Agent& agent, const TrainConfig& cfg)
    : actor(agent.actor_parameters(), cfg.lr_policy), critic(agent.critic_parameters(), cfg.lr_value) {}

Tensor clipped_surrogate(const Tensor& ratio, const Tensor& advantages, double clip_ratio) {
  const Tensor unclipped = ratio * advantages;
  const Tensor clipped = diff::clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * advantages;
  return diff::minimum(unclipped, clipped);
}

Tensor ratios(const Agent& agent, const diff::ParameterSet& params, const RolloutBuffer& buffer,
              std::span<const std::size_t> indices) {
  const Batch b = gather(buffer, indices);
  const Tensor h = agent.tokens(b.obs, params);
  const Tensor lp = agent.policy().log_prob_under(params, b.samples, h);
  return diff::exp(lp - Tensor::from({indices.size()}, b.old_log_prob));
}

double mean_surrogate(const Agent& agent, const diff::ParameterSet& params, const RolloutBuffer& buffer,
                      const std::vector<double>& advantages, const TrainConfig& cfg) {
  const std::size_t n = buffer.transitions.size();
  if (n == 0) return 0.0;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += cfg.batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + cfg.batch_size); ++i) idx.push_back(i);
    const Tensor s = clipped_surrogate(ratios(agent, params, buffer, idx), pick(advantages, idx), cfg.clip_ratio);
    total += diff::sum(s).item();
  }
  return total / static_cast<double>(n);
}

MinibatchLoss minibatch_loss(const Agent& agent, const diff::ParameterSet& params, const RolloutBuffer& buffer,
                             const GaeResult& gae, std::span<const std::size_t> indices, const TrainConfig& cfg) {
  const Batch b = gather(buffer, indices);
  const Tensor h = agent.tokens(b.obs, params);
  const Tensor lp = agent.policy().log_prob_under(params, b.samples, h);
  MinibatchLoss out;
  out.ratio = diff::exp(lp - Tensor::from({indices.size()}, b.old_log_prob));
  const Tensor surrogate = clipped_surrogate(out.ratio, pick(gae.advantages, indices), cfg.clip_ratio);
  const Tensor value_error = agent.policy().value(params, h) - pick(gae.returns, indices);
  out.policy = -diff::mean(surrogate);
  out.value = diff::mean(diff::square(value_error));
  out.total = out.value + out.policy;
  return out;
}

PpoDiagnostics ppo_update(Agent& agent, Optimizers& opt, const RolloutBuffer& buffer, const GaeResult& gae,
                          const TrainConfig& cfg, diff::Rng& rng) {
  PpoDiagnostics diag;
  const std::size_t n = buffer.transitions.size();
  if (n == 0) throw std::invalid_argument("ppo_update: empty buffer");
  if (gae.advantages.size() != n || gae.returns.size() != n) {
    throw std::invalid_argument("ppo_update: advantage count differs from buffer size");
  }

  const diff::ParameterSet saved = agent.params().snapshot();
  const auto actor_state = opt.actor.state();
  const auto critic_state = opt.critic.state();
  auto abort = [&](std::string reason) {
    agent.params().assign_from(saved);
    opt.actor.restore(actor_state);
    opt.critic.restore(critic_state);
    agent.params().zero_grad();
    diag.aborted = true;
    diag.abort_reason = std::move(reason);
    return diag;
  };

  for (double a : gae.advantages) {
    if (!std::isfinite(a)) return abort("non-finite advantage");
  }
  diag.surrogate_before = mean_surrogate(agent, agent.params(), buffer, gae.advantages, cfg);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double ratio_sum = 0.0;
  double kl_sum = 0.0;
  double clipped = 0.0;
  double loss_sum = 0.0;
  std::size_t seen = 0;
  for (int epoch = 0; epoch < cfg.rollout_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
      opt.actor.zero_grad();
      opt.critic.zero_grad();
      double loss_value = 0.0;
      {
        diff::Tape tape;
        const auto loss = minibatch_loss(agent, agent.params(), buffer, gae, idx, cfg);
        loss_value = loss.total.item();
        if (!std::isfinite(loss_value)) return abort("non-finite loss");
        for (double r : loss.ratio.data()) {
          ratio_sum += r;
          kl_sum += (r - 1.0) - std::log(r);
          clipped += std::abs(r - 1.0) > cfg.clip_ratio ? 1.0 : 0.0;
        }
        seen += idx.size();
        diff::backward(loss.total);
      }
      if (!all_finite(opt.actor.params()) || !all_finite(opt.critic.params())) return abort("non-finite gradient");
      const double actor_norm = diff::clip_grad_norm(opt.actor.params(), cfg.grad_clip);
      diff::clip_grad_norm(opt.critic.params(), cfg.grad_clip);
      diag.actor_grad_norm = std::max(diag.actor_grad_norm, actor_norm);
      diag.clipped_grad_norm = std::max(diag.clipped_grad_norm, diff::grad_norm(opt.actor.params()));
      diag.clipped_grad_norm = std::max(diag.clipped_grad_norm, diff::grad_norm(opt.critic.params()));
      opt.actor.step();
      opt.critic.step();
      ++diag.minibatches;
      loss_sum += loss_value;
    }
  }
  agent.params().zero_grad();
  diag.mean_ratio = ratio_sum / static_cast<double>(seen);
  diag.approx_kl = kl_sum / static_cast<double>(seen);
  diag.clip_fraction = clipped / static_cast<double>(seen);
  diag.mean_loss = loss_sum / std::max(1, diag.minibatches);
  diag.surrogate_after = mean_surrogate(agent, agent.params(), buffer, gae.advantages, cfg);
  if (!std::isfinite(diag.surrogate_after)) return abort("non-finite surrogate after update");
  return diag;
}

}  // namespace spatialrl::train
