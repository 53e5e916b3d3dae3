#include "spatialrl/policy/flow_policy.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "spatialrl/diff/ops.hpp"

namespace spatialrl::policy {

using diff::Tensor;

namespace {

Tensor column(std::size_t rows, double value) { return Tensor::filled({rows, 1}, value); }

Tensor rows_to_tensor(const std::vector<const ActionSample*>& samples, std::size_t step, std::size_t dim) {
  std::vector<double> v;
  v.reserve(samples.size() * dim);
  for (const auto* s : samples) v.insert(v.end(), s->flow_path[step].begin(), s->flow_path[step].end());
  return Tensor::from({samples.size(), dim}, std::move(v));
}

}  // namespace

void PolicyDims::validate() const {
  if (action_dim != 3) throw std::invalid_argument("PolicyDims: action_dim must be 3 (dx, dy, gripper)");
  if (cond_width == 0 || hidden == 0) throw std::invalid_argument("PolicyDims: widths must be positive");
  if (flow_steps < 1) throw std::invalid_argument("PolicyDims: flow_steps must be >= 1");
  if (!(sigma_init > 0.0)) throw std::invalid_argument("PolicyDims: sigma_init must be > 0");
  if (!(a_max > 0.0)) throw std::invalid_argument("PolicyDims: a_max must be > 0");
}

void init_policy_params(diff::ParameterSet& params, const PolicyDims& dims, const fusion::FusionDims& fdims,
                        diff::Rng& rng) {
  dims.validate();
  const std::size_t flat = fdims.fused_tokens() * fdims.channels;
  const std::size_t a = dims.action_dim;
  params.add_glorot("policy/cond_w", flat, dims.cond_width, rng);
  params.add_zeros("policy/cond_b", {dims.cond_width});
  params.add_glorot("policy/vel_w1", a + 1 + dims.cond_width, dims.hidden, rng);
  params.add_zeros("policy/vel_b1", {dims.hidden});
  params.add_glorot("policy/vel_w2", dims.hidden, dims.hidden, rng);
  params.add_zeros("policy/vel_b2", {dims.hidden});
  params.add_glorot("policy/vel_w3", dims.hidden, a, rng);
  params.add_zeros("policy/vel_b3", {a});
  params.add_glorot("policy/sigma_w1", dims.cond_width + 1, dims.hidden, rng);
  params.add_zeros("policy/sigma_b1", {dims.hidden});
  // Output starts state-independent at sigma_init.
  params.add_zeros("policy/sigma_w2", {dims.hidden, a});
  params.add_filled("policy/sigma_b2", {a}, std::log(std::expm1(dims.sigma_init)));
}

void init_value_params(diff::ParameterSet& params, const PolicyDims& dims, const fusion::FusionDims& fdims,
                       diff::Rng& rng) {
  const std::size_t flat = fdims.fused_tokens() * fdims.channels;
  params.add_glorot("value/w1", flat, dims.hidden, rng);
  params.add_zeros("value/b1", {dims.hidden});
  params.add_glorot("value/w2", dims.hidden, dims.hidden, rng);
  params.add_zeros("value/b2", {dims.hidden});
  params.add_zeros("value/w3", {dims.hidden, 1});
  params.add_zeros("value/b3", {1});
}

env::Action to_action(std::span<const double> x, const PolicyDims& dims) {
  env::Action a;
  a.delta = {dims.a_max * x[0], dims.a_max * x[1]};
  a.gripper_cmd = std::clamp(x[2], -1.0, 1.0);
  return a;
}

std::vector<double> flow_target(const env::Action& action, const PolicyDims& dims, double reach) {
  env::Vec2 d = (1.0 / dims.a_max) * action.delta;
  const double n = env::norm(d);
  if (n > reach) d = (reach / n) * d;
  return {d.x, d.y, action.gripper_cmd >= 0.0 ? reach : -reach};
}

FlowPolicy::FlowPolicy(PolicyDims dims, fusion::FusionDims fdims, noise::NoiseSchedule schedule)
    : dims_(dims), fdims_(fdims), schedule_(schedule) {
  dims_.validate();
  fdims_.validate();
  schedule_.validate();
}

Tensor FlowPolicy::condition(const diff::ParameterSet& params, const Tensor& h) const {
  const Tensor flat = diff::reshape(h, {h.dim(0), h.size() / h.dim(0)});
  return diff::tanh(diff::linear(flat, params.get("policy/cond_w"), params.get("policy/cond_b")));
}

Tensor FlowPolicy::velocity(const diff::ParameterSet& params, const Tensor& x, double t, const Tensor& cond) const {
  const Tensor parts[] = {x, column(x.dim(0), t), cond};
  const Tensor in = diff::concat(parts, 1);
  const Tensor h1 = diff::tanh(diff::linear(in, params.get("policy/vel_w1"), params.get("policy/vel_b1")));
  const Tensor h2 = diff::tanh(diff::linear(h1, params.get("policy/vel_w2"), params.get("policy/vel_b2")));
  return diff::linear(h2, params.get("policy/vel_w3"), params.get("policy/vel_b3"));
}

Tensor FlowPolicy::sigma_learned(const diff::ParameterSet& params, const Tensor& cond, double t) const {
  const Tensor parts[] = {cond, column(cond.dim(0), t)};
  const Tensor in = diff::concat(parts, 1);
  const Tensor h1 = diff::tanh(diff::linear(in, params.get("policy/sigma_w1"), params.get("policy/sigma_b1")));
  return diff::softplus(diff::linear(h1, params.get("policy/sigma_w2"), params.get("policy/sigma_b2")));
}

Tensor FlowPolicy::increment_scale(const diff::ParameterSet& params, const Tensor& cond, double t, long k) const {
  if (schedule_.regime == noise::Regime::SDE) {
    return noise::sigma_total(Tensor::zeros({cond.dim(0), dims_.action_dim}), t, k, dims_.step_size(), schedule_);
  }
  return noise::sigma_total(sigma_learned(params, cond, t), t, k, dims_.step_size(), schedule_);
}

Tensor FlowPolicy::integrate_step(const diff::ParameterSet& params, const Tensor& x, double t, const Tensor& cond,
                                  const Tensor& sigma, const Tensor& eps, double dt) const {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_step: step size must be > 0");
  const Tensor f = velocity(params, x, t, cond);
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!std::isfinite(f.at(i))) {
      throw NonFiniteFlow("integrate_step: non-finite velocity at row " + std::to_string(i / dims_.action_dim) +
                          ", dim " + std::to_string(i % dims_.action_dim) + ", t=" + std::to_string(t));
    }
  }
  const Tensor mean = x + dt * f;
  return mean + sigma * eps;
}

std::vector<ActionSample> FlowPolicy::sample_actions(const diff::ParameterSet& params, const Tensor& h, long k,
                                                     std::uint64_t seed) const {
  const std::size_t b = h.dim(0);
  const std::size_t a = dims_.action_dim;
  const double dt = dims_.step_size();
  diff::Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto draw = [&] {
    std::vector<double> v(b * a);
    for (auto& e : v) e = n01(rng);
    return Tensor::from({b, a}, std::move(v));
  };

  std::vector<ActionSample> out(b);
  auto record = [&](std::vector<std::vector<double>> ActionSample::*field, const Tensor& t) {
    for (std::size_t r = 0; r < b; ++r) {
      (out[r].*field).emplace_back(t.data().begin() + r * a, t.data().begin() + (r + 1) * a);
    }
  };

  const Tensor cond = condition(params, h);
  Tensor x = draw();
  record(&ActionSample::flow_path, x);
  Tensor log_prob = Tensor::zeros({b});
  for (int i = 0; i < dims_.flow_steps; ++i) {
    const double t = static_cast<double>(i) * dt;
    const Tensor sigma = increment_scale(params, cond, t, k);
    const Tensor eps = draw();
    const Tensor zero_noise = Tensor::zeros({b, a});
    const Tensor mean = integrate_step(params, x, t, cond, zero_noise, eps, dt);
    const Tensor next = mean + sigma * eps;
    log_prob = log_prob + diff::gaussian_log_prob(next, mean, sigma);
    record(&ActionSample::means, mean);
    record(&ActionSample::scales, sigma);
    record(&ActionSample::noise, eps);
    record(&ActionSample::flow_path, next);
    x = next;
  }
  for (std::size_t r = 0; r < b; ++r) {
    out[r].log_prob = log_prob.at(r);
    out[r].train_step = k;
    out[r].action = to_action(out[r].flow_path.back(), dims_);
  }
  return out;
}

Tensor FlowPolicy::log_prob_under(const diff::ParameterSet& params, const std::vector<const ActionSample*>& samples,
                                  const Tensor& h) const {
  const std::size_t b = samples.size();
  const std::size_t a = dims_.action_dim;
  const std::size_t n = static_cast<std::size_t>(dims_.flow_steps);
  if (b == 0 || h.dim(0) != b) throw std::invalid_argument("log_prob_under: batch size mismatch with tokens");
  for (const auto* s : samples) {
    if (s->flow_path.size() != n + 1) throw std::invalid_argument("log_prob_under: flow path length mismatch");
    for (const auto& x : s->flow_path) {
      if (x.size() != a) throw std::invalid_argument("log_prob_under: flow state width mismatch");
    }
    if (s->train_step != samples.front()->train_step) {
      throw std::invalid_argument("log_prob_under: samples from different training steps");
    }
  }
  const long k = samples.front()->train_step;
  const double dt = dims_.step_size();
  const Tensor cond = condition(params, h);
  Tensor log_prob = Tensor::zeros({b});
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const Tensor x = rows_to_tensor(samples, i, a);
    const Tensor next = rows_to_tensor(samples, i + 1, a);
    const Tensor mean = x + dt * velocity(params, x, t, cond);
    log_prob = log_prob + diff::gaussian_log_prob(next, mean, increment_scale(params, cond, t, k));
  }
  return log_prob;
}

Tensor FlowPolicy::value(const diff::ParameterSet& params, const Tensor& h) const {
  const Tensor flat = diff::reshape(h.detach(), {h.dim(0), h.size() / h.dim(0)});
  const Tensor h1 = diff::tanh(diff::linear(flat, params.get("value/w1"), params.get("value/b1")));
  const Tensor h2 = diff::tanh(diff::linear(h1, params.get("value/w2"), params.get("value/b2")));
  return diff::reshape(diff::linear(h2, params.get("value/w3"), params.get("value/b3")), {h.dim(0)});
}

Tensor FlowPolicy::flow_matching_loss(const diff::ParameterSet& params, const Tensor& h, const Tensor& targets,
                                      diff::Rng& rng) const {
  const std::size_t b = h.dim(0);
  const std::size_t a = dims_.action_dim;
  if (targets.shape() != diff::Shape{b, a}) throw std::invalid_argument("flow_matching_loss: target shape mismatch");
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_int_distribution<int> grid(0, dims_.flow_steps - 1);
  const Tensor cond = condition(params, h);
  Tensor total = Tensor::scalar(0.0);
  // Rows are grouped by their flow time so each group shares one velocity call.
  std::vector<int> slot(b);
  for (auto& s : slot) s = grid(rng);
  std::vector<double> x0(b * a);
  for (auto& v : x0) v = n01(rng);
  for (int i = 0; i < dims_.flow_steps; ++i) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < b; ++r) {
      if (slot[r] == i) rows.push_back(r);
    }
    if (rows.empty()) continue;
    const double t = static_cast<double>(i) * dims_.step_size();
    std::vector<double> xt;
    std::vector<double> vt;
    std::vector<Tensor> cond_rows;
    for (std::size_t r : rows) {
      for (std::size_t d = 0; d < a; ++d) {
        const double x1 = targets.at(r * a + d);
        const double z = x0[r * a + d];
        xt.push_back((1.0 - t) * z + t * x1);
        vt.push_back(x1 - z);
      }
      cond_rows.push_back(diff::slice(cond, 0, r, r + 1));
    }
    const std::size_t m = rows.size();
    const Tensor c = diff::concat(cond_rows, 0);
    const Tensor pred = velocity(params, Tensor::from({m, a}, std::move(xt)), t, c);
    total = total + diff::sum(diff::square(pred - Tensor::from({m, a}, std::move(vt))));
  }
  return diff::scale(total, 1.0 / static_cast<double>(b * a));
}

}  // namespace spatialrl::policy
