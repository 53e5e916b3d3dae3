#pragma once

// Exploration-noise regimes for the stochastic flow sampler.
//
// SDE: fixed scale sde_sigma0 * sqrt(step), independent of every parameter.
// FlowNoise: the learned per-dimension scale, unchanged.
// SCAN: floor + softplus(learned - floor), where the floor
//   sigma_min(t, k) = min(alpha(k) * sqrt(t / (1 - t)), sigma_cap)
// anneals with the training step k and grows with flow time t.

#include <optional>
#include <span>
#include <string_view>

#include "spatialrl/diff/tensor.hpp"

namespace spatialrl::noise {

enum class Regime { SDE, FlowNoise, SCAN };

std::string_view regime_name(Regime r);
// Accepts "sde", "flow" and "scan".
std::optional<Regime> parse_regime(std::string_view name);

struct NoiseSchedule {
  Regime regime = Regime::SCAN;
  double alpha0 = 0.3;
  double alpha1 = 0.05;
  int horizon = 80;  // K
  double sde_sigma0 = 0.4;
  double sigma_cap = 2.0;

  // Throws std::invalid_argument on a violated field invariant.
  void validate() const;
};

// Evaluation-time noise: SCAN drops its annealed floor and uses the learned
// scale alone; the other regimes are unchanged.
NoiseSchedule evaluation_schedule(const NoiseSchedule& s);

double alpha(long k, const NoiseSchedule& s);

// Throws std::domain_error for t outside [0, 1).
double sigma_min(double t, long k, const NoiseSchedule& s);

// Scalar form; step is the integration step size used by the SDE regime.
double sigma_total(double sigma_learned, double t, long k, double step, const NoiseSchedule& s);

// Differentiable form. The SDE result is a constant tensor with no graph.
diff::Tensor sigma_total(const diff::Tensor& sigma_learned, double t, long k, double step, const NoiseSchedule& s);

// Sum over the grid and dims of 0.5 ln(2 pi e sigma_min^2); a lower bound on
// the per-increment entropy under SCAN. Negative infinity if the grid holds 0.
double effective_entropy_floor(const NoiseSchedule& s, long k, int dims, std::span<const double> t_grid);

}  // namespace spatialrl::noise
