#include "spatialrl/noise/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "spatialrl/diff/ops.hpp"

namespace spatialrl::noise {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::SDE: return "sde";
    case Regime::FlowNoise: return "flow";
    case Regime::SCAN: return "scan";
  }
  return "unknown";
}

std::optional<Regime> parse_regime(std::string_view name) {
  if (name == "sde") return Regime::SDE;
  if (name == "flow") return Regime::FlowNoise;
  if (name == "scan") return Regime::SCAN;
  return std::nullopt;
}

void NoiseSchedule::validate() const {
  if (!(alpha0 > 0.0)) throw std::invalid_argument("noise: alpha0 must be > 0");
  if (!(alpha1 >= 0.0) || alpha1 > alpha0) throw std::invalid_argument("noise: require alpha0 >= alpha1 >= 0");
  if (horizon < 1) throw std::invalid_argument("noise: horizon K must be >= 1");
  if (!(sde_sigma0 > 0.0)) throw std::invalid_argument("noise: sde_sigma0 must be > 0");
  if (!(sigma_cap > 0.0)) throw std::invalid_argument("noise: sigma_cap must be > 0");
}

NoiseSchedule evaluation_schedule(const NoiseSchedule& s) {
  NoiseSchedule out = s;
  if (out.regime == Regime::SCAN) out.regime = Regime::FlowNoise;
  return out;
}

double alpha(long k, const NoiseSchedule& s) {
  const long kk = std::clamp<long>(k, 0, s.horizon);
  if (kk == s.horizon) return s.alpha1;
  return s.alpha0 + (s.alpha1 - s.alpha0) * static_cast<double>(kk) / static_cast<double>(s.horizon);
}

double sigma_min(double t, long k, const NoiseSchedule& s) {
  if (!(t >= 0.0 && t < 1.0)) throw std::domain_error("sigma_min: flow time " + std::to_string(t) + " outside [0, 1)");
  return std::min(alpha(k, s) * std::sqrt(t / (1.0 - t)), s.sigma_cap);
}

double sigma_total(double sigma_learned, double t, long k, double step, const NoiseSchedule& s) {
  switch (s.regime) {
    case Regime::SDE: return s.sde_sigma0 * std::sqrt(step);
    case Regime::FlowNoise: return sigma_learned;
    case Regime::SCAN: {
      const double floor = sigma_min(t, k, s);
      return floor + softplus(sigma_learned - floor);
    }
  }
  return sigma_learned;
}

diff::Tensor sigma_total(const diff::Tensor& sigma_learned, double t, long k, double step, const NoiseSchedule& s) {
  switch (s.regime) {
    case Regime::SDE: return diff::Tensor::filled(sigma_learned.shape(), s.sde_sigma0 * std::sqrt(step));
    case Regime::FlowNoise: return sigma_learned;
    case Regime::SCAN: {
      const double floor = sigma_min(t, k, s);
      const auto f = diff::Tensor::scalar(floor);
      return f + diff::softplus(sigma_learned - f);
    }
  }
  return sigma_learned;
}

double effective_entropy_floor(const NoiseSchedule& s, long k, int dims, std::span<const double> t_grid) {
  double total = 0.0;
  for (double t : t_grid) {
    const double floor = sigma_min(t, k, s);
    total += dims * 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * floor * floor);
  }
  return total;
}

}  // namespace spatialrl::noise
