#include "spatialrl/phases/phase_tracker.hpp"

#include <algorithm>

namespace spatialrl::phases {

namespace {

// Floor keeping reference distances strictly positive.
constexpr double kMinReference = 1e-6;

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Reach: return "reach";
    case Phase::Place: return "place";
    case Phase::Leave: return "leave";
  }
  return "unknown";
}

PhaseTracker::PhaseTracker(const env::WorldState& initial, const env::Geometry& geometry, const RewardConfig& cfg)
    : geometry_(geometry), cfg_(cfg), initialized_(true) {
  if (cfg.lambda_dense < 0.0) throw std::invalid_argument("RewardConfig: lambda_dense must be >= 0");
  if (!(cfg.reward_clip > 0.0)) throw std::invalid_argument("RewardConfig: reward_clip must be > 0");
  if (cfg.stability_horizon < 1) throw std::invalid_argument("RewardConfig: stability horizon must be >= 1");
  d_ro_ref_ = std::max(env::distance(initial.p_eef, initial.p_obj), kMinReference);
  d_od_ref_ = std::max(env::distance(initial.p_obj, initial.p_dest), kMinReference);
  const auto d = normalized_distances(initial);
  prev_d_ro_ = d.d_ro;
  prev_d_od_ = d.d_od;
}

NormalizedDistances PhaseTracker::normalized_distances(const env::WorldState& s) const {
  if (!initialized_) throw UninitializedTracker("normalized_distances: reference distances not initialized");
  return {clip01(env::distance(s.p_eef, s.p_obj) / d_ro_ref_), clip01(env::distance(s.p_obj, s.p_dest) / d_od_ref_)};
}

Phase PhaseTracker::update_phase(const env::WorldState& s) {
  if (!initialized_) throw UninitializedTracker("update_phase: tracker not initialized");
  const double obj_dest = env::distance(s.p_obj, s.p_dest);
  const bool on_dest = obj_dest <= geometry_.dest_radius;

  window_.push_back({s.attached, obj_dest});
  while (window_.size() > static_cast<std::size_t>(cfg_.stability_horizon)) window_.pop_front();

  attach_streak_ = s.attached ? attach_streak_ + 1 : 0;
  settle_streak_ = (!s.attached && on_dest) ? settle_streak_ + 1 : 0;
  if (attach_streak_ >= cfg_.place_entry_attach_steps) grasp_established_ = true;
  // Dropping the object away from the destination voids the grasp.
  if (!s.attached && !on_dest) grasp_established_ = false;

  ++dwell_counter_;
  if (dwell_counter_ < cfg_.stability_horizon || phase_ == Phase::Leave) return phase_;

  const bool leave_ready = settle_streak_ >= cfg_.leave_entry_settle_steps;
  const bool place_ready = phase_ == Phase::Reach && grasp_established_;
  if (leave_ready) {
    enter(Phase::Leave, s);
  } else if (place_ready) {
    enter(Phase::Place, s);
  }
  return phase_;
}

void PhaseTracker::enter(Phase next, const env::WorldState& s) {
  phase_ = next;
  dwell_counter_ = 0;
  entry_pending_ = true;
  if (next == Phase::Place) {
    d_od_ref_ = std::max(env::distance(s.p_obj, s.p_dest), kMinReference);
  } else if (next == Phase::Leave) {
    // Separation is measured against the distance needed to disengage.
    d_ro_ref_ = std::max(env::distance(s.p_eef, s.p_obj), geometry_.leave_radius);
  }
  const auto d = normalized_distances(s);
  prev_d_ro_ = d.d_ro;
  prev_d_od_ = d.d_od;
}

double PhaseTracker::dense_reward(const NormalizedDistances& d) {
  if (!initialized_) throw UninitializedTracker("dense_reward: tracker not initialized");
  double r = 0.0;
  if (entry_pending_) {
    entry_pending_ = false;
  } else {
    switch (phase_) {
      case Phase::Reach: r = cfg_.lambda_dense * (prev_d_ro_ - d.d_ro); break;
      case Phase::Place: r = cfg_.lambda_dense * (prev_d_od_ - d.d_od); break;
      case Phase::Leave: r = cfg_.lambda_dense * (d.d_ro - prev_d_ro_); break;
    }
    r = std::clamp(r, -cfg_.reward_clip, cfg_.reward_clip);
  }
  prev_d_ro_ = d.d_ro;
  prev_d_od_ = d.d_od;
  return r;
}

void PhaseTracker::set_previous(double prev_d_ro, double prev_d_od) {
  prev_d_ro_ = clip01(prev_d_ro);
  prev_d_od_ = clip01(prev_d_od);
  entry_pending_ = false;
}

double total_step_reward(double dense, bool success_now, const RewardConfig& cfg) {
  const double shaped = cfg.mode == RewardMode::Dense ? dense : 0.0;
  return shaped + (success_now ? 1.0 : 0.0);
}

}  // namespace spatialrl::phases
