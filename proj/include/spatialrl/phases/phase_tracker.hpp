#pragma once

// Online Reach/Place/Leave inference and step-level dense rewards.
//
// Phases only move forward. A transition needs its entry condition to have
// held for a number of consecutive steps and at least H steps since the last
// transition. When both Place and Leave conditions hold, Leave wins. On entry
// the relevant reference distance is re-measured and the step emits zero
// dense reward.

#include <deque>
#include <stdexcept>
#include <string_view>

#include "spatialrl/env/world.hpp"

namespace spatialrl::phases {

enum class Phase { Reach = 0, Place = 1, Leave = 2 };

std::string_view phase_name(Phase p);

enum class RewardMode { Sparse, Dense };

struct RewardConfig {
  double lambda_dense = 0.3;
  double reward_clip = 1.0;
  int stability_horizon = 5;  // H
  int place_entry_attach_steps = 3;
  int leave_entry_settle_steps = 3;
  RewardMode mode = RewardMode::Dense;
};

struct StabilitySample {
  bool attached = false;
  double obj_dest_distance = 0.0;
};

struct NormalizedDistances {
  double d_ro = 0.0;
  double d_od = 0.0;
};

class UninitializedTracker : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class PhaseTracker {
 public:
  PhaseTracker() = default;
  PhaseTracker(const env::WorldState& initial, const env::Geometry& geometry, const RewardConfig& cfg);

  bool initialized() const { return initialized_; }
  Phase phase() const { return phase_; }
  double d_ro_ref() const { return d_ro_ref_; }
  double d_od_ref() const { return d_od_ref_; }
  double prev_d_ro() const { return prev_d_ro_; }
  double prev_d_od() const { return prev_d_od_; }
  int dwell_counter() const { return dwell_counter_; }
  bool entry_pending() const { return entry_pending_; }
  const std::deque<StabilitySample>& stability_window() const { return window_; }

  NormalizedDistances normalized_distances(const env::WorldState& state) const;

  // Consumes one post-step state. Returns the (possibly new) active phase.
  Phase update_phase(const env::WorldState& state);

  // Phase-specific signed progress, scaled and clipped; updates the stored
  // previous distances. Emits 0 on the first step of a phase.
  double dense_reward(const NormalizedDistances& d);

  // Test hook: overrides the previous distances of the current phase.
  void set_previous(double prev_d_ro, double prev_d_od);

 private:
  void enter(Phase next, const env::WorldState& state);

  env::Geometry geometry_;
  RewardConfig cfg_;
  bool initialized_ = false;
  Phase phase_ = Phase::Reach;
  double d_ro_ref_ = 0.0;
  double d_od_ref_ = 0.0;
  double prev_d_ro_ = 1.0;
  double prev_d_od_ = 1.0;
  int dwell_counter_ = 0;
  bool entry_pending_ = false;
  bool grasp_established_ = false;
  int attach_streak_ = 0;
  int settle_streak_ = 0;
  std::deque<StabilitySample> window_;
};

// Dense term (zeroed in sparse mode) plus 1 on success.
double total_step_reward(double dense, bool success_now, const RewardConfig& cfg);

}  // namespace spatialrl::phases
