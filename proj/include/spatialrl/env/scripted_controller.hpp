#pragma once

#include "spatialrl/env/world.hpp"

namespace spatialrl::env {

// Straight-line expert: approach, grasp, carry, release, back off.
// Displacements may exceed a_max (up to overshoot * a_max); the simulator
// clamps them. Used as the demonstration source and as an upper-bound
// reference in evaluation.
class ScriptedController {
 public:
  explicit ScriptedController(Geometry geometry = {}, double overshoot = 3.0)
      : geometry_(geometry), overshoot_(overshoot) {}

  Action act(const WorldState& state) const;

 private:
  Geometry geometry_;
  double overshoot_;
};

}  // namespace spatialrl::env
