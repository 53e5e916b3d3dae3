#include "spatialrl/env/scripted_controller.hpp"

namespace spatialrl::env {

namespace {

Vec2 cap(Vec2 v, double max_norm) {
  const double n = norm(v);
  return n > max_norm ? (max_norm / n) * v : v;
}

}  // namespace

Action ScriptedController::act(const WorldState& s) const {
  const double reach = overshoot_ * geometry_.a_max;
  Action a;
  if (s.attached) {
    const Vec2 to_dest = s.p_dest - s.p_obj;
    if (norm(to_dest) <= 0.3 * geometry_.dest_radius) {
      a.gripper_cmd = -1.0;
    } else {
      a.delta = cap(to_dest, reach);
      a.gripper_cmd = 1.0;
    }
    return a;
  }
  if (distance(s.p_obj, s.p_dest) <= geometry_.dest_radius) {
    Vec2 away = s.p_eef - s.p_obj;
    if (norm(away) < 1e-9) away = {0.0, -1.0};
    a.delta = (reach / norm(away)) * away;
    a.gripper_cmd = -1.0;
    return a;
  }
  const Vec2 to_obj = s.p_obj - s.p_eef;
  a.delta = cap(to_obj, reach);
  a.gripper_cmd = norm(to_obj) <= geometry_.a_max + 0.5 * geometry_.grasp_radius ? 1.0 : -1.0;
  return a;
}

}  // namespace spatialrl::env
