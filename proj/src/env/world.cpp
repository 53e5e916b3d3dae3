#include "spatialrl/env/world.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <random>

namespace spatialrl::env {

namespace {

constexpr int kPlacementAttempts = 1000;

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

double norm(Vec2 v) { return std::hypot(v.x, v.y); }
double distance(Vec2 a, Vec2 b) { return norm(a - b); }

Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

std::size_t feature_dim(const Geometry& g) { return 6 + 3 * g.max_distractors + 2; }
std::size_t canonical_dim(const Geometry& g) { return 6 + 2 * g.max_distractors; }

Vec2 PickPlaceEnv::clamp_to_workspace(Vec2 p) const {
  const double w = geometry_.workspace;
  return {std::clamp(p.x, -w, w), std::clamp(p.y, -w, w)};
}

WorldState PickPlaceEnv::reset(std::uint64_t seed, const Perturbation& pert) const {
  if (pert.clutter_count < 0 || static_cast<std::size_t>(pert.clutter_count) > geometry_.max_distractors) {
    throw PlacementError("reset: clutter_count " + std::to_string(pert.clutter_count) + " outside [0, " +
                             std::to_string(geometry_.max_distractors) + "] (seed " + std::to_string(seed) + ")",
                         seed);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double margin = 0.95 * geometry_.workspace;
  const double min_sep = 2.0 * geometry_.grasp_radius;

  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    WorldState s;
    // Object and destination sit on opposite sides; which side is random.
    const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
    s.p_eef = {uniform(-0.15, 0.15), uniform(-0.85, -0.65)};
    s.p_obj = {side * uniform(0.35, 0.85), uniform(-0.2, 0.8)};
    s.p_dest = {-side * uniform(0.35, 0.85), uniform(-0.2, 0.8)};
    s.p_obj = s.p_obj + pert.init_shift;
    s.p_dest = s.p_dest + pert.init_shift;
    s.p_obj = {std::clamp(s.p_obj.x, -margin, margin), std::clamp(s.p_obj.y, -margin, margin)};
    s.p_dest = {std::clamp(s.p_dest.x, -margin, margin), std::clamp(s.p_dest.y, -margin, margin)};
    for (int i = 0; i < pert.clutter_count; ++i) s.distractors.push_back({uniform(-0.9, 0.9), uniform(-0.9, 0.9)});

    std::vector<Vec2> all{s.p_eef, s.p_obj, s.p_dest};
    all.insert(all.end(), s.distractors.begin(), s.distractors.end());
    bool ok = true;
    for (std::size_t i = 0; i < all.size() && ok; ++i) {
      for (std::size_t j = i + 1; j < all.size() && ok; ++j) ok = distance(all[i], all[j]) >= min_sep;
    }
    if (ok) return s;
  }
  throw PlacementError("reset: placement infeasible after " + std::to_string(kPlacementAttempts) +
                           " attempts (seed " + std::to_string(seed) + ")",
                       seed);
}

WorldState PickPlaceEnv::step(const WorldState& state, const Action& action) const {
  WorldState next = state;
  Vec2 delta = action.delta;
  const double n = norm(delta);
  if (n > geometry_.a_max) delta = (geometry_.a_max / n) * delta;
  if (!std::isfinite(n)) delta = {};

  const Vec2 offset = state.p_obj - state.p_eef;
  next.p_eef = clamp_to_workspace(state.p_eef + delta);
  if (state.attached) next.p_obj = clamp_to_workspace(next.p_eef + offset);

  if (action.gripper_cmd < 0.0) {
    next.gripper_open = true;
    next.attached = false;
  } else {
    next.gripper_open = false;
    if (!next.attached && distance(next.p_eef, next.p_obj) <= geometry_.grasp_radius) next.attached = true;
  }
  next.step_index = state.step_index + 1;
  return next;
}

Observation PickPlaceEnv::observe(const WorldState& state, const Perturbation& pert) const {
  Observation obs;
  const std::size_t slots = geometry_.max_distractors;
  obs.features.reserve(feature_dim(geometry_));
  auto view = [&](Vec2 p) {
    const Vec2 v = rotate(p, pert.view_rotation) + pert.view_translation;
    obs.features.push_back(v.x);
    obs.features.push_back(v.y);
  };
  view(state.p_eef);
  view(state.p_obj);
  view(state.p_dest);
  for (std::size_t i = 0; i < slots; ++i) {
    if (i < state.distractors.size()) {
      view(state.distractors[i]);
    } else {
      obs.features.push_back(0.0);
      obs.features.push_back(0.0);
    }
  }
  for (std::size_t i = 0; i < slots; ++i) obs.features.push_back(i < state.distractors.size() ? 1.0 : 0.0);
  obs.features.push_back(state.gripper_open ? 1.0 : 0.0);
  obs.features.push_back(state.attached ? 1.0 : 0.0);

  obs.canonical_geometry.reserve(canonical_dim(geometry_));
  auto push = [&](Vec2 v) {
    obs.canonical_geometry.push_back(v.x);
    obs.canonical_geometry.push_back(v.y);
  };
  push(state.p_obj - state.p_eef);
  push(state.p_dest - state.p_obj);
  push(state.p_dest - state.p_eef);
  for (std::size_t i = 0; i < slots; ++i) push(i < state.distractors.size() ? state.distractors[i] - state.p_eef : Vec2{});
  return obs;
}

bool PickPlaceEnv::is_success(const WorldState& state) const {
  return !state.attached && distance(state.p_obj, state.p_dest) <= geometry_.dest_radius &&
         distance(state.p_eef, state.p_obj) >= geometry_.leave_radius;
}

std::string PickPlaceEnv::validate(const WorldState& state) const {
  const double w = geometry_.workspace;
  auto inside = [w](Vec2 p) { return std::abs(p.x) <= w && std::abs(p.y) <= w; };
  if (!inside(state.p_eef) || !inside(state.p_obj) || !inside(state.p_dest)) return "position outside workspace";
  for (const auto& d : state.distractors) {
    if (!inside(d)) return "distractor outside workspace";
  }
  if (state.attached && distance(state.p_eef, state.p_obj) > geometry_.grasp_radius + 1e-12) {
    return "attached object beyond grasp radius";
  }
  if (state.step_index < 0) return "negative step index";
  return {};
}

TrajectoryLog::TrajectoryLog(std::ostream& os) : os_(os) {
  os_ << "step_index,eef_x,eef_y,obj_x,obj_y,dest_x,dest_y,gripper_open,attached,phase,reward\n";
}

void TrajectoryLog::append(const WorldState& s, std::string_view phase, double reward) {
  os_ << s.step_index << ',' << fmt(s.p_eef.x) << ',' << fmt(s.p_eef.y) << ',' << fmt(s.p_obj.x) << ','
      << fmt(s.p_obj.y) << ',' << fmt(s.p_dest.x) << ',' << fmt(s.p_dest.y) << ',' << (s.gripper_open ? 1 : 0) << ','
      << (s.attached ? 1 : 0) << ',' << phase << ',' << fmt(reward) << '\n';
}

}  // namespace spatialrl::env
