#pragma once

// Planar pick-place simulator.
//
// The workspace is [-1, 1]^2. The end-effector moves by a clamped
// displacement per step; closing the gripper within grasp_radius of the
// object attaches it rigidly until the gripper opens. Distractors are inert.
// Perturbations only touch observations (view rotation/translation) and the
// initial placement (shift, clutter); dynamics never see them.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spatialrl::env {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

double norm(Vec2 v);
double distance(Vec2 a, Vec2 b);
Vec2 rotate(Vec2 v, double angle);

struct Geometry {
  double workspace = 1.0;  // half-width of the square workspace
  double a_max = 0.05;
  double grasp_radius = 0.08;
  double dest_radius = 0.08;
  double leave_radius = 0.15;
  std::size_t max_distractors = 4;
};

struct WorldState {
  Vec2 p_eef;
  Vec2 p_obj;
  Vec2 p_dest;
  std::vector<Vec2> distractors;
  bool gripper_open = true;
  bool attached = false;
  int step_index = 0;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct Action {
  Vec2 delta;
  double gripper_cmd = -1.0;  // >= 0 closes, < 0 opens
};

struct Perturbation {
  double view_rotation = 0.0;  // radians
  Vec2 view_translation;
  Vec2 init_shift;
  int clutter_count = 0;

  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

struct Observation {
  // View-frame coordinates of eef, object, destination, padded distractor
  // slots, distractor presence mask, then gripper_open and attached flags.
  std::vector<double> features;
  // Canonical-frame displacements: obj - eef, dest - obj, dest - eef and
  // padded distractor - eef offsets.
  std::vector<double> canonical_geometry;
};

class PlacementError : public std::runtime_error {
 public:
  PlacementError(const std::string& what, std::uint64_t seed) : std::runtime_error(what), seed_(seed) {}
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

std::size_t feature_dim(const Geometry& g);
std::size_t canonical_dim(const Geometry& g);

class PickPlaceEnv {
 public:
  explicit PickPlaceEnv(Geometry geometry = {}) : geometry_(geometry) {}

  const Geometry& geometry() const { return geometry_; }

  WorldState reset(std::uint64_t seed, const Perturbation& pert) const;
  WorldState step(const WorldState& state, const Action& action) const;
  Observation observe(const WorldState& state, const Perturbation& pert) const;
  bool is_success(const WorldState& state) const;
  // Checks the WorldState invariants; returns an empty string when valid.
  std::string validate(const WorldState& state) const;

 private:
  Vec2 clamp_to_workspace(Vec2 p) const;
  Geometry geometry_;
};

// One CSV row per step, header mandatory.
class TrajectoryLog {
 public:
  explicit TrajectoryLog(std::ostream& os);
  void append(const WorldState& state, std::string_view phase, double reward);

 private:
  std::ostream& os_;
};

}  // namespace spatialrl::env
