// Vehicle state shared by the simulator, the reservation table and the
// controllers.
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>

namespace crossway {

using VehicleId = std::uint32_t;

enum class Zone : std::uint8_t { kUpstream, kPreparation, kCrossing, kDone };

struct VehicleParams {
  double length = 5.0;
  double width = 1.8;
  double v_max = 15.0;
  double a_max = 4.0;
  double a_min = -4.0;
};

/// Locked longitudinal profile granted on admission: accelerate with `accel`
/// until the speed reaches `v_cross`, then hold it. A cruise plan has
/// accel = 0 and v_cross equal to the speed at admission.
struct CrossingPlan {
  double accel = 0.0;
  double v_cross = 0.0;
};

struct VehicleState {
  VehicleId id = 0;
  int trajectory = -1;
  double s = 0.0;  // front bumper arc position
  double v = 0.0;
  double accel = 0.0;  // last applied acceleration
  double spawn_time = 0.0;
  Zone zone = Zone::kUpstream;
  std::optional<CrossingPlan> plan;  // set exactly once, on admission
  std::optional<double> crossing_speed;

  bool admitted() const { return plan.has_value(); }
};

/// One semi-implicit Euler substep: speed first, then position with the new
/// speed.
struct Kinematics {
  double v;
  double s;
};

inline Kinematics integrate_substep(double s, double v, double a, double dt, double v_max) {
  const double v1 = std::clamp(v + a * dt, 0.0, v_max);
  return {v1, s + v1 * dt};
}

/// Substep under a locked plan.
inline Kinematics integrate_plan_substep(double s, double v, const CrossingPlan& plan, double dt) {
  const double v1 = plan.accel > 0.0 ? std::min(v + plan.accel * dt, plan.v_cross) : plan.v_cross;
  return {v1, s + v1 * dt};
}

}  // namespace crossway
