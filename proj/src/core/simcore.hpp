// World state, kinematics, arrivals, the crossing-zone admission gate and
// ground-truth collision detection.
#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "geometry.hpp"
#include "metrics.hpp"
#include "reservation.hpp"
#include "vehicle.hpp"

namespace crossway {

struct SimParams {
  double substep = 0.1;
  int substeps_per_action = 2;
  VehicleParams vehicle;
  /// Spawn point, measured upstream of the stop line.
  double spawn_distance = 200.0;
  double spawn_speed = 15.0;
  /// Extra clearance on top of the stopping distance required to spawn.
  double spawn_margin = 2.0;
  /// Margin of the same-lane stopping envelope.
  double follow_margin = 2.0;
  /// Held vehicles stop this far before the crossing-zone entry.
  double hold_offset = 6.0;
  /// Deceleration used to shape the approach to the hold point.
  double hold_decel = 3.0;
  double min_crossing_speed = 3.0;
  /// Lowest admissible cruise speed for a plan that launches from rest.
  double min_launch_speed = 1.0;
  double rear_gap = 1.0;
  ReservationParams gate{0.2, 100.0, 1.0, BufferMode::kEnvelope, 0.5};
  bool record_series = false;
  std::size_t event_log_limit = 10000;

  double action_dt() const { return substep * substeps_per_action; }
};

// ---------------------------------------------------------------- arrivals

struct Arrival {
  double time = 0.0;
  int trajectory = -1;
};

struct ArrivalConfig {
  double total_rate = 0.0;  // veh/h over all trajectories
  /// Per-approach share perturbation (uniform, relative) around an even split.
  double imbalance = 0.3;
  /// Relative amplitude of the sinusoidal time variation of every rate.
  double variation_amplitude = 0.25;
  double variation_period = 900.0;
};

/// Independent non-homogeneous Poisson streams, one per trajectory, sampled
/// by thinning.
class ArrivalProcess {
 public:
  ArrivalProcess() = default;
  /// Draws per-approach shares and phases from `seed`; movements of one
  /// approach share its rate evenly.
  ArrivalProcess(const ArrivalConfig& config, int trajectories, std::uint64_t seed);
  /// Explicit per-trajectory base rates in veh/h.
  ArrivalProcess(std::vector<double> rates, double amplitude, double period, std::uint64_t seed);

  /// Arrivals with time in (previous horizon, t_end], ordered by time then
  /// trajectory.
  void advance(double t_end, std::vector<Arrival>& out);

  double rate(int trajectory) const { return rates_.at(trajectory); }
  double total_rate() const;
  double rate_at(int trajectory, double t) const;
  std::span<const double> rates() const { return rates_; }

 private:
  void init_streams(std::uint64_t seed);
  double draw_next(int trajectory, double from);

  std::vector<double> rates_;  // veh/h
  std::vector<double> phase_;
  double amplitude_ = 0.0;
  double period_ = 900.0;
  std::vector<std::mt19937_64> rng_;
  std::vector<double> next_;
};

// ---------------------------------------------------------------- motion

/// Exact discrete trajectory of a vehicle following a locked plan from
/// (s0, v0), integrated with the simulator's substep.
class MotionProfile {
 public:
  MotionProfile() = default;
  MotionProfile(double s0, double v0, const CrossingPlan& plan, double substep);

  /// Time after the start at which the front bumper reaches `s`; 0 if
  /// already there, +inf if never.
  double time_at(double s) const;
  double position_at(double t) const;
  double speed_at(double t) const;

 private:
  double s0_ = 0.0;
  double dt_ = 0.1;
  double v_cross_ = 0.0;
  std::vector<double> s_;  // knots of the accelerating part, s_[0] = s0
  std::vector<double> v_;  // speed held during the substep ending at knot k
};

/// Speed reached in the substep whose end crosses `target_s` when
/// accelerating at `accel` from (s, v), capped at `v_max`.
double launch_speed(double s, double v, double target_s, double accel, double v_max,
                    double substep);

/// Distance before the hold point at which a vehicle must request admission
/// so that it can still stop there after one more action step.
double commit_distance(double v, const SimParams& p);

/// Acceleration that brings the vehicle smoothly to rest `dist` metres ahead.
double stop_accel(double dist, double v, const SimParams& p);

/// Same-lane guard: `a_min` when the gap to the leader, predicted one action
/// step ahead under `proposed` with the leader at rest, falls inside the
/// stopping envelope v^2 / (2 |a_min|) + margin; `proposed` otherwise.
double safety_override(double gap, double v, double proposed, const SimParams& p);

/// Constant-time-gap car following toward `v_max`, limited to a comfortable
/// deceleration. `gap` is +inf without a leader.
double follow_accel(double gap, double v, double v_leader, const SimParams& p,
                    double headway = 1.0, double comfort_decel = 3.0);

// ---------------------------------------------------------------- gate

struct GateWindow {
  int conflict = -1;
  double t1 = 0.0;  // absolute
  double t2 = 0.0;
  CellRange cells;  // on the absolute grid of step dt
};

enum class Verdict : std::uint8_t { kAdmit, kHoldConflict, kHoldSpeed, kHoldRearEnd };
std::string_view to_string(Verdict v);

struct AdmissionRequest {
  VehicleId id = 0;
  int trajectory = -1;
  double s = 0.0;
  double v = 0.0;
  CrossingPlan plan;
};

/// Keeps the occupancy windows of every admitted, not yet released vehicle
/// and admits a new one only when none of its windows meet theirs.
class AdmissionDesk {
 public:
  AdmissionDesk(std::shared_ptr<const Layout> layout, const SimParams& params);

  std::vector<GateWindow> windows(const AdmissionRequest& r, double now) const;
  Verdict evaluate(const AdmissionRequest& r, double now) const;
  /// evaluate(), recording the windows on Admit.
  Verdict request(const AdmissionRequest& r, double now);
  void release(VehicleId id);

  bool admitted(VehicleId id) const { return entries_.count(id) != 0; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<GateWindow>* windows_of(VehicleId id) const;

 private:
  struct Entry {
    int trajectory;
    double t0;
    MotionProfile profile;
    std::vector<GateWindow> windows;
  };
  bool rear_end_risk(const AdmissionRequest& r, const MotionProfile& own, double now) const;

  std::shared_ptr<const Layout> layout_;
  SimParams params_;
  std::unordered_map<VehicleId, Entry> entries_;
  /// Admission order per trajectory, oldest first.
  std::vector<std::deque<VehicleId>> lane_order_;
};

// ---------------------------------------------------------------- collisions

struct Footprint {
  Vec2 center;
  double heading = 0.0;
  double half_length = 2.5;
  double half_width = 0.9;
};

Footprint footprint(const TrajectoryPath& path, double s, const VehicleParams& dims);
bool overlap(const Footprint& a, const Footprint& b);

struct CollisionPair {
  VehicleId a = 0;  // a < b
  VehicleId b = 0;
  friend bool operator==(const CollisionPair&, const CollisionPair&) = default;
};

std::vector<CollisionPair> detect_collisions(std::span<const VehicleState> vehicles,
                                             const Layout& layout, const VehicleParams& dims);

// ---------------------------------------------------------------- world

/// Acceleration request for a preparation-zone vehicle. Vehicles without a
/// command, and all upstream vehicles, use follow_accel().
struct Command {
  VehicleId id = 0;
  double accel = 0.0;
  /// Whether the vehicle asks for admission once it reaches its commit point.
  bool request = true;
};

enum class EventKind : std::uint8_t {
  kActionClamped,
  kGateBreach,
  kCollision,
  kSpawnDeferred,
};
std::string_view to_string(EventKind k);

struct SimEvent {
  double time = 0.0;
  EventKind kind = EventKind::kActionClamped;
  VehicleId id = 0;
  VehicleId other = 0;
  double value = 0.0;
};

struct CollisionEvent {
  double time = 0.0;
  VehicleId a = 0;
  VehicleId b = 0;
  int trajectory_a = -1;
  int trajectory_b = -1;
  Vec2 position;
};

struct StepReport {
  std::vector<VehicleId> admitted;
  std::vector<VehicleId> held;
  std::vector<VehicleId> finished;  // passed or collided this step
  std::vector<CollisionPair> collisions;
  int clamped = 0;
  int breaches = 0;
};

struct WorldCounters {
  std::uint64_t spawned = 0;
  std::uint64_t arrivals = 0;
  std::uint64_t deferred = 0;  // arrivals that had to wait at least once
  std::uint64_t clamped = 0;
  std::uint64_t breaches = 0;
  std::uint64_t collisions = 0;
  std::uint64_t admissions = 0;
  std::uint64_t holds = 0;
};

class World {
 public:
  World(std::shared_ptr<const Layout> layout, SimParams params, ArrivalProcess arrivals);

  double time() const { return static_cast<double>(substeps_) * params_.substep; }
  std::uint64_t action_steps() const { return substeps_ / params_.substeps_per_action; }
  const Layout& layout() const { return *layout_; }
  std::shared_ptr<const Layout> layout_ptr() const { return layout_; }
  const SimParams& params() const { return params_; }

  std::span<const VehicleState> vehicles() const { return vehicles_; }
  const VehicleState* find(VehicleId id) const;
  /// Nearest vehicle ahead on the same trajectory.
  const VehicleState* leader_of(VehicleId id) const;
  /// Gap from `v`'s front bumper to its leader's rear bumper; +inf without one.
  double gap_to_leader(const VehicleState& v) const;

  double hold_point() const;
  double distance_to_hold(const VehicleState& v) const { return hold_point() - v.s; }
  /// Frontmost unadmitted preparation-zone vehicle of its trajectory.
  bool frontmost_unadmitted(const VehicleState& v) const;
  /// Frontmost and inside its commit distance (or already refused once): the
  /// gate is consulted this step.
  bool at_commit_point(const VehicleState& v) const;
  /// First time the vehicle was at its commit point, if ever.
  std::optional<double> request_time(VehicleId id) const;
  bool held(VehicleId id) const;

  const AdmissionDesk& desk() const { return desk_; }

  /// Advances one action step.
  StepReport step(std::span<const Command> commands);

  void set_arrivals_enabled(bool on) { arrivals_on_ = on; }
  /// Inserts a vehicle directly (tests, scripted scenarios).
  VehicleId insert_vehicle(int trajectory, double s, double v);

  std::span<const TripRecord> trips() const { return trips_; }
  std::span<const CollisionEvent> collisions() const { return collision_log_; }
  std::span<const SimEvent> events() const { return events_; }
  const WorldCounters& counters() const { return counters_; }
  std::size_t pending_arrivals() const;

  /// Closes the log: remaining vehicles become unfinished trips.
  std::vector<TripRecord> finish();

 private:
  struct Track {
    TripRecord trip;
    std::optional<double> request_time;
    bool held = false;
    bool breached = false;
    bool front_exited = false;
  };

  void log(EventKind kind, VehicleId id, VehicleId other, double value);
  void spawn_due();
  bool spawn_clear(int trajectory) const;
  VehicleId add_vehicle(int trajectory, double s, double v);
  void admission_phase(const std::unordered_map<VehicleId, const Command*>& cmds,
                       StepReport& report);
  void substep_motion(std::vector<double>& accel, StepReport& report);
  void remove_vehicle(std::size_t index, Outcome outcome, StepReport& report);
  std::size_t index_of(VehicleId id) const;

  std::shared_ptr<const Layout> layout_;
  SimParams params_;
  ArrivalProcess arrivals_;
  AdmissionDesk desk_;
  bool arrivals_on_ = true;
  std::uint64_t substeps_ = 0;
  VehicleId next_id_ = 1;

  std::vector<VehicleState> vehicles_;  // spawn order, so leaders come first
  std::vector<Track> tracks_;           // parallel to vehicles_
  std::vector<std::deque<double>> pending_;
  std::vector<Arrival> arrival_buf_;

  std::vector<TripRecord> trips_;
  std::vector<CollisionEvent> collision_log_;
  std::vector<SimEvent> events_;
  WorldCounters counters_;
};

/// Per-step decision maker driving a World.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual void decide(const World& world, std::vector<Command>& out) = 0;
  virtual void observe(const World& /*world*/, const StepReport& /*report*/) {}
};

}  // namespace crossway
