// Rule-based comparison controllers: fixed-time and longest-queue-first
// signals, first-come-first-serve reservation, and FCFS with platoons.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "simcore.hpp"

namespace crossway::baselines {

struct SignalPhase {
  std::vector<int> trajectories;  // ascending
  double green = 0.0;             // s
};

struct SignalPlan {
  std::vector<SignalPhase> phases;
  double yellow = 3.0;

  double cycle_length() const;
  bool permits(int phase, int trajectory) const;
};

/// (N+S through/right), (N+S left), (E+W through/right), (E+W left) with a
/// uniform green split of `cycle` minus the yellows.
SignalPlan four_phase_plan(double cycle, double yellow = 3.0);

/// Throws std::invalid_argument when a phase contains two conflicting
/// trajectories or the plan is otherwise malformed.
void validate(const SignalPlan& plan, const Layout& layout);

/// Cycle length used by the fixed-time signal at a total arrival rate.
double fixed_time_cycle(double total_rate);

/// Stopped (v < 0.1 m/s) unadmitted preparation-zone vehicles per phase.
std::vector<int> queue_lengths(const World& world, const SignalPlan& plan);

/// Index of the longest queue; the current phase wins ties with the maximum.
int longest_queue(const std::vector<int>& queues, int current);

struct SignalState {
  int phase = 0;
  bool yellow = false;
  double since = 0.0;  // start of the current green or yellow
  int next = 0;        // phase that follows the running yellow
};

/// Shared driving logic of both signal controllers: permitted vehicles ask
/// for admission, the others stop at the hold point.
class SignalController : public Controller {
 public:
  explicit SignalController(SignalPlan plan);
  void decide(const World& world, std::vector<Command>& out) override;

  const SignalPlan& plan() const { return plan_; }
  const SignalState& state() const { return state_; }

 protected:
  /// Advances the signal state to `now`.
  virtual void update_signal(const World& world) = 0;

  SignalPlan plan_;
  SignalState state_;
  bool validated_ = false;
};

class FixedTimeController : public SignalController {
 public:
  using SignalController::SignalController;
  std::string name() const override { return "ft"; }

 protected:
  void update_signal(const World& world) override;
};

class LqfController : public SignalController {
 public:
  LqfController(SignalPlan plan, double min_green);
  std::string name() const override { return "lqf"; }

 protected:
  void update_signal(const World& world) override;

 private:
  double min_green_;
};

struct PlatoonConfig {
  int max_size = 8;
  double join_gap = 20.0;  // bumper-to-bumper, m
  double headway = 1.0;    // s
};

/// Vehicles stop at the hold point and register in arrival order; a registered
/// vehicle asks for admission only while no waiting vehicle of higher
/// priority on a conflicting trajectory remains. Admitted vehicles are
/// screened by the world's gate.
class FcfsController : public Controller {
 public:
  FcfsController() = default;
  std::string name() const override { return "fcfs"; }
  void decide(const World& world, std::vector<Command>& out) override;

  /// Registered ids by priority (earliest arrival first).
  std::vector<VehicleId> priority_order() const;
  std::optional<std::uint64_t> priority_of(VehicleId id) const;

  /// Distance to the hold point below which a stopped vehicle registers.
  static constexpr double kArrivalTolerance = 1.0;

 protected:
  /// Hook for subclasses: vehicles that register together with `leader`.
  virtual void on_register(const World& world, const VehicleState& leader, std::uint64_t rank);
  /// Whether `v` drives by car following and asks as soon as it is frontmost.
  virtual bool follows_leader(VehicleId) const { return false; }

  std::unordered_map<VehicleId, std::uint64_t> rank_;
  std::uint64_t next_rank_ = 0;
  double follower_headway_ = 1.0;
};

class PlatoonController : public FcfsController {
 public:
  explicit PlatoonController(PlatoonConfig cfg = {});
  std::string name() const override { return "platoon"; }
  void decide(const World& world, std::vector<Command>& out) override;

  /// Platoons formed so far: leader id then members, in lane order.
  const std::vector<std::vector<VehicleId>>& platoons() const { return platoons_; }

 protected:
  void on_register(const World& world, const VehicleState& leader, std::uint64_t rank) override;
  bool follows_leader(VehicleId id) const override { return follower_of_.count(id) != 0; }

 private:
  PlatoonConfig cfg_;
  std::unordered_map<VehicleId, VehicleId> follower_of_;
  std::vector<std::vector<VehicleId>> platoons_;
};

/// Splits a lane queue (front first, bumper gaps between consecutive
/// vehicles) into platoons by the gap and size rule; returns their sizes.
std::vector<int> form_platoons(const std::vector<double>& gaps, const PlatoonConfig& cfg);

}  // namespace crossway::baselines
