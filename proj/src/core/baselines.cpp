#include "baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crossway::baselines {

namespace {

bool conflicting(const Layout& layout, int a, int b) {
  const auto& c = layout.map().conflicting.at(a);
  return std::binary_search(c.begin(), c.end(), b);
}

double leader_speed(const World& world, const VehicleState& v) {
  const auto* l = world.leader_of(v.id);
  return l ? l->v : v.v;
}

double hold_accel(const World& world, const VehicleState& v) {
  const auto& p = world.params();
  const double a = follow_accel(world.gap_to_leader(v), v.v, leader_speed(world, v), p);
  return std::min(a, stop_accel(world.distance_to_hold(v), v.v, p));
}

}  // namespace

// ---------------------------------------------------------------- signals

double SignalPlan::cycle_length() const {
  double c = 0.0;
  for (const auto& p : phases) c += p.green + yellow;
  return c;
}

bool SignalPlan::permits(int phase, int trajectory) const {
  const auto& t = phases.at(static_cast<std::size_t>(phase)).trajectories;
  return std::binary_search(t.begin(), t.end(), trajectory);
}

SignalPlan four_phase_plan(double cycle, double yellow) {
  const double green = (cycle - 4.0 * yellow) / 4.0;
  if (!(green > 0.0)) throw std::invalid_argument("cycle too short for four phases");
  auto ids = [](Approach a, Approach b, std::initializer_list<Movement> ms) {
    std::vector<int> out;
    for (auto ap : {a, b}) {
      for (auto m : ms) out.push_back(trajectory_id(ap, m));
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  using A = Approach;
  using M = Movement;
  SignalPlan plan;
  plan.yellow = yellow;
  plan.phases = {{ids(A::kNorth, A::kSouth, {M::kStraight, M::kRight}), green},
                 {ids(A::kNorth, A::kSouth, {M::kLeft}), green},
                 {ids(A::kEast, A::kWest, {M::kStraight, M::kRight}), green},
                 {ids(A::kEast, A::kWest, {M::kLeft}), green}};
  return plan;
}

void validate(const SignalPlan& plan, const Layout& layout) {
  if (plan.phases.empty()) throw std::invalid_argument("signal plan without phases");
  if (plan.yellow < 0.0) throw std::invalid_argument("negative yellow");
  for (const auto& ph : plan.phases) {
    if (!(ph.green > 0.0)) throw std::invalid_argument("phase green must be positive");
    if (!std::is_sorted(ph.trajectories.begin(), ph.trajectories.end())) {
      throw std::invalid_argument("phase trajectories must be ascending");
    }
    for (std::size_t i = 0; i < ph.trajectories.size(); ++i) {
      const int a = ph.trajectories[i];
      if (a < 0 || a >= layout.trajectory_count()) throw std::invalid_argument("phase trajectory id");
      for (std::size_t j = i + 1; j < ph.trajectories.size(); ++j) {
        if (conflicting(layout, a, ph.trajectories[j])) {
          throw std::invalid_argument("phase holds conflicting trajectories " + std::to_string(a) +
                                      " and " + std::to_string(ph.trajectories[j]));
        }
      }
    }
  }
}

double fixed_time_cycle(double total_rate) {
  if (total_rate < 6300.0) return 60.0;
  if (total_rate < 8100.0) return 90.0;
  return 120.0;
}

std::vector<int> queue_lengths(const World& world, const SignalPlan& plan) {
  std::vector<int> per_traj(static_cast<std::size_t>(world.layout().trajectory_count()), 0);
  for (const auto& v : world.vehicles()) {
    if (v.zone == Zone::kPreparation && !v.admitted() && v.v < kSpeedFloor) ++per_traj[v.trajectory];
  }
  std::vector<int> q(plan.phases.size(), 0);
  for (std::size_t p = 0; p < plan.phases.size(); ++p) {
    for (int t : plan.phases[p].trajectories) q[p] += per_traj[static_cast<std::size_t>(t)];
  }
  return q;
}

int longest_queue(const std::vector<int>& queues, int current) {
  if (queues.empty()) throw std::invalid_argument("no phases");
  int best = std::clamp(current, 0, static_cast<int>(queues.size()) - 1);
  for (int p = 0; p < static_cast<int>(queues.size()); ++p) {
    if (queues[p] > queues[best]) best = p;
  }
  return best;
}

SignalController::SignalController(SignalPlan plan) : plan_(std::move(plan)) {
  if (plan_.phases.empty()) throw std::invalid_argument("signal plan without phases");
}

void SignalController::decide(const World& world, std::vector<Command>& out) {
  out.clear();
  if (!validated_) {
    validate(plan_, world.layout());
    validated_ = true;
  }
  update_signal(world);
  const auto& p = world.params();
  for (const auto& v : world.vehicles()) {
    if (!world.frontmost_unadmitted(v)) continue;
    const bool go = !state_.yellow && plan_.permits(state_.phase, v.trajectory);
    const double a = go ? follow_accel(world.gap_to_leader(v), v.v, leader_speed(world, v), p)
                        : hold_accel(world, v);
    out.push_back({v.id, a, go});
  }
}

void FixedTimeController::update_signal(const World& world) {
  const double cycle = plan_.cycle_length();
  double t = std::fmod(world.time(), cycle);
  for (int k = 0; k < static_cast<int>(plan_.phases.size()); ++k) {
    const double g = plan_.phases[k].green;
    if (t < g) {
      state_ = {k, false, world.time() - t, k};
      return;
    }
    t -= g;
    if (t < plan_.yellow) {
      const int next = (k + 1) % static_cast<int>(plan_.phases.size());
      state_ = {k, true, world.time() - t, next};
      return;
    }
    t -= plan_.yellow;
  }
  state_ = {0, false, world.time(), 0};
}

LqfController::LqfController(SignalPlan plan, double min_green)
    : SignalController(std::move(plan)), min_green_(min_green) {
  if (min_green < 0.0) throw std::invalid_argument("negative minimum green");
}

void LqfController::update_signal(const World& world) {
  const double now = world.time();
  if (state_.yellow) {
    if (now - state_.since >= plan_.yellow - 1e-9) state_ = {state_.next, false, now, state_.next};
    return;
  }
  if (now - state_.since < min_green_ - 1e-9) return;
  const int best = longest_queue(queue_lengths(world, plan_), state_.phase);
  if (best != state_.phase) state_ = {state_.phase, true, now, best};
}

// ---------------------------------------------------------------- fcfs

std::vector<VehicleId> FcfsController::priority_order() const {
  std::vector<std::pair<std::uint64_t, VehicleId>> v;
  for (const auto& [id, r] : rank_) v.emplace_back(r, id);
  std::sort(v.begin(), v.end());
  std::vector<VehicleId> out;
  for (const auto& e : v) out.push_back(e.second);
  return out;
}

std::optional<std::uint64_t> FcfsController::priority_of(VehicleId id) const {
  auto it = rank_.find(id);
  if (it == rank_.end()) return std::nullopt;
  return it->second;
}

void FcfsController::on_register(const World&, const VehicleState&, std::uint64_t) {}

void FcfsController::decide(const World& world, std::vector<Command>& out) {
  out.clear();
  const auto& layout = world.layout();
  const auto& p = world.params();

  std::vector<const VehicleState*> front;
  for (const auto& v : world.vehicles()) {
    if (world.frontmost_unadmitted(v)) front.push_back(&v);
  }
  // Arrivals: vehicles come to rest at the boundary, then queue by arrival.
  std::vector<const VehicleState*> arriving;
  for (const auto* v : front) {
    if (!rank_.count(v->id) && world.distance_to_hold(*v) <= kArrivalTolerance && v->v < kSpeedFloor) {
      arriving.push_back(v);
    }
  }
  std::sort(arriving.begin(), arriving.end(), [&](const VehicleState* a, const VehicleState* b) {
    const double da = world.distance_to_hold(*a), db = world.distance_to_hold(*b);
    return da != db ? da < db : a->id < b->id;
  });
  for (const auto* v : arriving) {
    const auto r = next_rank_++;
    rank_[v->id] = r;
    on_register(world, *v, r);
  }

  std::vector<std::pair<std::uint64_t, int>> waiting;  // (rank, trajectory)
  for (const auto* v : front) {
    auto it = rank_.find(v->id);
    if (it == rank_.end()) continue;
    // A platoon member still rolling up does not hold others back.
    if (follows_leader(v->id) && !(world.distance_to_hold(*v) <= kArrivalTolerance && v->v < kSpeedFloor)) {
      continue;
    }
    waiting.emplace_back(it->second, v->trajectory);
  }
  for (const auto* v : front) {
    auto it = rank_.find(v->id);
    if (follows_leader(v->id)) {
      const double a = follow_accel(world.gap_to_leader(*v), v->v, leader_speed(world, *v), p,
                                    follower_headway_);
      out.push_back({v->id, a, true});
      continue;
    }
    if (it == rank_.end()) {
      out.push_back({v->id, hold_accel(world, *v), false});
      continue;
    }
    bool blocked = false;
    for (const auto& [r, t] : waiting) {
      if (r < it->second && conflicting(layout, t, v->trajectory)) {
        blocked = true;
        break;
      }
    }
    out.push_back({v->id, hold_accel(world, *v), !blocked});
  }

  // Forget vehicles that left the world.
  if (rank_.size() > 4 * world.vehicles().size() + 64) {
    std::erase_if(rank_, [&](const auto& e) { return world.find(e.first) == nullptr; });
  }
}

// ---------------------------------------------------------------- platoon

std::vector<int> form_platoons(const std::vector<double>& gaps, const PlatoonConfig& cfg) {
  if (cfg.max_size < 1) throw std::invalid_argument("platoon size must be at least 1");
  std::vector<int> sizes{1};
  for (double g : gaps) {
    if (g <= cfg.join_gap && sizes.back() < cfg.max_size) {
      ++sizes.back();
    } else {
      sizes.push_back(1);
    }
  }
  return sizes;
}

PlatoonController::PlatoonController(PlatoonConfig cfg) : cfg_(cfg) {
  if (cfg_.max_size < 1) throw std::invalid_argument("platoon size must be at least 1");
  follower_headway_ = cfg_.headway;
}

void PlatoonController::on_register(const World& world, const VehicleState& leader,
                                    std::uint64_t rank) {
  std::vector<VehicleId> members{leader.id};
  const double length = world.params().vehicle.length;
  const VehicleState* prev = &leader;
  bool behind = false;
  for (const auto& v : world.vehicles()) {
    if (v.id == leader.id) {
      behind = true;
      continue;
    }
    if (!behind || v.trajectory != leader.trajectory) continue;
    if (static_cast<int>(members.size()) >= cfg_.max_size) break;
    if (prev->s - length - v.s > cfg_.join_gap) break;
    members.push_back(v.id);
    follower_of_[v.id] = leader.id;
    rank_[v.id] = rank;
    prev = &v;
  }
  platoons_.push_back(std::move(members));
}

void PlatoonController::decide(const World& world, std::vector<Command>& out) {
  FcfsController::decide(world, out);
  if (follower_of_.size() > 4 * world.vehicles().size() + 64) {
    std::erase_if(follower_of_, [&](const auto& e) { return world.find(e.first) == nullptr; });
  }
}

}  // namespace crossway::baselines
