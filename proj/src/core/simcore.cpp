#include "simcore.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace crossway {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

}  // namespace

// ---------------------------------------------------------------- arrivals

ArrivalProcess::ArrivalProcess(const ArrivalConfig& config, int trajectories, std::uint64_t seed)
    : amplitude_(config.variation_amplitude), period_(config.variation_period) {
  if (trajectories <= 0) throw std::invalid_argument("arrival process needs trajectories");
  if (config.total_rate < 0.0) throw std::invalid_argument("negative arrival rate");
  auto rng = make_rng(seed, 0xA5A5);
  std::uniform_real_distribution<double> u(-config.imbalance, config.imbalance);
  const int approaches = std::max(1, trajectories / 3);
  std::vector<double> share(approaches);
  double sum = 0.0;
  for (auto& s : share) {
    s = 1.0 + u(rng);
    sum += s;
  }
  rates_.resize(trajectories);
  for (int j = 0; j < trajectories; ++j) {
    const int a = std::min(j / 3, approaches - 1);
    const int per = (a == approaches - 1) ? trajectories - 3 * a : 3;
    rates_[j] = config.total_rate * share[a] / sum / per;
  }
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
  phase_.resize(trajectories);
  for (auto& p : phase_) p = ph(rng);
  init_streams(seed);
}

ArrivalProcess::ArrivalProcess(std::vector<double> rates, double amplitude, double period,
                               std::uint64_t seed)
    : rates_(std::move(rates)), amplitude_(amplitude), period_(period) {
  for (double r : rates_) {
    if (r < 0.0) throw std::invalid_argument("negative arrival rate");
  }
  auto rng = make_rng(seed, 0xA5A5);
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
  phase_.resize(rates_.size());
  for (auto& p : phase_) p = ph(rng);
  init_streams(seed);
}

void ArrivalProcess::init_streams(std::uint64_t seed) {
  if (amplitude_ < 0.0 || amplitude_ >= 1.0) throw std::invalid_argument("variation amplitude");
  rng_.clear();
  next_.assign(rates_.size(), kInf);
  for (std::size_t j = 0; j < rates_.size(); ++j) rng_.push_back(make_rng(seed, 1000 + j));
  for (std::size_t j = 0; j < rates_.size(); ++j) {
    next_[j] = draw_next(static_cast<int>(j), 0.0);
  }
}

double ArrivalProcess::total_rate() const {
  double s = 0.0;
  for (double r : rates_) s += r;
  return s;
}

double ArrivalProcess::rate_at(int j, double t) const {
  return rates_.at(j) *
         (1.0 + amplitude_ * std::sin(2.0 * std::numbers::pi * t / period_ + phase_.at(j)));
}

double ArrivalProcess::draw_next(int j, double from) {
  const double peak = rates_[j] * (1.0 + amplitude_) / 3600.0;  // veh/s
  if (peak <= 0.0) return kInf;
  auto& rng = rng_[j];
  std::exponential_distribution<double> gap(peak);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double t = from;
  for (;;) {
    t += gap(rng);
    if (amplitude_ == 0.0) return t;
    if (u(rng) * peak <= rate_at(j, t) / 3600.0) return t;
  }
}

void ArrivalProcess::advance(double t_end, std::vector<Arrival>& out) {
  out.clear();
  for (std::size_t j = 0; j < rates_.size(); ++j) {
    while (next_[j] <= t_end) {
      out.push_back({next_[j], static_cast<int>(j)});
      next_[j] = draw_next(static_cast<int>(j), next_[j]);
    }
  }
  std::sort(out.begin(), out.end(), [](const Arrival& a, const Arrival& b) {
    return a.time != b.time ? a.time < b.time : a.trajectory < b.trajectory;
  });
}

// ---------------------------------------------------------------- motion

MotionProfile::MotionProfile(double s0, double v0, const CrossingPlan& plan, double substep)
    : s0_(s0), dt_(substep), v_cross_(plan.v_cross) {
  s_.push_back(s0);
  if (plan.accel > 0.0) {
    double s = s0, v = v0;
    while (v < plan.v_cross) {
      const auto k = integrate_plan_substep(s, v, plan, substep);
      s = k.s;
      v = k.v;
      s_.push_back(s);
      v_.push_back(v);
      if (s_.size() > 100000) throw std::logic_error("motion profile does not converge");
    }
  }
}

double MotionProfile::time_at(double s) const {
  if (s <= s0_) return 0.0;
  const std::size_t k_end = v_.size();
  for (std::size_t k = 0; k < k_end; ++k) {
    if (s <= s_[k + 1]) return static_cast<double>(k) * dt_ + (s - s_[k]) / v_[k];
  }
  if (v_cross_ <= 0.0) return kInf;
  return static_cast<double>(k_end) * dt_ + (s - s_[k_end]) / v_cross_;
}

double MotionProfile::position_at(double t) const {
  if (t <= 0.0) return s0_;
  const std::size_t k_end = v_.size();
  const auto k = static_cast<std::size_t>(std::floor(t / dt_));
  if (k < k_end) return s_[k] + v_[k] * (t - static_cast<double>(k) * dt_);
  return s_[k_end] + v_cross_ * (t - static_cast<double>(k_end) * dt_);
}

double MotionProfile::speed_at(double t) const {
  const std::size_t k_end = v_.size();
  if (t < 0.0) t = 0.0;
  const auto k = static_cast<std::size_t>(std::floor(t / dt_));
  return k < k_end ? v_[k] : v_cross_;
}

double launch_speed(double s, double v, double target_s, double accel, double v_max,
                    double substep) {
  for (int i = 0; i < 100000; ++i) {
    v = std::min(v + accel * substep, v_max);
    s += v * substep;
    if (s >= target_s) return v;
  }
  return v;
}

double commit_distance(double v, const SimParams& p) {
  const double dt = p.action_dt();
  const double vn = std::min(v + p.vehicle.a_max * dt, p.vehicle.v_max);
  return dt * vn + vn * vn / (2.0 * -p.vehicle.a_min) + 0.1;
}

double stop_accel(double dist, double v, const SimParams& p) {
  const double v_ref = std::sqrt(2.0 * p.hold_decel * std::max(dist - 0.3, 0.0));
  return std::clamp((v_ref - v) / p.action_dt(), p.vehicle.a_min, p.vehicle.a_max);
}

double safety_override(double gap, double v, double proposed, const SimParams& p) {
  if (!std::isfinite(gap)) return proposed;
  double s = 0.0;
  for (int k = 0; k < p.substeps_per_action; ++k) {
    const auto next = integrate_substep(s, v, proposed, p.substep, p.vehicle.v_max);
    s = next.s;
    v = next.v;
  }
  const double envelope = v * v / (2.0 * -p.vehicle.a_min) + p.follow_margin;
  return gap - s < envelope ? p.vehicle.a_min : proposed;
}

double follow_accel(double gap, double v, double v_leader, const SimParams& p, double headway,
                    double comfort_decel) {
  const double dt = p.action_dt();
  double a = std::min(p.vehicle.a_max, (p.vehicle.v_max - v) / dt);
  if (std::isfinite(gap)) {
    const double desired = p.follow_margin + headway * v;
    a = std::min(a, 0.5 * (gap - desired) + 1.0 * (v_leader - v));
    if (v > v_leader) {
      const double room = std::max(gap - p.follow_margin, 0.1);
      a = std::min(a, -(v - v_leader) * (v - v_leader) / (2.0 * room));
    }
  }
  return std::clamp(a, -comfort_decel, p.vehicle.a_max);
}

// ---------------------------------------------------------------- gate

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kAdmit: return "admit";
    case Verdict::kHoldConflict: return "hold_conflict";
    case Verdict::kHoldSpeed: return "hold_speed";
    case Verdict::kHoldRearEnd: return "hold_rear_end";
  }
  return "?";
}

AdmissionDesk::AdmissionDesk(std::shared_ptr<const Layout> layout, const SimParams& params)
    : layout_(std::move(layout)), params_(params) {
  lane_order_.resize(layout_->trajectory_count());
}

std::vector<GateWindow> AdmissionDesk::windows(const AdmissionRequest& r, double now) const {
  const MotionProfile prof(r.s, r.v, r.plan, params_.substep);
  const auto& g = params_.gate;
  const double l = params_.vehicle.length;
  const double w = params_.vehicle.width;
  std::vector<GateWindow> out;
  for (int c : layout_->map().conflicts_on.at(r.trajectory)) {
    const auto& cp = layout_->conflict(c);
    const double sc = cp.arc_on(r.trajectory);
    const auto buf = conflict_buffers(g, cp.theta, w, w);
    if (sc + l + buf.rear <= r.s) continue;
    GateWindow gw;
    gw.conflict = c;
    gw.t1 = now + prof.time_at(sc - buf.front);
    gw.t2 = now + std::min(prof.time_at(sc + l + buf.rear), g.horizon);
    if (!(gw.t1 < gw.t2)) gw.t1 = gw.t2;  // never reached within the horizon
    if (gw.t2 > gw.t1) {
      gw.cells.first = static_cast<int>(std::floor(gw.t1 / g.dt));
      gw.cells.last = static_cast<int>(std::ceil(gw.t2 / g.dt)) - 1;
    }
    out.push_back(gw);
  }
  return out;
}

bool AdmissionDesk::rear_end_risk(const AdmissionRequest& r, const MotionProfile& own,
                                  double now) const {
  const auto& lane = lane_order_.at(r.trajectory);
  if (lane.empty()) return false;
  const Entry& pred = entries_.at(lane.back());
  const double l = params_.vehicle.length;
  const double exit_s = layout_->path(r.trajectory).exit_s();
  const double t_end = std::min(own.time_at(exit_s + l), params_.gate.horizon);
  const int n = static_cast<int>(std::ceil(t_end / params_.substep)) + 1;
  for (int k = 0; k <= n; ++k) {
    const double tau = k * params_.substep;
    const double sp = pred.profile.position_at(now - pred.t0 + tau);
    if (sp - l >= exit_s) break;  // predecessor gone
    if (sp - l - own.position_at(tau) < params_.rear_gap) return true;
  }
  return false;
}

Verdict AdmissionDesk::evaluate(const AdmissionRequest& r, double now) const {
  const double floor = r.plan.accel > 0.0 ? params_.min_launch_speed : params_.min_crossing_speed;
  if (r.plan.v_cross < floor) return Verdict::kHoldSpeed;
  const MotionProfile own(r.s, r.v, r.plan, params_.substep);
  if (rear_end_risk(r, own, now)) return Verdict::kHoldRearEnd;
  const auto mine = windows(r, now);
  for (const auto& [id, e] : entries_) {
    if (id == r.id) continue;
    for (const auto& theirs : e.windows) {
      for (const auto& w : mine) {
        if (w.conflict == theirs.conflict && w.cells.intersects(theirs.cells)) {
          return Verdict::kHoldConflict;
        }
      }
    }
  }
  return Verdict::kAdmit;
}

Verdict AdmissionDesk::request(const AdmissionRequest& r, double now) {
  if (admitted(r.id)) throw ContractViolation("vehicle already admitted");
  const Verdict v = evaluate(r, now);
  if (v != Verdict::kAdmit) return v;
  Entry e{r.trajectory, now, MotionProfile(r.s, r.v, r.plan, params_.substep), windows(r, now)};
  entries_.emplace(r.id, std::move(e));
  lane_order_.at(r.trajectory).push_back(r.id);
  return v;
}

void AdmissionDesk::release(VehicleId id) {
  auto it = entries_.find(id);
  if (it == entries_.end()) return;
  auto& lane = lane_order_.at(it->second.trajectory);
  lane.erase(std::remove(lane.begin(), lane.end(), id), lane.end());
  entries_.erase(it);
}

const std::vector<GateWindow>* AdmissionDesk::windows_of(VehicleId id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second.windows;
}

// ---------------------------------------------------------------- collisions

Footprint footprint(const TrajectoryPath& path, double s, const VehicleParams& dims) {
  const double mid = s - 0.5 * dims.length;
  return {path.position(mid), path.heading(mid), 0.5 * dims.length, 0.5 * dims.width};
}

bool overlap(const Footprint& a, const Footprint& b) {
  const Vec2 ua{std::cos(a.heading), std::sin(a.heading)};
  const Vec2 na{-ua.y, ua.x};
  const Vec2 ub{std::cos(b.heading), std::sin(b.heading)};
  const Vec2 nb{-ub.y, ub.x};
  const Vec2 d = b.center - a.center;
  for (const Vec2& axis : {ua, na, ub, nb}) {
    const double ra = a.half_length * std::abs(dot(ua, axis)) + a.half_width * std::abs(dot(na, axis));
    const double rb = b.half_length * std::abs(dot(ub, axis)) + b.half_width * std::abs(dot(nb, axis));
    if (std::abs(dot(d, axis)) > ra + rb) return false;
  }
  return true;
}

std::vector<CollisionPair> detect_collisions(std::span<const VehicleState> vehicles,
                                             const Layout& layout, const VehicleParams& dims) {
  std::vector<Footprint> fp;
  std::vector<std::size_t> order;
  fp.reserve(vehicles.size());
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    fp.push_back(footprint(layout.path(vehicles[i].trajectory), vehicles[i].s, dims));
    order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return fp[a].center.x != fp[b].center.x ? fp[a].center.x < fp[b].center.x : a < b;
  });
  const double reach = 2.0 * std::hypot(0.5 * dims.length, 0.5 * dims.width);
  std::vector<CollisionPair> out;
  for (std::size_t p = 0; p < order.size(); ++p) {
    const auto i = order[p];
    for (std::size_t q = p + 1; q < order.size(); ++q) {
      const auto j = order[q];
      if (fp[j].center.x - fp[i].center.x > reach) break;
      if (std::abs(fp[j].center.y - fp[i].center.y) > reach) continue;
      if (overlap(fp[i], fp[j])) {
        auto ab = std::minmax(vehicles[i].id, vehicles[j].id);
        out.push_back({ab.first, ab.second});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const CollisionPair& x, const CollisionPair& y) {
    return x.a != y.a ? x.a < y.a : x.b < y.b;
  });
  return out;
}

// ---------------------------------------------------------------- world

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::kActionClamped: return "action_clamped";
    case EventKind::kGateBreach: return "gate_breach";
    case EventKind::kCollision: return "collision";
    case EventKind::kSpawnDeferred: return "spawn_deferred";
  }
  return "?";
}

World::World(std::shared_ptr<const Layout> layout, SimParams params, ArrivalProcess arrivals)
    : layout_(std::move(layout)),
      params_(params),
      arrivals_(std::move(arrivals)),
      desk_(layout_, params_) {
  if (!layout_) throw std::invalid_argument("world needs a layout");
  if (static_cast<int>(arrivals_.rates().size()) != layout_->trajectory_count() &&
      !arrivals_.rates().empty()) {
    throw std::invalid_argument("arrival streams do not match the trajectory count");
  }
  pending_.resize(layout_->trajectory_count());
}

const VehicleState* World::find(VehicleId id) const {
  for (const auto& v : vehicles_) {
    if (v.id == id) return &v;
  }
  return nullptr;
}

std::size_t World::index_of(VehicleId id) const {
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    if (vehicles_[i].id == id) return i;
  }
  throw std::out_of_range("unknown vehicle");
}

const VehicleState* World::leader_of(VehicleId id) const {
  const std::size_t i = index_of(id);
  for (std::size_t k = i; k-- > 0;) {
    if (vehicles_[k].trajectory == vehicles_[i].trajectory) return &vehicles_[k];
  }
  return nullptr;
}

double World::gap_to_leader(const VehicleState& v) const {
  const auto* l = leader_of(v.id);
  return l ? l->s - params_.vehicle.length - v.s : kInf;
}

double World::hold_point() const { return layout_->crossing_entry_s() - params_.hold_offset; }

bool World::frontmost_unadmitted(const VehicleState& v) const {
  if (v.zone != Zone::kPreparation || v.admitted()) return false;
  for (const auto& o : vehicles_) {
    if (o.id == v.id) return true;
    if (o.trajectory == v.trajectory && !o.admitted()) return false;
  }
  return false;
}

bool World::at_commit_point(const VehicleState& v) const {
  if (!frontmost_unadmitted(v)) return false;
  // Once a vehicle has asked, it keeps asking until admitted.
  return tracks_[index_of(v.id)].request_time.has_value() ||
         distance_to_hold(v) <= commit_distance(v.v, params_);
}

std::optional<double> World::request_time(VehicleId id) const {
  return tracks_.at(index_of(id)).request_time;
}

bool World::held(VehicleId id) const { return tracks_.at(index_of(id)).held; }

std::size_t World::pending_arrivals() const {
  std::size_t n = 0;
  for (const auto& q : pending_) n += q.size();
  return n;
}

void World::log(EventKind kind, VehicleId id, VehicleId other, double value) {
  if (events_.size() < params_.event_log_limit) events_.push_back({time(), kind, id, other, value});
}

VehicleId World::add_vehicle(int trajectory, double s, double v) {
  VehicleState st;
  st.id = next_id_++;
  st.trajectory = trajectory;
  st.s = s;
  st.v = std::clamp(v, 0.0, params_.vehicle.v_max);
  st.spawn_time = time();
  st.zone = s < 0.0 ? Zone::kUpstream : Zone::kPreparation;
  Track tr;
  tr.trip.id = st.id;
  tr.trip.trajectory = trajectory;
  tr.trip.spawn_time = st.spawn_time;
  if (st.zone == Zone::kPreparation) tr.trip.t_enter_prep = time();
  vehicles_.push_back(st);
  tracks_.push_back(std::move(tr));
  ++counters_.spawned;
  return st.id;
}

VehicleId World::insert_vehicle(int trajectory, double s, double v) {
  if (trajectory < 0 || trajectory >= layout_->trajectory_count()) {
    throw std::out_of_range("trajectory id");
  }
  if (s >= layout_->crossing_entry_s()) {
    throw std::invalid_argument("vehicles enter the crossing zone only through the gate");
  }
  return add_vehicle(trajectory, s, v);
}

bool World::spawn_clear(int trajectory) const {
  const double spawn_s = layout_->path(trajectory).stop_line_s() - params_.spawn_distance;
  for (std::size_t k = vehicles_.size(); k-- > 0;) {
    const auto& o = vehicles_[k];
    if (o.trajectory != trajectory) continue;
    const double gap = o.s - params_.vehicle.length - spawn_s;
    const double need = params_.spawn_speed * params_.spawn_speed / (2.0 * -params_.vehicle.a_min) +
                        params_.spawn_margin;
    return gap >= need;
  }
  return true;
}

void World::spawn_due() {
  if (arrivals_on_ && !arrivals_.rates().empty()) {
    arrivals_.advance(time(), arrival_buf_);
    for (const auto& a : arrival_buf_) {
      pending_[a.trajectory].push_back(a.time);
      ++counters_.arrivals;
    }
  }
  for (int j = 0; j < static_cast<int>(pending_.size()); ++j) {
    auto& q = pending_[j];
    if (q.empty() || !spawn_clear(j)) continue;
    const double arrived = q.front();
    q.pop_front();
    const VehicleId id = add_vehicle(j, layout_->path(j).stop_line_s() - params_.spawn_distance,
                                     params_.spawn_speed);
    if (time() - arrived > params_.substep + 1e-9) {
      ++counters_.deferred;
      log(EventKind::kSpawnDeferred, id, 0, time() - arrived);
    }
  }
}

void World::admission_phase(const std::unordered_map<VehicleId, const Command*>& cmds,
                            StepReport& report) {
  struct Candidate {
    double dist;
    std::size_t index;
  };
  std::vector<Candidate> cand;
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    auto& tr = tracks_[i];
    tr.held = false;
    const auto& v = vehicles_[i];
    if (!at_commit_point(v)) continue;
    if (!tr.request_time) tr.request_time = time();
    cand.push_back({distance_to_hold(v), i});
  }
  std::sort(cand.begin(), cand.end(), [&](const Candidate& a, const Candidate& b) {
    return a.dist != b.dist ? a.dist < b.dist : vehicles_[a.index].id < vehicles_[b.index].id;
  });
  const double b_entry = layout_->crossing_entry_s();
  for (const auto& c : cand) {
    auto& v = vehicles_[c.index];
    auto it = cmds.find(v.id);
    const bool wants = it == cmds.end() || it->second->request;
    Verdict verdict = Verdict::kHoldConflict;
    CrossingPlan plan;
    if (wants) {
      // Preferred plan: accelerate up to the zone entry (a vehicle already
      // close to it launches over a short run-up). Holding the current
      // speed is the fallback.
      std::array<CrossingPlan, 2> options;
      int n = 0;
      if (v.v < params_.vehicle.v_max) {
        const double target = std::max(b_entry, v.s + 2.0);
        options[n++] = {params_.vehicle.a_max, launch_speed(v.s, v.v, target, params_.vehicle.a_max,
                                                            params_.vehicle.v_max, params_.substep)};
      }
      if (v.v >= params_.min_crossing_speed) options[n++] = {0.0, v.v};
      for (int k = 0; k < n && verdict != Verdict::kAdmit; ++k) {
        plan = options[k];
        verdict = desk_.request({v.id, v.trajectory, v.s, v.v, plan}, time());
      }
    }
    if (verdict == Verdict::kAdmit) {
      v.plan = plan;
      report.admitted.push_back(v.id);
      ++counters_.admissions;
    } else {
      tracks_[c.index].held = true;
      report.held.push_back(v.id);
      ++counters_.holds;
    }
  }
}

StepReport World::step(std::span<const Command> commands) {
  StepReport report;
  std::unordered_map<VehicleId, const Command*> cmds;
  cmds.reserve(commands.size());
  for (const auto& c : commands) cmds[c.id] = &c;

  admission_phase(cmds, report);

  const auto& vp = params_.vehicle;
  std::vector<double> accel(vehicles_.size(), 0.0);
  std::vector<const VehicleState*> last(layout_->trajectory_count(), nullptr);
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    const auto& v = vehicles_[i];
    const VehicleState* leader = last[v.trajectory];
    last[v.trajectory] = &v;
    if (v.admitted()) continue;
    const double gap = leader ? leader->s - vp.length - v.s : kInf;
    // Vehicles without a command drive by the built-in car-following model.
    double a = follow_accel(gap, v.v, leader ? leader->v : v.v, params_);
    if (v.zone != Zone::kUpstream) {
      auto it = cmds.find(v.id);
      if (it != cmds.end()) {
        a = it->second->accel;
        if (!std::isfinite(a) || a < vp.a_min || a > vp.a_max) {
          const double raw = a;
          a = std::isfinite(a) ? std::clamp(a, vp.a_min, vp.a_max) : 0.0;
          ++report.clamped;
          ++counters_.clamped;
          log(EventKind::kActionClamped, v.id, 0, raw);
        }
      }
      if (tracks_[i].held) a = std::min(a, stop_accel(distance_to_hold(v), v.v, params_));
      if (tracks_[i].breached) a = vp.a_min;
    }
    accel[i] = safety_override(gap, v.v, a, params_);
  }

  for (int k = 0; k < params_.substeps_per_action; ++k) {
    substep_motion(accel, report);
    spawn_due();
    accel.resize(vehicles_.size(), 0.0);
  }
  return report;
}

void World::substep_motion(std::vector<double>& accel, StepReport& report) {
  const double dt = params_.substep;
  const double t0 = time();
  const double t1 = t0 + dt;
  const double b_entry = layout_->crossing_entry_s();
  const auto& vp = params_.vehicle;
  std::vector<Outcome> fate(vehicles_.size(), Outcome::kUnfinished);
  std::vector<bool> gone(vehicles_.size(), false);

  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    auto& v = vehicles_[i];
    auto& tr = tracks_[i];
    const double s0 = v.s, v0 = v.v;
    Kinematics kin{};
    if (v.plan) {
      kin = integrate_plan_substep(s0, v0, *v.plan, dt);
      if (v.zone == Zone::kCrossing && kin.v != *v.crossing_speed) {
        throw std::logic_error("speed changed inside the crossing zone");
      }
    } else {
      kin = integrate_substep(s0, v0, accel[i], dt, vp.v_max);
    }
    const double a_eff = (kin.v - v0) / dt;
    const bool metered = v.zone == Zone::kPreparation || v.zone == Zone::kCrossing;
    if (metered && !tr.front_exited) tr.trip.fuel_ml += substep_fuel(v0, kin.v, a_eff, dt);
    v.s = kin.s;
    v.v = kin.v;
    v.accel = a_eff;

    if (v.zone == Zone::kUpstream && v.s >= 0.0) {
      v.zone = Zone::kPreparation;
      tr.trip.t_enter_prep = t0 + (0.0 - s0) / v.v;
    }
    if (v.zone == Zone::kPreparation && v.s >= b_entry) {
      if (!v.plan && !tr.breached) {
        // The vehicle could not stop before the crossing zone: literal gate check.
        const CrossingPlan cruise{0.0, v.v};
        if (desk_.request({v.id, v.trajectory, v.s, v.v, cruise}, t1) == Verdict::kAdmit) {
          v.plan = cruise;
          report.admitted.push_back(v.id);
          ++counters_.admissions;
        } else {
          tr.breached = true;
          ++report.breaches;
          ++counters_.breaches;
          log(EventKind::kGateBreach, v.id, 0, v.v);
        }
      }
      if (v.plan && v.v == v.plan->v_cross) {
        v.zone = Zone::kCrossing;
        v.crossing_speed = v.v;
      }
    }
    if (v.zone == Zone::kPreparation && v.v < kSpeedFloor) tr.trip.stopped = true;
    const double exit_s = layout_->path(v.trajectory).exit_s();
    if (!tr.front_exited && v.zone != Zone::kUpstream && v.s >= exit_s) {
      tr.front_exited = true;
      tr.trip.t_exit_cross = t0 + (exit_s - s0) / v.v;
    }
    if (params_.record_series) {
      tr.trip.speed.push_back(static_cast<float>(v.v));
      tr.trip.accel.push_back(static_cast<float>(a_eff));
    }
    if (v.zone == Zone::kCrossing && v.s - vp.length >= exit_s) {
      v.zone = Zone::kDone;
      fate[i] = Outcome::kPassed;
      gone[i] = true;
    }
  }
  ++substeps_;

  const auto pairs = detect_collisions(vehicles_, *layout_, vp);
  for (const auto& p : pairs) {
    const std::size_t ia = index_of(p.a), ib = index_of(p.b);
    if (gone[ia] && fate[ia] == Outcome::kPassed && gone[ib] && fate[ib] == Outcome::kPassed) {
      continue;
    }
    report.collisions.push_back(p);
    ++counters_.collisions;
    const auto& va = vehicles_[ia];
    const auto& vb = vehicles_[ib];
    const auto fa = footprint(layout_->path(va.trajectory), va.s, vp);
    const auto fb = footprint(layout_->path(vb.trajectory), vb.s, vp);
    collision_log_.push_back({time(), p.a, p.b, va.trajectory, vb.trajectory,
                              0.5 * (fa.center + fb.center)});
    log(EventKind::kCollision, p.a, p.b, 0.0);
    for (auto idx : {ia, ib}) {
      fate[idx] = Outcome::kCollided;
      gone[idx] = true;
    }
  }

  for (std::size_t i = vehicles_.size(); i-- > 0;) {
    if (!gone[i]) continue;
    remove_vehicle(i, fate[i], report);
    accel.erase(accel.begin() + static_cast<std::ptrdiff_t>(i));
  }
}

void World::remove_vehicle(std::size_t index, Outcome outcome, StepReport& report) {
  auto& tr = tracks_[index];
  tr.trip.outcome = outcome;
  desk_.release(vehicles_[index].id);
  report.finished.push_back(vehicles_[index].id);
  trips_.push_back(std::move(tr.trip));
  vehicles_.erase(vehicles_.begin() + static_cast<std::ptrdiff_t>(index));
  tracks_.erase(tracks_.begin() + static_cast<std::ptrdiff_t>(index));
}

std::vector<TripRecord> World::finish() {
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    auto& tr = tracks_[i];
    tr.trip.outcome = Outcome::kUnfinished;
    desk_.release(vehicles_[i].id);
    trips_.push_back(std::move(tr.trip));
  }
  vehicles_.clear();
  tracks_.clear();
  std::vector<TripRecord> all = trips_;
  std::sort(all.begin(), all.end(),
            [](const TripRecord& a, const TripRecord& b) { return a.id < b.id; });
  return all;
}

}  // namespace crossway
