#include "reservation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace crossway {

OccupancyWindow occupancy_window(double d, double l, double v, double front, double rear,
                                 double horizon) {
  OccupancyWindow w;
  w.eps = front;
  if (d + l + rear <= 0.0) return w;  // rear already clear of the point
  if (v < kSpeedFloor) {
    w.t1 = 0.0;
    w.t2 = horizon;
    w.worst_case = true;
    return w;
  }
  w.t1 = std::clamp((d - front) / v, 0.0, horizon);
  w.t2 = std::clamp((d + l + rear) / v, 0.0, horizon);
  return w;
}

int ReservationParams::steps() const {
  return static_cast<int>(std::ceil(horizon / dt - 1e-9));
}

Buffers conflict_buffers(const ReservationParams& params, double theta, double width_self,
                         double width_other) {
  theta = std::clamp(theta, kMinCrossingAngle, std::numbers::pi - kMinCrossingAngle);
  const double cot = std::abs(std::cos(theta) / std::sin(theta));
  switch (params.mode) {
    case BufferMode::kSimplified:
      return {params.eps, params.eps};
    case BufferMode::kExact: {
      const double b = 0.5 * width_self * cot + 0.5 * width_other;
      return {b, b};
    }
    case BufferMode::kEnvelope: {
      const double geo = 0.5 * width_self * cot + 0.5 * width_other / std::sin(theta);
      const double b = std::max(params.eps, geo) + params.envelope_margin;
      return {b, b};
    }
  }
  return {params.eps, params.eps};
}

CellRange cells_for(const OccupancyWindow& w, const ReservationParams& params) {
  if (!(w.t2 > w.t1)) return {};
  const int n = params.steps();
  CellRange r;
  r.first = static_cast<int>(std::floor(w.t1 / params.dt + 1e-12));
  r.last = std::min(n - 1, static_cast<int>(std::ceil(w.t2 / params.dt - 1e-12)) - 1);
  return r;
}

ReservationTable::ReservationTable(int conflict_count, ReservationParams params)
    : conflicts_(conflict_count), steps_(params.steps()), params_(params) {
  cells_.resize(static_cast<std::size_t>(conflicts_) * static_cast<std::size_t>(steps_));
}

void ReservationTable::clear() {
  for (auto i : touched_) cells_[i].clear();
  touched_.clear();
  ranges_.clear();
}

void ReservationTable::insert(VehicleId id, int conflict, CellRange range,
                              std::vector<VehicleId>* met) {
  if (conflict < 0 || conflict >= conflicts_) throw std::out_of_range("conflict row");
  ranges_[key(id, conflict)] = range;
  if (range.empty()) return;
  const int first = std::max(range.first, 0);
  const int last = std::min(range.last, steps_ - 1);
  for (int k = first; k <= last; ++k) {
    auto& cell = cells_[index(conflict, k)];
    if (cell.empty()) touched_.push_back(index(conflict, k));
    if (met != nullptr) met->insert(met->end(), cell.begin(), cell.end());
    cell.push_back(id);
  }
}

bool ReservationTable::occupied(int conflict, CellRange range) const {
  if (range.empty()) return false;
  const int first = std::max(range.first, 0);
  const int last = std::min(range.last, steps_ - 1);
  for (int k = first; k <= last; ++k) {
    if (!cells_[index(conflict, k)].empty()) return true;
  }
  return false;
}

std::span<const VehicleId> ReservationTable::cell(int conflict, int step) const {
  return cells_.at(index(conflict, step));
}

std::optional<CellRange> ReservationTable::range_of(VehicleId id, int conflict) const {
  auto it = ranges_.find(key(id, conflict));
  if (it == ranges_.end()) return std::nullopt;
  return it->second;
}

std::vector<ReservationTable::CellDump> ReservationTable::dump() const {
  std::vector<CellDump> out;
  std::vector<std::size_t> idx = touched_;
  std::sort(idx.begin(), idx.end());
  for (auto i : idx) {
    if (cells_[i].empty()) continue;
    out.push_back({static_cast<int>(i / static_cast<std::size_t>(steps_)),
                   static_cast<int>(i % static_cast<std::size_t>(steps_)), cells_[i]});
  }
  return out;
}

TableUpdate update_table(std::span<const VehicleState> vehicles, const Layout& layout,
                         const ReservationParams& params, const VehicleParams& dims,
                         double now) {
  TableUpdate out{ReservationTable(layout.conflict_count(), params), {}, {}, {}};
  out.table.set_generated_at(now);
  std::map<std::pair<VehicleId, VehicleId>, std::vector<int>> pairs;
  std::vector<VehicleId> conflicted;
  std::vector<VehicleId> met;

  for (const auto& veh : vehicles) {
    bool flagged = false;
    for (int c : layout.map().conflicts_on.at(veh.trajectory)) {
      const auto& cp = layout.conflict(c);
      const double d = distance_to_conflict(veh.s, cp, veh.trajectory);
      const Buffers buf = conflict_buffers(params, cp.theta, dims.width, dims.width);
      const auto w = occupancy_window(d, dims.length, veh.v, buf.front, buf.rear, params.horizon);
      flagged = flagged || w.worst_case;
      met.clear();
      out.table.insert(veh.id, c, cells_for(w, params), &met);
      if (met.empty()) continue;
      conflicted.push_back(veh.id);
      for (VehicleId other : met) {
        if (other == veh.id) continue;
        conflicted.push_back(other);
        auto key = std::minmax(veh.id, other);
        auto& rows = pairs[{key.first, key.second}];
        if (rows.empty() || rows.back() != c) rows.push_back(c);
      }
    }
    if (flagged) out.worst_case.push_back(veh.id);
  }

  std::sort(conflicted.begin(), conflicted.end());
  conflicted.erase(std::unique(conflicted.begin(), conflicted.end()), conflicted.end());
  out.conflicted = std::move(conflicted);
  out.pairs.reserve(pairs.size());
  for (auto& [k, rows] : pairs) {
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    out.pairs.push_back({k.first, k.second, std::move(rows)});
  }
  return out;
}

namespace {

std::vector<int> shared_cells(const ReservationTable& table, VehicleId a, VehicleId b,
                              const Layout& layout, int traj_a) {
  std::vector<int> rows;
  for (int c : layout.map().conflicts_on.at(traj_a)) {
    auto ra = table.range_of(a, c);
    auto rb = table.range_of(b, c);
    if (ra && rb && ra->intersects(*rb)) rows.push_back(c);
  }
  return rows;
}

PriorityDecision make(VehicleId leader, VehicleId follower, PriorityRule rule) {
  return {leader, follower, rule};
}

}  // namespace

PriorityDecision assign_priority(const PriorityParty& hi, const PriorityParty& hj,
                                 const ReservationTable& current,
                                 const ReservationTable* previous, const Layout& layout) {
  if (hi.id == hj.id) throw ContractViolation("assign_priority needs two vehicles");
  const auto rows = shared_cells(current, hi.id, hj.id, layout, hi.trajectory);
  if (rows.empty()) throw ContractViolation("assign_priority on a non-conflicting pair");

  // Rule 1: a strict order in the previous table survives.
  if (previous != nullptr) {
    int verdict = 0;  // +1 hi first, -1 hj first
    bool decided = true;
    for (int c : rows) {
      auto ri = previous->range_of(hi.id, c);
      auto rj = previous->range_of(hj.id, c);
      if (!ri || !rj || ri->empty() || rj->empty()) {
        decided = false;
        break;
      }
      int here = 0;
      if (rj->first > ri->last) here = +1;
      else if (ri->first > rj->last) here = -1;
      if (here == 0 || (verdict != 0 && here != verdict)) {
        decided = false;
        break;
      }
      verdict = here;
    }
    if (decided && verdict != 0) {
      return verdict > 0 ? make(hi.id, hj.id, PriorityRule::kArrivalOrder)
                         : make(hj.id, hi.id, PriorityRule::kArrivalOrder);
    }
  }

  const auto& pi = layout.path(hi.trajectory);
  const auto& pj = layout.path(hj.trajectory);
  if (adjacent(pi.approach(), pj.approach())) {
    return right_of(pi.approach()) == pj.approach()
               ? make(hj.id, hi.id, PriorityRule::kRightHand)
               : make(hi.id, hj.id, PriorityRule::kRightHand);
  }
  if (opposite(pi.approach(), pj.approach())) {
    const bool si = pi.movement() == Movement::kStraight;
    const bool sj = pj.movement() == Movement::kStraight;
    if (si != sj) {
      return si ? make(hi.id, hj.id, PriorityRule::kStraightFirst)
                : make(hj.id, hi.id, PriorityRule::kStraightFirst);
    }
  }
  const bool i_first = hi.trajectory != hj.trajectory ? hi.trajectory < hj.trajectory
                                                      : hi.id < hj.id;
  return i_first ? make(hi.id, hj.id, PriorityRule::kTieBreak)
                 : make(hj.id, hi.id, PriorityRule::kTieBreak);
}

ConflictLabels conflict_labels(VehicleId id, std::span<const VehicleId> conflicted,
                               std::span<const PriorityDecision> decisions) {
  ConflictLabels l;
  l.conflict = std::binary_search(conflicted.begin(), conflicted.end(), id) ? 1 : 0;
  for (const auto& d : decisions) {
    if (d.leader == id) l.passive = 1;
    if (d.follower == id) l.active = 1;
  }
  return l;
}

ConflictAssessment assess_conflicts(const TableUpdate& update, const ReservationTable* previous,
                                    std::span<const VehicleState> vehicles, const Layout& layout) {
  std::unordered_map<VehicleId, int> traj;
  traj.reserve(vehicles.size());
  for (const auto& v : vehicles) traj[v.id] = v.trajectory;

  ConflictAssessment out;
  out.decisions.reserve(update.pairs.size());
  for (const auto& p : update.pairs) {
    out.decisions.push_back(assign_priority({p.a, traj.at(p.a)}, {p.b, traj.at(p.b)},
                                            update.table, previous, layout));
  }
  for (VehicleId id : update.conflicted) out.labels[id].conflict = 1;
  for (const auto& d : out.decisions) {
    out.labels[d.leader].passive = 1;
    out.labels[d.follower].active = 1;
  }
  return out;
}

}  // namespace crossway
