// Spatio-temporal reservation table over conflict points, occupancy windows,
// right-of-way rules and the resulting conflict labels.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "geometry.hpp"
#include "vehicle.hpp"

namespace crossway {

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct OccupancyWindow {
  double t1 = 0.0;
  double t2 = 0.0;
  double eps = 0.0;
  /// Speed below the floor; the window was widened to the whole horizon.
  bool worst_case = false;
};

inline constexpr double kSpeedFloor = 0.1;

/// Time interval during which a vehicle with front bumper `d` metres before a
/// conflict point, driving at constant speed `v`, occupies it. `front` and
/// `rear` are the buffers added before arrival and after the rear bumper
/// clears the point.
OccupancyWindow occupancy_window(double d, double l, double v, double front, double rear,
                                 double horizon);

inline OccupancyWindow occupancy_window(double d, double l, double v, double eps,
                                        double horizon) {
  auto w = occupancy_window(d, l, v, eps, eps, horizon);
  w.eps = eps;
  return w;
}

enum class BufferMode : std::uint8_t {
  /// Fixed safety buffer eps on both sides.
  kSimplified,
  /// w1/2 |cot theta| + w2/2, the tangent-geometry form.
  kExact,
  /// max(eps, w1/2 |cot theta| + w2 / (2 sin theta)) + margin. Conservative
  /// for two rectangles crossing at angle theta.
  kEnvelope,
};

struct ReservationParams {
  double dt = 0.2;
  double horizon = 100.0;
  double eps = 1.0;
  BufferMode mode = BufferMode::kSimplified;
  double envelope_margin = 0.5;

  int steps() const;
};

struct Buffers {
  double front = 0.0;
  double rear = 0.0;
};

Buffers conflict_buffers(const ReservationParams& params, double theta, double width_self,
                         double width_other);

/// Inclusive range of table steps; empty when first > last.
struct CellRange {
  int first = 0;
  int last = -1;

  bool empty() const { return first > last; }
  bool intersects(const CellRange& o) const {
    return !empty() && !o.empty() && first <= o.last && o.first <= last;
  }
};

CellRange cells_for(const OccupancyWindow& w, const ReservationParams& params);

class ReservationTable {
 public:
  ReservationTable() = default;
  ReservationTable(int conflict_count, ReservationParams params);

  int conflict_count() const { return conflicts_; }
  int steps() const { return steps_; }
  const ReservationParams& params() const { return params_; }
  double generated_at() const { return generated_at_; }
  void set_generated_at(double t) { generated_at_ = t; }

  void clear();

  /// Adds `id` to every cell of `range` on row `conflict`. Ids already
  /// present in those cells are appended to `met` (may repeat).
  void insert(VehicleId id, int conflict, CellRange range, std::vector<VehicleId>* met = nullptr);

  bool occupied(int conflict, CellRange range) const;
  std::span<const VehicleId> cell(int conflict, int step) const;
  std::optional<CellRange> range_of(VehicleId id, int conflict) const;

  /// Sparse (conflict, step, ids) triples of every non-empty cell.
  struct CellDump {
    int conflict;
    int step;
    std::vector<VehicleId> ids;
  };
  std::vector<CellDump> dump() const;

 private:
  std::size_t index(int conflict, int step) const {
    return static_cast<std::size_t>(conflict) * static_cast<std::size_t>(steps_) +
           static_cast<std::size_t>(step);
  }
  static std::uint64_t key(VehicleId id, int conflict) {
    return (static_cast<std::uint64_t>(id) << 24) | static_cast<std::uint32_t>(conflict);
  }

  int conflicts_ = 0;
  int steps_ = 0;
  ReservationParams params_;
  double generated_at_ = 0.0;
  std::vector<std::vector<VehicleId>> cells_;
  std::vector<std::size_t> touched_;
  std::unordered_map<std::uint64_t, CellRange> ranges_;
};

struct ConflictPair {
  VehicleId a = 0;  // a < b
  VehicleId b = 0;
  std::vector<int> conflicts;  // rows where the two met, ascending
};

struct TableUpdate {
  ReservationTable table;
  /// H': every vehicle sharing a cell with another one, ascending.
  std::vector<VehicleId> conflicted;
  std::vector<ConflictPair> pairs;  // ordered by (a, b)
  /// Vehicles whose speed fell below the floor this step.
  std::vector<VehicleId> worst_case;
};

/// Whether a vehicle in this zone takes part in the reservation table.
inline bool in_intersection_area(Zone z) {
  return z == Zone::kPreparation || z == Zone::kCrossing;
}

/// Rebuilds the table from scratch for the given vehicles (all of them are
/// inserted; callers filter by zone) and reports every conflicting pair.
TableUpdate update_table(std::span<const VehicleState> vehicles, const Layout& layout,
                         const ReservationParams& params, const VehicleParams& dims,
                         double now = 0.0);

enum class PriorityRule : std::uint8_t {
  kArrivalOrder = 1,   // previous table showed a strict order
  kRightHand = 2,      // adjacent approaches, vehicle on the right
  kStraightFirst = 3,  // opposite approaches, straight movement
  kTieBreak = 4,       // lower trajectory id, then lower vehicle id
};

struct PriorityDecision {
  VehicleId leader = 0;
  VehicleId follower = 0;
  PriorityRule rule = PriorityRule::kTieBreak;
};

struct PriorityParty {
  VehicleId id = 0;
  int trajectory = -1;
};

/// Right of way between two vehicles that share a cell in `current`.
/// Throws ContractViolation when they do not.
PriorityDecision assign_priority(const PriorityParty& hi, const PriorityParty& hj,
                                 const ReservationTable& current,
                                 const ReservationTable* previous, const Layout& layout);

struct ConflictLabels {
  int conflict = 0;
  int active = 0;
  int passive = 0;

  friend bool operator==(const ConflictLabels&, const ConflictLabels&) = default;
};

ConflictLabels conflict_labels(VehicleId id, std::span<const VehicleId> conflicted,
                               std::span<const PriorityDecision> decisions);

/// Priorities for all pairs of an update plus per-vehicle labels.
struct ConflictAssessment {
  std::vector<PriorityDecision> decisions;  // parallel to TableUpdate::pairs
  std::unordered_map<VehicleId, ConflictLabels> labels;

  ConflictLabels labels_of(VehicleId id) const {
    auto it = labels.find(id);
    return it == labels.end() ? ConflictLabels{} : it->second;
  }
};

ConflictAssessment assess_conflicts(const TableUpdate& update, const ReservationTable* previous,
                                    std::span<const VehicleState> vehicles, const Layout& layout);

}  // namespace crossway
