// Intersection layout: predefined trajectories and the conflict points
// between them.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace crossway {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 rotate(Vec2 a, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * a.x - s * a.y, s * a.x + c * a.y};
}

/// Compass side a vehicle comes from.
enum class Approach : std::uint8_t { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };
enum class Movement : std::uint8_t { kLeft = 0, kStraight = 1, kRight = 2 };

std::string_view to_string(Approach a);
std::string_view to_string(Movement m);

/// Approach whose vehicles are on the right-hand side of a driver coming
/// from `a` (right-hand traffic).
constexpr Approach right_of(Approach a) {
  return static_cast<Approach>((static_cast<int>(a) + 3) % 4);
}
constexpr bool adjacent(Approach a, Approach b) {
  const int d = (static_cast<int>(a) - static_cast<int>(b) + 4) % 4;
  return d == 1 || d == 3;
}
constexpr bool opposite(Approach a, Approach b) {
  return (static_cast<int>(a) - static_cast<int>(b) + 4) % 4 == 2;
}

class LayoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LayoutConfig {
  double lane_width = 3.5;
  /// Distance from the last cross-street lane edge back to the stop line.
  double stop_line_setback = 4.0;
  double prep_depth = 100.0;
  double crossing_margin = 5.0;
  /// 0 selects the radius tangent to both entry and exit lane centerlines.
  double left_turn_radius = 0.0;
  double right_turn_radius = 0.0;
  double vehicle_width = 1.8;
  double sample_step = 0.1;

  /// Half side of the square bounded by the four stop lines.
  double box_half() const { return 3.0 * lane_width + stop_line_setback; }
};

/// A predefined route, parameterized by arc length. s = 0 is the entry of
/// the preparation zone; positions outside [0, exit_s] extrapolate along the
/// end tangents.
class TrajectoryPath {
 public:
  struct Piece {
    double s0 = 0.0;
    double length = 0.0;
    Vec2 start;
    double heading = 0.0;    // at piece start
    double curvature = 0.0;  // signed, 0 for straight pieces
  };

  TrajectoryPath(int id, Approach approach, Movement movement,
                 std::vector<Piece> pieces, double stop_line_s, double exit_s,
                 double sample_step);

  int id() const { return id_; }
  Approach approach() const { return approach_; }
  Movement movement() const { return movement_; }
  double stop_line_s() const { return stop_line_s_; }
  double exit_s() const { return exit_s_; }

  Vec2 position(double s) const;
  Vec2 tangent(double s) const;
  double heading(double s) const;

  const std::vector<Vec2>& polyline() const { return polyline_; }
  double sample_step() const { return sample_step_; }
  const std::vector<Piece>& pieces() const { return pieces_; }

 private:
  const Piece& piece_at(double s) const;

  int id_;
  Approach approach_;
  Movement movement_;
  std::vector<Piece> pieces_;
  double stop_line_s_;
  double exit_s_;
  double sample_step_;
  std::vector<Vec2> polyline_;
};

struct ConflictMember {
  int trajectory = -1;
  double s = 0.0;
};

struct ConflictPoint {
  int id = -1;
  Vec2 position;
  std::array<ConflictMember, 2> members;
  /// Angle between the two tangents, kept inside [kMinCrossingAngle, pi - kMinCrossingAngle].
  double theta = 0.0;

  bool on(int trajectory) const {
    return members[0].trajectory == trajectory || members[1].trajectory == trajectory;
  }
  double arc_on(int trajectory) const;
  int other(int trajectory) const;
};

inline constexpr double kMinCrossingAngle = 0.1;

struct ConflictMap {
  /// Conflict ids per trajectory, ordered by arc length along it.
  std::vector<std::vector<int>> conflicts_on;
  /// Conflicting trajectory ids per trajectory, ascending.
  std::vector<std::vector<int>> conflicting;
};

class Layout {
 public:
  Layout(LayoutConfig config, std::vector<TrajectoryPath> paths,
         std::vector<ConflictPoint> conflicts);

  const LayoutConfig& config() const { return config_; }
  const std::vector<TrajectoryPath>& paths() const { return paths_; }
  const TrajectoryPath& path(int id) const { return paths_.at(id); }
  const std::vector<ConflictPoint>& conflicts() const { return conflicts_; }
  const ConflictPoint& conflict(int id) const { return conflicts_.at(id); }
  const ConflictMap& map() const { return map_; }
  int trajectory_count() const { return static_cast<int>(paths_.size()); }
  int conflict_count() const { return static_cast<int>(conflicts_.size()); }

  /// Arc length of the crossing-zone entry on every path.
  double crossing_entry_s() const { return config_.prep_depth - config_.crossing_margin; }

 private:
  LayoutConfig config_;
  std::vector<TrajectoryPath> paths_;
  std::vector<ConflictPoint> conflicts_;
  ConflictMap map_;
};

/// Trajectory id for the standard four-approach, three-movement scenario.
constexpr int trajectory_id(Approach a, Movement m) {
  return static_cast<int>(a) * 3 + static_cast<int>(m);
}

TrajectoryPath make_trajectory(const LayoutConfig& config, Approach approach,
                               Movement movement);

/// Transversal intersections of two paths inside the crossing zone. Returned
/// points carry id -1; Layout assigns ids.
std::vector<ConflictPoint> conflict_points(const TrajectoryPath& a, const TrajectoryPath& b,
                                           double crossing_margin);

Layout build_layout(const LayoutConfig& config);

/// Signed distance along the vehicle's trajectory from its front bumper to
/// the conflict point; negative once the point is passed.
double distance_to_conflict(double vehicle_s, const ConflictPoint& cp, int trajectory);

nlohmann::json layout_to_json(const Layout& layout);

}  // namespace crossway
