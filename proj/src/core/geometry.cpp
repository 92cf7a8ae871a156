#include "geometry.hpp"

#include <algorithm>
#include <numbers>

namespace crossway {

namespace {

constexpr double kPi = std::numbers::pi;

Vec2 piece_position(const TrajectoryPath::Piece& p, double t) {
  if (p.curvature == 0.0) {
    return p.start + t * Vec2{std::cos(p.heading), std::sin(p.heading)};
  }
  const double k = p.curvature;
  const double h = p.heading + k * t;
  return p.start + (1.0 / k) * Vec2{std::sin(h) - std::sin(p.heading),
                                    std::cos(p.heading) - std::cos(h)};
}

double approach_rotation(Approach a) {
  // The canonical frame is a vehicle coming from the south, heading north.
  switch (a) {
    case Approach::kSouth: return 0.0;
    case Approach::kEast: return kPi / 2.0;
    case Approach::kNorth: return kPi;
    case Approach::kWest: return -kPi / 2.0;
  }
  return 0.0;
}

struct SegmentHit {
  double sa;
  double sb;
};

}  // namespace

std::string_view to_string(Approach a) {
  switch (a) {
    case Approach::kNorth: return "N";
    case Approach::kEast: return "E";
    case Approach::kSouth: return "S";
    case Approach::kWest: return "W";
  }
  return "?";
}

std::string_view to_string(Movement m) {
  switch (m) {
    case Movement::kLeft: return "left";
    case Movement::kStraight: return "straight";
    case Movement::kRight: return "right";
  }
  return "?";
}

TrajectoryPath::TrajectoryPath(int id, Approach approach, Movement movement,
                               std::vector<Piece> pieces, double stop_line_s, double exit_s,
                               double sample_step)
    : id_(id),
      approach_(approach),
      movement_(movement),
      pieces_(std::move(pieces)),
      stop_line_s_(stop_line_s),
      exit_s_(exit_s),
      sample_step_(sample_step) {
  if (pieces_.empty()) throw LayoutError("trajectory without pieces");
  if (!(stop_line_s_ < exit_s_)) throw LayoutError("stop line must precede the exit");
  const auto n = static_cast<std::size_t>(std::floor(exit_s_ / sample_step_));
  polyline_.reserve(n + 2);
  for (std::size_t i = 0; i <= n; ++i) polyline_.push_back(position(i * sample_step_));
  if (exit_s_ - n * sample_step_ > 1e-9) polyline_.push_back(position(exit_s_));
}

const TrajectoryPath::Piece& TrajectoryPath::piece_at(double s) const {
  for (const auto& p : pieces_) {
    if (s < p.s0 + p.length) return p;
  }
  return pieces_.back();
}

Vec2 TrajectoryPath::position(double s) const {
  const Piece& first = pieces_.front();
  if (s < first.s0) {
    return first.start + (s - first.s0) * Vec2{std::cos(first.heading), std::sin(first.heading)};
  }
  const Piece& last = pieces_.back();
  const double end = last.s0 + last.length;
  if (s > end) {
    const double h = last.heading + last.curvature * last.length;
    return piece_position(last, last.length) + (s - end) * Vec2{std::cos(h), std::sin(h)};
  }
  const Piece& p = piece_at(s);
  return piece_position(p, s - p.s0);
}

double TrajectoryPath::heading(double s) const {
  const Piece& first = pieces_.front();
  if (s < first.s0) return first.heading;
  const Piece& p = piece_at(s);
  const double t = std::clamp(s - p.s0, 0.0, p.length);
  return p.heading + p.curvature * t;
}

Vec2 TrajectoryPath::tangent(double s) const {
  const double h = heading(s);
  return {std::cos(h), std::sin(h)};
}

double ConflictPoint::arc_on(int trajectory) const {
  if (members[0].trajectory == trajectory) return members[0].s;
  if (members[1].trajectory == trajectory) return members[1].s;
  throw std::invalid_argument("conflict point " + std::to_string(id) +
                              " is not on trajectory " + std::to_string(trajectory));
}

int ConflictPoint::other(int trajectory) const {
  if (members[0].trajectory == trajectory) return members[1].trajectory;
  if (members[1].trajectory == trajectory) return members[0].trajectory;
  throw std::invalid_argument("conflict point is not on trajectory");
}

TrajectoryPath make_trajectory(const LayoutConfig& config, Approach approach,
                               Movement movement) {
  const double w = config.lane_width;
  const double half = config.box_half();
  const double prep = config.prep_depth;
  const double margin = config.crossing_margin;
  if (w <= config.vehicle_width) throw LayoutError("lane width must exceed vehicle width");
  if (prep <= margin || margin < 0.0) throw LayoutError("invalid zone depths");

  const double entry_y = -half - prep;
  std::vector<TrajectoryPath::Piece> pieces;
  double exit_s = 0.0;

  auto push_line = [&](Vec2 start, double heading, double length) {
    const double s0 = pieces.empty() ? 0.0 : pieces.back().s0 + pieces.back().length;
    pieces.push_back({s0, length, start, heading, 0.0});
  };
  auto push_arc = [&](Vec2 start, double heading, double radius, double turn) {
    const double s0 = pieces.back().s0 + pieces.back().length;
    pieces.push_back({s0, radius * kPi / 2.0, start, heading, turn / radius});
  };

  switch (movement) {
    case Movement::kStraight: {
      const double x = 1.5 * w;
      push_line({x, entry_y}, kPi / 2.0, prep + 2.0 * half + margin);
      exit_s = prep + 2.0 * half + margin;
      break;
    }
    case Movement::kLeft: {
      const double x_in = 0.5 * w;
      const double y_out = 0.5 * w;
      const double r = config.left_turn_radius > 0.0 ? config.left_turn_radius : half + 0.5 * w;
      const double arc_start_y = y_out - r;
      const double arc_end_x = x_in - r;
      if (arc_start_y < -half - 1e-9 || arc_end_x < -half - 1e-9 || r <= 0.0) {
        throw LayoutError("left-turn radius leaves the crossing zone");
      }
      push_line({x_in, entry_y}, kPi / 2.0, arc_start_y - entry_y);
      push_arc({x_in, arc_start_y}, kPi / 2.0, r, +1.0);
      const double tail = (arc_end_x + half) + margin;
      push_line({arc_end_x, y_out}, kPi, tail);
      exit_s = pieces.back().s0 + tail;
      break;
    }
    case Movement::kRight: {
      const double x_in = 2.5 * w;
      const double y_out = -2.5 * w;
      const double r = config.right_turn_radius > 0.0 ? config.right_turn_radius : half - 2.5 * w;
      const double arc_start_y = y_out - r;
      const double arc_end_x = x_in + r;
      if (arc_start_y < -half - 1e-9 || arc_end_x > half + 1e-9 || r <= 0.0) {
        throw LayoutError("right-turn radius leaves the crossing zone");
      }
      push_line({x_in, entry_y}, kPi / 2.0, arc_start_y - entry_y);
      push_arc({x_in, arc_start_y}, kPi / 2.0, r, -1.0);
      const double tail = (half - arc_end_x) + margin;
      push_line({arc_end_x, y_out}, 0.0, tail);
      exit_s = pieces.back().s0 + tail;
      break;
    }
  }

  const double rot = approach_rotation(approach);
  for (auto& p : pieces) {
    p.start = rotate(p.start, rot);
    p.heading += rot;
  }
  return TrajectoryPath(trajectory_id(approach, movement), approach, movement,
                        std::move(pieces), prep, exit_s, config.sample_step);
}

std::vector<ConflictPoint> conflict_points(const TrajectoryPath& a, const TrajectoryPath& b,
                                           double crossing_margin) {
  if (a.id() == b.id()) throw std::invalid_argument("conflict_points needs two distinct paths");

  const auto& pa = a.polyline();
  const auto& pb = b.polyline();
  const double step_a = a.sample_step();
  const double step_b = b.sample_step();
  auto first_index = [](const TrajectoryPath& p, double margin) {
    const double s = std::max(0.0, p.stop_line_s() - margin);
    return static_cast<std::size_t>(std::floor(s / p.sample_step()));
  };
  const std::size_t ia0 = first_index(a, crossing_margin);
  const std::size_t ib0 = first_index(b, crossing_margin);

  auto arc_a = [&](std::size_t i, double t) {
    return std::min(a.exit_s(), (static_cast<double>(i) + t) * step_a);
  };
  auto arc_b = [&](std::size_t j, double u) {
    return std::min(b.exit_s(), (static_cast<double>(j) + u) * step_b);
  };

  std::vector<SegmentHit> hits;
  for (std::size_t i = ia0; i + 1 < pa.size(); ++i) {
    const Vec2 p = pa[i];
    const Vec2 r = pa[i + 1] - p;
    const double minx = std::min(p.x, pa[i + 1].x), maxx = std::max(p.x, pa[i + 1].x);
    const double miny = std::min(p.y, pa[i + 1].y), maxy = std::max(p.y, pa[i + 1].y);
    for (std::size_t j = ib0; j + 1 < pb.size(); ++j) {
      const Vec2 q = pb[j];
      const Vec2 q1 = pb[j + 1];
      if (std::max(q.x, q1.x) < minx - 1e-12 || std::min(q.x, q1.x) > maxx + 1e-12 ||
          std::max(q.y, q1.y) < miny - 1e-12 || std::min(q.y, q1.y) > maxy + 1e-12) {
        continue;
      }
      const Vec2 sv = q1 - q;
      const double denom = cross(r, sv);
      const Vec2 qp = q - p;
      if (std::abs(denom) < 1e-12 * norm(r) * norm(sv)) {
        if (std::abs(cross(qp, r)) < 1e-9 * norm(r)) {
          const double rr = dot(r, r);
          const double t0 = dot(qp, r) / rr;
          const double t1 = dot(q1 - p, r) / rr;
          if (std::max(t0, t1) > 1e-9 && std::min(t0, t1) < 1.0 - 1e-9) {
            throw LayoutError("trajectories " + std::to_string(a.id()) + " and " +
                              std::to_string(b.id()) + " overlap");
          }
        }
        continue;
      }
      const double t = cross(qp, sv) / denom;
      const double u = cross(qp, r) / denom;
      if (t >= 0.0 && t < 1.0 && u >= 0.0 && u < 1.0) {
        hits.push_back({arc_a(i, t), arc_b(j, u)});
      }
    }
  }

  // Newton refinement on the exact curves.
  for (auto& h : hits) {
    for (int it = 0; it < 8; ++it) {
      const Vec2 f = a.position(h.sa) - b.position(h.sb);
      const Vec2 ta = a.tangent(h.sa);
      const Vec2 tb = b.tangent(h.sb);
      const double det = -cross(ta, tb);
      if (std::abs(det) < 1e-9) break;
      // Solve [ta, -tb] * [dsa, dsb] = -f.
      const double dsa = (-f.x * -tb.y - -tb.x * -f.y) / det;
      const double dsb = (ta.x * -f.y - ta.y * -f.x) / det;
      h.sa += dsa;
      h.sb += dsb;
      if (std::abs(dsa) + std::abs(dsb) < 1e-12) break;
    }
  }

  std::sort(hits.begin(), hits.end(),
            [](const SegmentHit& x, const SegmentHit& y) { return x.sa < y.sa; });
  std::vector<SegmentHit> unique;
  for (const auto& h : hits) {
    if (!unique.empty() && std::abs(unique.back().sa - h.sa) < 0.05 &&
        std::abs(unique.back().sb - h.sb) < 0.05) {
      continue;
    }
    unique.push_back(h);
  }

  std::vector<ConflictPoint> out;
  for (const auto& h : unique) {
    if (!(h.sa > a.stop_line_s() && h.sa < a.exit_s() && h.sb > b.stop_line_s() &&
          h.sb < b.exit_s())) {
      continue;
    }
    ConflictPoint cp;
    cp.position = a.position(h.sa);
    cp.members = {ConflictMember{a.id(), h.sa}, ConflictMember{b.id(), h.sb}};
    const double c = std::clamp(dot(a.tangent(h.sa), b.tangent(h.sb)), -1.0, 1.0);
    cp.theta = std::clamp(std::acos(c), kMinCrossingAngle, kPi - kMinCrossingAngle);
    out.push_back(cp);
  }
  return out;
}

Layout::Layout(LayoutConfig config, std::vector<TrajectoryPath> paths,
               std::vector<ConflictPoint> conflicts)
    : config_(config), paths_(std::move(paths)), conflicts_(std::move(conflicts)) {
  const auto n = paths_.size();
  map_.conflicts_on.assign(n, {});
  map_.conflicting.assign(n, {});
  for (std::size_t i = 0; i < conflicts_.size(); ++i) {
    auto& cp = conflicts_[i];
    cp.id = static_cast<int>(i);
    for (const auto& m : cp.members) map_.conflicts_on.at(m.trajectory).push_back(cp.id);
    const int ta = cp.members[0].trajectory, tb = cp.members[1].trajectory;
    map_.conflicting[ta].push_back(tb);
    map_.conflicting[tb].push_back(ta);
  }
  for (std::size_t t = 0; t < n; ++t) {
    auto& ids = map_.conflicts_on[t];
    std::sort(ids.begin(), ids.end(), [&](int x, int y) {
      return conflicts_[x].arc_on(static_cast<int>(t)) < conflicts_[y].arc_on(static_cast<int>(t));
    });
    auto& ts = map_.conflicting[t];
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  }
}

Layout build_layout(const LayoutConfig& config) {
  std::vector<TrajectoryPath> paths;
  for (int a = 0; a < 4; ++a) {
    for (int m = 0; m < 3; ++m) {
      paths.push_back(make_trajectory(config, static_cast<Approach>(a), static_cast<Movement>(m)));
    }
  }
  std::vector<ConflictPoint> conflicts;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    for (std::size_t j = i + 1; j < paths.size(); ++j) {
      auto pts = conflict_points(paths[i], paths[j], config.crossing_margin);
      conflicts.insert(conflicts.end(), pts.begin(), pts.end());
    }
  }
  return Layout(config, std::move(paths), std::move(conflicts));
}

double distance_to_conflict(double vehicle_s, const ConflictPoint& cp, int trajectory) {
  return cp.arc_on(trajectory) - vehicle_s;
}

nlohmann::json layout_to_json(const Layout& layout) {
  using nlohmann::json;
  const auto& c = layout.config();
  json doc;
  doc["schema_version"] = 1;
  doc["config"] = {{"lane_width", c.lane_width},
                   {"stop_line_setback", c.stop_line_setback},
                   {"prep_depth", c.prep_depth},
                   {"crossing_margin", c.crossing_margin},
                   {"left_turn_radius", c.left_turn_radius},
                   {"right_turn_radius", c.right_turn_radius}};
  json trajs = json::array();
  for (const auto& p : layout.paths()) {
    json pts = json::array();
    for (const auto& v : p.polyline()) pts.push_back({v.x, v.y});
    trajs.push_back({{"id", p.id()},
                     {"approach", to_string(p.approach())},
                     {"movement", to_string(p.movement())},
                     {"stop_line_s", p.stop_line_s()},
                     {"exit_s", p.exit_s()},
                     {"conflicts", layout.map().conflicts_on[p.id()]},
                     {"polyline", std::move(pts)}});
  }
  doc["trajectories"] = std::move(trajs);
  json cps = json::array();
  for (const auto& cp : layout.conflicts()) {
    cps.push_back({{"id", cp.id},
                   {"x", cp.position.x},
                   {"y", cp.position.y},
                   {"theta", cp.theta},
                   {"members",
                    {{{"trajectory", cp.members[0].trajectory}, {"s", cp.members[0].s}},
                     {{"trajectory", cp.members[1].trajectory}, {"s", cp.members[1].s}}}}});
  }
  doc["conflicts"] = std::move(cps);
  return doc;
}

}  // namespace crossway
