// Independent reference computations shared by the unit and acceptance
// tests. Nothing here calls the code under test beyond reading geometry.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "geometry.hpp"
#include "vehicle.hpp"

namespace oracle {

struct Steps {
  long first = 0;
  long last = -1;  // inclusive; empty when first > last
};

// Step indices touched by the constant-speed occupancy of one conflict point
// under a fixed front/rear buffer.
inline Steps occupancy_steps(double d, double length, double v, double buffer, double dt,
                             double horizon) {
  const long n = static_cast<long>(std::ceil(horizon / dt - 1e-9));
  if (d + length + buffer <= 0.0) return {};
  double t1, t2;
  if (v < 0.1) {
    t1 = 0.0;
    t2 = horizon;
  } else {
    t1 = std::clamp((d - buffer) / v, 0.0, horizon);
    t2 = std::clamp((d + length + buffer) / v, 0.0, horizon);
  }
  if (!(t2 > t1)) return {};
  Steps s;
  s.first = static_cast<long>(std::floor(t1 / dt + 1e-12));
  s.last = std::min(n - 1, static_cast<long>(std::ceil(t2 / dt - 1e-12)) - 1);
  return s;
}

inline bool meet(const Steps& a, const Steps& b) {
  return a.first <= a.last && b.first <= b.last && a.first <= b.last && b.first <= a.last;
}

struct PairSet {
  std::set<std::pair<crossway::VehicleId, crossway::VehicleId>> pairs;
  std::set<crossway::VehicleId> conflicted;
};

// O(n^2) pairwise check over every conflict point two vehicles share. Two
// vehicles of one trajectory meet like any others when their windows touch.
inline PairSet brute_force_conflicts(const std::vector<crossway::VehicleState>& vs,
                                     const crossway::Layout& layout, double length, double buffer,
                                     double dt, double horizon) {
  PairSet out;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    for (std::size_t j = i + 1; j < vs.size(); ++j) {
      const auto& a = vs[i];
      const auto& b = vs[j];
      for (const auto& cp : layout.conflicts()) {
        if (!cp.on(a.trajectory) || !cp.on(b.trajectory)) continue;
        const auto wa = occupancy_steps(cp.arc_on(a.trajectory) - a.s, length, a.v, buffer, dt, horizon);
        const auto wb = occupancy_steps(cp.arc_on(b.trajectory) - b.s, length, b.v, buffer, dt, horizon);
        if (meet(wa, wb)) {
          out.pairs.insert(std::minmax(a.id, b.id));
          out.conflicted.insert(a.id);
          out.conflicted.insert(b.id);
        }
      }
    }
  }
  return out;
}

// Up to `max_n` vehicles spread over the preparation and crossing zones.
// A share of them crawl or stand still to exercise the worst-case windows.
inline std::vector<crossway::VehicleState> random_vehicles(const crossway::Layout& layout,
                                                           std::mt19937_64& rng, int max_n) {
  std::uniform_int_distribution<int> count(0, max_n);
  std::uniform_int_distribution<int> traj(0, layout.trajectory_count() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<crossway::VehicleState> out;
  const int n = count(rng);
  for (int k = 0; k < n; ++k) {
    crossway::VehicleState v;
    v.id = static_cast<crossway::VehicleId>(k + 1);
    v.trajectory = traj(rng);
    const auto& p = layout.path(v.trajectory);
    v.s = u(rng) * p.exit_s();
    const double r = u(rng);
    v.v = r < 0.05 ? 0.0 : (r < 0.1 ? 0.05 + 0.5 * u(rng) : 15.0 * u(rng));
    v.zone = v.s < layout.crossing_entry_s() ? crossway::Zone::kPreparation : crossway::Zone::kCrossing;
    out.push_back(v);
  }
  return out;
}

// Central difference of a scalar function.
template <class F>
double central_difference(F&& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace oracle
