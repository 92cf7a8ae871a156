#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "reservation.hpp"

using namespace crossway;

namespace {

const Layout& layout() {
  static const Layout l = build_layout(LayoutConfig{});
  return l;
}

int shared_conflict(int ta, int tb) {
  for (const auto& cp : layout().conflicts()) {
    if (cp.on(ta) && cp.on(tb)) return cp.id;
  }
  return -1;
}

VehicleState at(VehicleId id, int traj, double s, double v) {
  VehicleState x;
  x.id = id;
  x.trajectory = traj;
  x.s = s;
  x.v = v;
  x.zone = Zone::kPreparation;
  return x;
}

}  // namespace

TEST_CASE("occupancy window examples") {
  auto w = occupancy_window(10.0, 5.0, 5.0, 0.5, 100.0);
  CHECK(w.t1 == doctest::Approx(1.9));
  CHECK(w.t2 == doctest::Approx(3.1));
  w = occupancy_window(-2.0, 5.0, 5.0, 0.5, 100.0);
  CHECK(w.t1 == 0.0);
  CHECK(w.t2 == doctest::Approx(0.7));
  w = occupancy_window(600.0, 5.0, 5.0, 0.5, 100.0);
  CHECK(w.t1 == 100.0);
  CHECK(w.t2 == 100.0);
  CHECK(cells_for(w, ReservationParams{}).empty());
}

TEST_CASE("a crawling vehicle holds the whole horizon") {
  const auto w = occupancy_window(20.0, 5.0, 0.05, 1.0, 100.0);
  CHECK(w.worst_case);
  CHECK(w.t1 == 0.0);
  CHECK(w.t2 == 100.0);
}

TEST_CASE("window length is non-increasing in speed") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 2000; ++k) {
    const double d = 1.0 + 80.0 * u(rng), l = 5.0, eps = 1.0;
    const double v1 = 0.2 + 14.0 * u(rng), v2 = v1 + 0.8 * u(rng);
    const auto a = occupancy_window(d, l, v1, eps, 1e9);
    const auto b = occupancy_window(d, l, v2, eps, 1e9);
    CHECK(b.t2 - b.t1 <= a.t2 - a.t1 + 1e-12);
  }
}

TEST_CASE("table geometry") {
  ReservationParams p;
  CHECK(p.steps() == 500);
  ReservationTable t(16, p);
  CHECK(t.steps() == 500);
  t.insert(7, 3, {10, 12});
  CHECK(t.occupied(3, {12, 20}));
  CHECK_FALSE(t.occupied(3, {13, 20}));
  CHECK(t.cell(3, 11).size() == 1);
  t.clear();
  CHECK_FALSE(t.occupied(3, {0, 499}));
}

TEST_CASE("update_table trivial cases") {
  const ReservationParams p;
  const VehicleParams dims;
  std::vector<VehicleState> one{at(1, 1, 80.0, 10.0)};
  CHECK(update_table(one, layout(), p, dims).conflicted.empty());

  // Both reach their shared point at the same moment.
  const int a = trajectory_id(Approach::kNorth, Movement::kStraight);
  const int b = trajectory_id(Approach::kEast, Movement::kStraight);
  const auto& cp = layout().conflict(shared_conflict(a, b));
  std::vector<VehicleState> two{at(1, a, cp.arc_on(a) - 20.0, 10.0), at(2, b, cp.arc_on(b) - 20.0, 10.0)};
  const auto up = update_table(two, layout(), p, dims);
  CHECK(up.conflicted == std::vector<VehicleId>{1, 2});
  REQUIRE(up.pairs.size() == 1);
  CHECK(up.pairs[0].conflicts == std::vector<int>{cp.id});
}

TEST_CASE("update_table matches the pairwise oracle") {
  const ReservationParams p;
  const VehicleParams dims;
  std::mt19937_64 rng(11);
  for (int inst = 0; inst < 300; ++inst) {
    const auto vs = oracle::random_vehicles(layout(), rng, 20);
    const auto up = update_table(vs, layout(), p, dims);
    const auto ref = oracle::brute_force_conflicts(vs, layout(), dims.length, p.eps, p.dt, p.horizon);
    std::set<VehicleId> got(up.conflicted.begin(), up.conflicted.end());
    CHECK(got == ref.conflicted);
    std::set<std::pair<VehicleId, VehicleId>> pairs;
    for (const auto& pr : up.pairs) pairs.insert({pr.a, pr.b});
    CHECK(pairs == ref.pairs);
  }
}

TEST_CASE("rule 1: the earlier vehicle in the previous table leads") {
  const int ti = trajectory_id(Approach::kNorth, Movement::kStraight);
  const int tj = trajectory_id(Approach::kEast, Movement::kStraight);
  const int c = shared_conflict(ti, tj);
  ReservationParams p;
  ReservationTable prev(layout().conflict_count(), p), cur(layout().conflict_count(), p);
  prev.insert(1, c, {10, 15});
  prev.insert(2, c, {18, 22});
  cur.insert(1, c, {8, 14});
  cur.insert(2, c, {12, 20});
  const auto d = assign_priority({1, ti}, {2, tj}, cur, &prev, layout());
  CHECK(d.leader == 1);
  CHECK(d.rule == PriorityRule::kArrivalOrder);
}

TEST_CASE("rule 2: the vehicle on the right leads") {
  const int ti = trajectory_id(Approach::kSouth, Movement::kStraight);  // heading north
  const int tj = trajectory_id(Approach::kEast, Movement::kStraight);
  const int c = shared_conflict(ti, tj);
  REQUIRE(c >= 0);
  ReservationParams p;
  ReservationTable prev(layout().conflict_count(), p), cur(layout().conflict_count(), p);
  prev.insert(1, c, {10, 15});
  prev.insert(2, c, {12, 18});  // overlapping before too: no arrival order
  cur.insert(1, c, {8, 14});
  cur.insert(2, c, {10, 16});
  const auto d = assign_priority({1, ti}, {2, tj}, cur, &prev, layout());
  CHECK(d.leader == 2);
  CHECK(d.rule == PriorityRule::kRightHand);
}

TEST_CASE("rule 3: straight beats an opposing left turn") {
  const int ti = trajectory_id(Approach::kNorth, Movement::kStraight);
  const int tj = trajectory_id(Approach::kSouth, Movement::kLeft);
  const int c = shared_conflict(ti, tj);
  REQUIRE(c >= 0);
  ReservationParams p;
  ReservationTable cur(layout().conflict_count(), p);
  cur.insert(1, c, {8, 14});
  cur.insert(2, c, {10, 16});
  const auto d = assign_priority({1, ti}, {2, tj}, cur, nullptr, layout());
  CHECK(d.leader == 1);
  CHECK(d.rule == PriorityRule::kStraightFirst);
}

TEST_CASE("two vehicles of one trajectory fall back to the lower id") {
  const int t = trajectory_id(Approach::kSouth, Movement::kLeft);
  const int c = layout().map().conflicts_on[t].front();
  ReservationTable cur(layout().conflict_count(), ReservationParams{});
  cur.insert(5, c, {8, 14});
  cur.insert(6, c, {10, 16});
  const auto d = assign_priority({6, t}, {5, t}, cur, nullptr, layout());
  CHECK(d.leader == 5);
  CHECK(d.rule == PriorityRule::kTieBreak);
}

TEST_CASE("non-conflicting pairs violate the contract") {
  const int ti = trajectory_id(Approach::kNorth, Movement::kStraight);
  const int tj = trajectory_id(Approach::kEast, Movement::kStraight);
  const int c = shared_conflict(ti, tj);
  ReservationTable cur(layout().conflict_count(), ReservationParams{});
  cur.insert(1, c, {0, 4});
  cur.insert(2, c, {10, 16});
  CHECK_THROWS_AS(assign_priority({1, ti}, {2, tj}, cur, nullptr, layout()), ContractViolation);
}

TEST_CASE("conflict labels") {
  const std::vector<VehicleId> none;
  CHECK(conflict_labels(1, none, {}) == ConflictLabels{0, 0, 0});
  const std::vector<VehicleId> h{1, 2, 3};
  const std::vector<PriorityDecision> lead{{1, 2, PriorityRule::kRightHand}};
  CHECK(conflict_labels(1, h, lead) == ConflictLabels{1, 0, 1});
  CHECK(conflict_labels(2, h, lead) == ConflictLabels{1, 1, 0});
  const std::vector<PriorityDecision> chain{{1, 2, PriorityRule::kRightHand},
                                            {2, 3, PriorityRule::kStraightFirst}};
  CHECK(conflict_labels(2, h, chain) == ConflictLabels{1, 1, 1});
}

TEST_CASE("for single-pair vehicles the conflict label is active plus passive") {
  const ReservationParams p;
  const VehicleParams dims;
  std::mt19937_64 rng(5);
  for (int inst = 0; inst < 200; ++inst) {
    const auto vs = oracle::random_vehicles(layout(), rng, 12);
    const auto up = update_table(vs, layout(), p, dims);
    const auto as = assess_conflicts(up, nullptr, vs, layout());
    for (const auto& v : vs) {
      int pairs = 0;
      for (const auto& pr : up.pairs) pairs += (pr.a == v.id || pr.b == v.id);
      if (pairs > 1) continue;
      const auto l = as.labels_of(v.id);
      CHECK(l.conflict == l.active + l.passive);
    }
  }
}
