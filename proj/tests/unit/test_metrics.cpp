#include <doctest.h>

#include <cmath>
#include <vector>

#include "metrics.hpp"

using namespace crossway;

namespace {

TripRecord trip(VehicleId id, Outcome o, double enter, double exit, bool stopped, double fuel) {
  TripRecord t;
  t.id = id;
  t.trajectory = 0;
  t.t_enter_prep = enter;
  t.t_exit_cross = exit;
  t.stopped = stopped;
  t.fuel_ml = fuel;
  t.outcome = o;
  return t;
}

}  // namespace

TEST_CASE("report over a hand-counted trip set") {
  const std::vector<TripRecord> trips{
      trip(1, Outcome::kPassed, 0.0, 10.0, false, 4.0),
      trip(2, Outcome::kPassed, 5.0, 19.0, true, 6.0),
      trip(3, Outcome::kCollided, 2.0, NAN, false, 1.0),
      trip(4, Outcome::kUnfinished, 3.0, NAN, true, 2.0),
  };
  const auto r = compute_report(trips);
  CHECK(r.total == 4);
  CHECK(r.passed == 2);
  CHECK(r.collided == 1);
  CHECK(r.unfinished == 1);
  CHECK(r.stopped == 2);
  CHECK(r.pr == 50.0);
  CHECK(r.sr == 50.0);
  REQUIRE(r.att);
  CHECK(*r.att == 12.0);
  CHECK(*r.dtt == 2.0);  // population deviation of {10, 14}
  CHECK(*r.afc == 5.0);
}

TEST_CASE("reports without passed trips leave the time metrics empty") {
  CHECK_THROWS_AS(compute_report({}), std::invalid_argument);
  const std::vector<TripRecord> none{trip(1, Outcome::kUnfinished, 0.0, NAN, false, 0.0)};
  const auto r = compute_report(none);
  CHECK_FALSE(r.att);
  CHECK_FALSE(r.dtt);
  CHECK_FALSE(r.afc);
  CHECK(r.pr == 0.0);
  const auto row = metrics_csv_row(r);
  CHECK(row == "1,0,0,1,0,0,0,,,");
}

TEST_CASE("fuel model") {
  // Idle only at rest and whenever the power demand is negative.
  CHECK(fuel_rate(0.0, 0.0) == doctest::Approx(0.15));
  CHECK(fuel_rate(10.0, -3.0) == doctest::Approx(0.15));
  // 1500 * 1 * 10 + (150 + 0.4 * 100) * 10 = 16900 W.
  CHECK(fuel_rate(10.0, 1.0) == doctest::Approx(0.15 + 0.03 * 16.9));
  CHECK(substep_fuel(10.0, 10.0, 0.0, 0.1) == doctest::Approx(0.1 * fuel_rate(10.0, 0.0)));
  CHECK(substep_fuel(10.0, 10.4, 4.0, 0.1) ==
        doctest::Approx(0.05 * (fuel_rate(10.0, 4.0) + fuel_rate(10.4, 4.0))));
}

TEST_CASE("seed summary uses the Student-t half width") {
  const std::vector<double> v{1.0, 2.0, 3.0};
  const auto s = summarize(v);
  CHECK(s.n == 3);
  CHECK(s.mean == 2.0);
  CHECK(s.stddev == doctest::Approx(1.0));
  // t(0.975, 2) = 4.302652729911275
  CHECK(s.ci95_half == doctest::Approx(4.302652729911275 / std::sqrt(3.0)).epsilon(1e-10));
  const std::vector<double> one{5.0};
  CHECK(summarize(one).ci95_half == 0.0);
  CHECK(summarize({}).n == 0);
}

TEST_CASE("aggregate skips seeds without a passed trip") {
  MetricsReport a, b;
  a.pr = 90.0;
  a.att = 10.0;
  b.pr = 70.0;
  const std::vector<MetricsReport> rs{a, b};
  const auto agg = aggregate(rs);
  CHECK(agg.pr.n == 2);
  CHECK(agg.pr.mean == 80.0);
  CHECK(agg.att.n == 1);
  CHECK(agg.att.mean == 10.0);
}

TEST_CASE("report json round trip") {
  const std::vector<TripRecord> trips{trip(1, Outcome::kPassed, 0.0, 10.1, true, 3.3),
                                      trip(2, Outcome::kCollided, 1.0, NAN, false, 0.7)};
  const auto r = compute_report(trips);
  const auto back = report_from_json(to_json(r));
  CHECK(back.total == r.total);
  CHECK(back.stopped == r.stopped);
  CHECK(back.att == r.att);
  CHECK(back.dtt == r.dtt);
  CHECK(back.afc == r.afc);
  CHECK(metrics_csv_row(back) == metrics_csv_row(r));
  CHECK(metrics_csv_columns().size() == 10);
}
