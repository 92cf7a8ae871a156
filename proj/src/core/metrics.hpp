// Trip records, the instantaneous fuel model and the evaluation report.
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vehicle.hpp"

namespace crossway {

enum class Outcome : std::uint8_t { kPassed, kCollided, kUnfinished };

std::string_view to_string(Outcome o);

struct TripRecord {
  VehicleId id = 0;
  int trajectory = -1;
  double spawn_time = 0.0;
  double t_enter_prep = std::numeric_limits<double>::quiet_NaN();
  double t_exit_cross = std::numeric_limits<double>::quiet_NaN();
  bool stopped = false;  // ever below the speed floor inside the preparation zone
  double fuel_ml = 0.0;  // integrated between preparation entry and crossing exit
  Outcome outcome = Outcome::kUnfinished;
  // Per-substep samples, only filled when series recording is on.
  std::vector<float> speed;
  std::vector<float> accel;

  double travel_time() const { return t_exit_cross - t_enter_prep; }
};

struct FuelModel {
  double idle_rate = 0.15;  // mL/s
  double mass = 1500.0;     // kg
  double c0 = 150.0;        // N
  double c1 = 0.4;          // N s^2 / m^2
  double ml_per_kj = 0.03;

  double rate(double v, double a) const;
};

/// Fuel rate in mL/s. Negative power demand is clamped to zero.
double fuel_rate(double v, double a, const FuelModel& model = {});

/// Trapezoid integral of the rate over one substep of constant acceleration.
double substep_fuel(double v0, double v1, double a, double dt, const FuelModel& model = {});

struct MetricsReport {
  std::size_t total = 0;
  std::size_t passed = 0;
  std::size_t collided = 0;
  std::size_t unfinished = 0;
  std::size_t stopped = 0;
  double pr = 0.0;  // %
  double sr = 0.0;  // %
  std::optional<double> att;
  std::optional<double> dtt;
  std::optional<double> afc;
};

/// Throws std::invalid_argument on an empty trip set.
MetricsReport compute_report(std::span<const TripRecord> trips);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;    // sample standard deviation
  double ci95_half = 0.0;  // Student-t half width
};

Summary summarize(std::span<const double> values);

struct AggregateReport {
  Summary pr, sr, att, dtt, afc;
};

AggregateReport aggregate(std::span<const MetricsReport> reports);

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Summary& s);
nlohmann::json to_json(const AggregateReport& a);

/// Column names of the per-seed metrics CSV, after the key columns.
const std::vector<std::string>& metrics_csv_columns();
std::string metrics_csv_row(const MetricsReport& r);

}  // namespace crossway
