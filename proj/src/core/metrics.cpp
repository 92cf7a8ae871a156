#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

namespace crossway {

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::kPassed: return "passed";
    case Outcome::kCollided: return "collided";
    case Outcome::kUnfinished: return "unfinished";
  }
  return "?";
}

double FuelModel::rate(double v, double a) const {
  const double power = mass * a * v + (c0 + c1 * v * v) * v;  // W
  return idle_rate + ml_per_kj * std::max(0.0, power) / 1000.0;
}

double fuel_rate(double v, double a, const FuelModel& model) { return model.rate(v, a); }

double substep_fuel(double v0, double v1, double a, double dt, const FuelModel& model) {
  return 0.5 * (model.rate(v0, a) + model.rate(v1, a)) * dt;
}

MetricsReport compute_report(std::span<const TripRecord> trips) {
  if (trips.empty()) throw std::invalid_argument("compute_report: no trips");
  MetricsReport r;
  r.total = trips.size();
  double sum_t = 0.0, sum_f = 0.0;
  for (const auto& t : trips) {
    if (t.stopped) ++r.stopped;
    switch (t.outcome) {
      case Outcome::kPassed:
        ++r.passed;
        sum_t += t.travel_time();
        sum_f += t.fuel_ml;
        break;
      case Outcome::kCollided: ++r.collided; break;
      case Outcome::kUnfinished: ++r.unfinished; break;
    }
  }
  const double n = static_cast<double>(r.total);
  r.pr = 100.0 * static_cast<double>(r.passed) / n;
  r.sr = 100.0 * static_cast<double>(r.stopped) / n;
  if (r.passed > 0) {
    const double np = static_cast<double>(r.passed);
    const double mean = sum_t / np;
    double ss = 0.0;
    for (const auto& t : trips) {
      if (t.outcome != Outcome::kPassed) continue;
      const double d = t.travel_time() - mean;
      ss += d * d;
    }
    r.att = mean;
    r.dtt = std::sqrt(ss / np);
    r.afc = sum_f / np;
  }
  return r;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  boost::math::students_t dist(static_cast<double>(s.n - 1));
  const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
  s.ci95_half = tq * s.stddev / std::sqrt(static_cast<double>(s.n));
  return s;
}

AggregateReport aggregate(std::span<const MetricsReport> reports) {
  std::vector<double> pr, sr, att, dtt, afc;
  for (const auto& r : reports) {
    pr.push_back(r.pr);
    sr.push_back(r.sr);
    if (r.att) att.push_back(*r.att);
    if (r.dtt) dtt.push_back(*r.dtt);
    if (r.afc) afc.push_back(*r.afc);
  }
  return {summarize(pr), summarize(sr), summarize(att), summarize(dtt), summarize(afc)};
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  return {{"total", r.total},     {"passed", r.passed}, {"collided", r.collided},
          {"unfinished", r.unfinished}, {"stopped", r.stopped}, {"pr", r.pr},
          {"sr", r.sr},           {"att", opt(r.att)},  {"dtt", opt(r.dtt)},
          {"afc", opt(r.afc)}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.total = j.at("total").get<std::size_t>();
  r.passed = j.at("passed").get<std::size_t>();
  r.collided = j.at("collided").get<std::size_t>();
  r.unfinished = j.at("unfinished").get<std::size_t>();
  r.stopped = j.at("stopped").get<std::size_t>();
  r.pr = j.at("pr").get<double>();
  r.sr = j.at("sr").get<double>();
  r.att = opt_from(j.at("att"));
  r.dtt = opt_from(j.at("dtt"));
  r.afc = opt_from(j.at("afc"));
  return r;
}

nlohmann::json to_json(const Summary& s) {
  return {{"n", s.n}, {"mean", s.mean}, {"std", s.stddev}, {"ci95", s.ci95_half}};
}

nlohmann::json to_json(const AggregateReport& a) {
  return {{"pr", to_json(a.pr)},
          {"sr", to_json(a.sr)},
          {"att", to_json(a.att)},
          {"dtt", to_json(a.dtt)},
          {"afc", to_json(a.afc)}};
}

const std::vector<std::string>& metrics_csv_columns() {
  static const std::vector<std::string> cols = {"total", "passed", "collided", "unfinished",
                                                "stopped", "pr", "sr", "att", "dtt", "afc"};
  return cols;
}

std::string metrics_csv_row(const MetricsReport& r) {
  auto o = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  std::ostringstream os;
  os << r.total << ',' << r.passed << ',' << r.collided << ',' << r.unfinished << ','
     << r.stopped << ',' << fmt(r.pr) << ',' << fmt(r.sr) << ',' << o(r.att) << ','
     << o(r.dtt) << ',' << o(r.afc);
  return os.str();
}

}  // namespace crossway
