// Experiment orchestration: configuration, controller selection, episode
// runs, aggregation and export.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "baselines.hpp"
#include "dhal.hpp"
#include "metrics.hpp"
#include "simcore.hpp"

namespace crossway::harness {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode : std::uint8_t { kTrain, kTest };
enum class ControllerKind : std::uint8_t { kDhal, kFt, kLqf, kFcfs, kPlatoon };

std::string_view to_string(Mode m);
std::string_view to_string(ControllerKind c);
ControllerKind parse_controller(std::string_view s);

/// "low", "medium", "high" or an explicit rate in veh/h.
double flow_rate(std::string_view flow);

struct ExperimentConfig {
  ControllerKind controller = ControllerKind::kDhal;
  Mode mode = Mode::kTest;
  std::string flow = "low";
  /// Multiplies arrival rates and the training episode budget.
  double desk_scale = 1.0;
  double test_length = 10000.0;
  /// Run-out after the test: no new arrivals, queued ones still enter.
  double drain = 120.0;
  std::vector<std::uint64_t> seeds{1};
  std::string checkpoint;
  bool record_series = false;

  double ft_cycle = 0.0;  // 0 picks 60/90/120 s by flow level
  double yellow = 3.0;
  double lqf_min_green = 5.0;
  baselines::PlatoonConfig platoon;

  /// Layout, simulation, arrivals and every learning hyperparameter.
  dhal::TrainingConfig training;

  double scaled_rate() const { return flow_rate(flow) * desk_scale; }
};

/// Applies one `key = value` setting. Throws ConfigError on unknown keys or
/// malformed values.
void set_option(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Current value of one option, formatted as in dump_config().
std::string get_option(const ExperimentConfig& config, std::string_view key);

/// Reads `key = value` lines; `#` starts a comment.
ExperimentConfig parse_config(std::istream& is, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// Every option in canonical order, one `key = value` per line.
std::string dump_config(const ExperimentConfig& config);
std::vector<std::string> option_keys();

/// FNV-1a of dump_config().
std::uint64_t config_hash(const ExperimentConfig& config);

void validate(const ExperimentConfig& config);

// ---------------------------------------------------------------- runs

struct EpisodeResult {
  std::vector<TripRecord> trips;
  std::vector<CollisionEvent> collisions;
  WorldCounters counters;
  double duration = 0.0;
};

/// Steps `world` under `controller` for `duration` seconds, then `drain`
/// more seconds with arrivals off, and closes the trip log.
EpisodeResult run_episode(World& world, Controller& controller, double duration, double drain);

std::unique_ptr<Controller> make_controller(const ExperimentConfig& config,
                                            std::shared_ptr<const dhal::DhalNets<float>> nets,
                                            std::uint64_t seed);

struct SeedRun {
  std::uint64_t seed = 0;
  MetricsReport report;
  EpisodeResult episode;
};

struct RunArtifacts {
  ExperimentConfig config;
  std::uint64_t config_hash = 0;
  std::vector<SeedRun> runs;
  std::optional<AggregateReport> aggregate;
  std::optional<dhal::TrainingResult> training;
};

using Progress = std::function<void(const std::string&)>;

/// Test mode replicates over every seed; train mode runs the curriculum with
/// the first seed.
RunArtifacts run_experiment(const ExperimentConfig& config, const Progress& progress = {});

/// One test episode for one seed.
SeedRun run_test_seed(const ExperimentConfig& config, std::shared_ptr<const Layout> layout,
                      std::shared_ptr<const dhal::DhalNets<float>> nets, std::uint64_t seed);

// ---------------------------------------------------------------- export

const std::vector<std::string>& trip_csv_columns();
std::string trips_csv(std::span<const TripRecord> trips);
std::string curves_csv(std::span<const dhal::CurvePoint> curves);
/// Key columns controller, flow, seed, then metrics_csv_columns().
std::string metrics_csv(const RunArtifacts& artifacts);
nlohmann::json metrics_json(const RunArtifacts& artifacts);
nlohmann::json manifest(const RunArtifacts& artifacts);

/// Writes manifest.json, config.txt and, when present, metrics.csv,
/// metrics.json, trips_seed<k>.csv, curves.csv, epochs.csv and policy.bin.
void export_artifacts(const RunArtifacts& artifacts, const std::filesystem::path& dir);

}  // namespace crossway::harness
