#include "harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace crossway::harness {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("option " + std::string(key) + ": not a number: '" + std::string(v) + "'");
  }
  return out;
}

template <class I>
I parse_int(std::string_view key, std::string_view v) {
  I out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("option " + std::string(key) + ": not an integer: '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("option " + std::string(key) + ": not a boolean: '" + std::string(v) + "'");
}

template <class I>
std::vector<I> parse_list(std::string_view key, std::string_view v) {
  std::vector<I> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_int<I>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError("option " + std::string(key) + ": empty list");
  return out;
}

template <class I>
std::string join(const std::vector<I>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

Field real(const char* key, double ExperimentConfig::*m) {
  return {key, [m](const ExperimentConfig& c) { return num(c.*m); },
          [m, key](ExperimentConfig& c, std::string_view v) { c.*m = parse_double(key, v); }};
}

template <class Get>
Field real_at(const char* key, Get ref) {
  return {key, [ref](const ExperimentConfig& c) { return num(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, std::string_view v) { ref(c) = parse_double(key, v); }};
}

template <class I, class Get>
Field int_at(const char* key, Get ref) {
  return {key,
          [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, std::string_view v) { ref(c) = parse_int<I>(key, v); }};
}

template <class Get>
Field bool_at(const char* key, Get ref) {
  return {key,
          [ref](const ExperimentConfig& c) {
            return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          },
          [ref, key](ExperimentConfig& c, std::string_view v) { ref(c) = parse_bool(key, v); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> f = {
      {"controller", [](const C& c) { return std::string(to_string(c.controller)); },
       [](C& c, std::string_view v) { c.controller = parse_controller(v); }},
      {"mode", [](const C& c) { return std::string(to_string(c.mode)); },
       [](C& c, std::string_view v) {
         if (v == "train") {
           c.mode = Mode::kTrain;
         } else if (v == "test") {
           c.mode = Mode::kTest;
         } else {
           throw ConfigError("mode must be train or test");
         }
       }},
      {"flow", [](const C& c) { return c.flow; },
       [](C& c, std::string_view v) {
         flow_rate(v);
         c.flow = std::string(v);
       }},
      real("desk_scale", &C::desk_scale),
      real("test_length", &C::test_length),
      real("drain", &C::drain),
      {"seeds", [](const C& c) { return join(c.seeds); },
       [](C& c, std::string_view v) { c.seeds = parse_list<std::uint64_t>("seeds", v); }},
      {"checkpoint", [](const C& c) { return c.checkpoint; },
       [](C& c, std::string_view v) { c.checkpoint = std::string(v); }},
      bool_at("record_series", [](C& c) -> bool& { return c.record_series; }),

      real("signal.ft_cycle", &C::ft_cycle),
      real("signal.yellow", &C::yellow),
      real("signal.lqf_min_green", &C::lqf_min_green),
      int_at<int>("platoon.max_size", [](C& c) -> int& { return c.platoon.max_size; }),
      real_at("platoon.join_gap", [](C& c) -> double& { return c.platoon.join_gap; }),
      real_at("platoon.headway", [](C& c) -> double& { return c.platoon.headway; }),

      int_at<int>("train.epochs", [](C& c) -> int& { return c.training.epochs; }),
      int_at<int>("train.cycle_length", [](C& c) -> int& { return c.training.cycle_length; }),
      real_at("train.episode_length", [](C& c) -> double& { return c.training.episode_length; }),
      int_at<std::size_t>("train.batch_size", [](C& c) -> std::size_t& { return c.training.batch_size; }),
      int_at<std::size_t>("train.buffer_size",
                          [](C& c) -> std::size_t& { return c.training.palace_capacity; }),
      int_at<int>("train.update_every", [](C& c) -> int& { return c.training.update_every; }),
      real_at("train.actor_lr", [](C& c) -> double& { return c.training.actor_adam.lr; }),
      real_at("train.disc_lr", [](C& c) -> double& { return c.training.disc_adam.lr; }),
      real_at("train.adam_beta1", [](C& c) -> double& { return c.training.actor_adam.beta1; }),
      real_at("train.adam_beta2", [](C& c) -> double& { return c.training.actor_adam.beta2; }),
      real_at("train.adam_eps", [](C& c) -> double& { return c.training.actor_adam.eps; }),
      real_at("train.alpha", [](C& c) -> double& { return c.training.agent.loss.alpha; }),
      real_at("train.gamma", [](C& c) -> double& { return c.training.gamma; }),
      real_at("train.gamma_warm_start", [](C& c) -> double& { return c.training.gamma_warm_start; }),
      real_at("train.gamma_decay_fraction",
              [](C& c) -> double& { return c.training.gamma_decay_fraction; }),
      real_at("train.d_min", [](C& c) -> double& { return c.training.agent.loss.d_min; }),
      real_at("train.d_max", [](C& c) -> double& { return c.training.agent.loss.d_max; }),
      real_at("train.exploration_sigma",
              [](C& c) -> double& { return c.training.agent.exploration_sigma; }),
      real_at("train.v_keep", [](C& c) -> double& { return c.training.agent.v_keep; }),
      int_at<int>("train.mask_lookahead", [](C& c) -> int& { return c.training.agent.mask_lookahead; }),
      bool_at("train.maintenance", [](C& c) -> bool& { return c.training.agent.maintenance; }),
      bool_at("train.mask", [](C& c) -> bool& { return c.training.agent.mask; }),
      real_at("train.label_eps", [](C& c) -> double& { return c.training.agent.labels.eps; }),
      {"net.branch", [](const C& c) { return join(c.training.shape.branch); },
       [](C& c, std::string_view v) { c.training.shape.branch = parse_list<int>("net.branch", v); }},
      {"net.head", [](const C& c) { return join(c.training.shape.head); },
       [](C& c, std::string_view v) { c.training.shape.head = parse_list<int>("net.head", v); }},

      real_at("sim.substep", [](C& c) -> double& { return c.training.sim.substep; }),
      int_at<int>("sim.substeps_per_action",
                  [](C& c) -> int& { return c.training.sim.substeps_per_action; }),
      real_at("sim.vehicle_length", [](C& c) -> double& { return c.training.sim.vehicle.length; }),
      real_at("sim.vehicle_width", [](C& c) -> double& { return c.training.sim.vehicle.width; }),
      real_at("sim.v_max", [](C& c) -> double& { return c.training.sim.vehicle.v_max; }),
      real_at("sim.a_max", [](C& c) -> double& { return c.training.sim.vehicle.a_max; }),
      real_at("sim.a_min", [](C& c) -> double& { return c.training.sim.vehicle.a_min; }),
      real_at("sim.spawn_distance", [](C& c) -> double& { return c.training.sim.spawn_distance; }),
      real_at("sim.hold_offset", [](C& c) -> double& { return c.training.sim.hold_offset; }),
      real_at("sim.min_crossing_speed",
              [](C& c) -> double& { return c.training.sim.min_crossing_speed; }),
      real_at("sim.table_dt", [](C& c) -> double& { return c.training.sim.gate.dt; }),
      real_at("sim.table_horizon", [](C& c) -> double& { return c.training.sim.gate.horizon; }),
      real_at("sim.gate_eps", [](C& c) -> double& { return c.training.sim.gate.eps; }),
      real_at("sim.gate_margin", [](C& c) -> double& { return c.training.sim.gate.envelope_margin; }),

      real_at("arrivals.imbalance", [](C& c) -> double& { return c.training.arrivals.imbalance; }),
      real_at("arrivals.variation_amplitude",
              [](C& c) -> double& { return c.training.arrivals.variation_amplitude; }),
      real_at("arrivals.variation_period",
              [](C& c) -> double& { return c.training.arrivals.variation_period; }),

      real_at("layout.lane_width", [](C& c) -> double& { return c.training.layout.lane_width; }),
      real_at("layout.stop_line_setback",
              [](C& c) -> double& { return c.training.layout.stop_line_setback; }),
      real_at("layout.prep_depth", [](C& c) -> double& { return c.training.layout.prep_depth; }),
      real_at("layout.crossing_margin",
              [](C& c) -> double& { return c.training.layout.crossing_margin; }),
  };
  return f;
}

/// Settings that must agree between the subsystems that read them.
void sync(ExperimentConfig& c) {
  auto& t = c.training;
  t.disc_adam.beta1 = t.actor_adam.beta1;
  t.disc_adam.beta2 = t.actor_adam.beta2;
  t.disc_adam.eps = t.actor_adam.eps;
  t.agent.loss.a_min = t.sim.vehicle.a_min;
  t.agent.loss.a_max = t.sim.vehicle.a_max;
  t.agent.labels.dt = t.sim.gate.dt;
  t.agent.labels.horizon = t.sim.gate.horizon;
  t.layout.vehicle_width = t.sim.vehicle.width;
  t.spec.v_max = t.sim.vehicle.v_max;
  t.sim.record_series = c.record_series;
  t.desk_scale = c.desk_scale;
  t.seed = c.seeds.empty() ? 1 : c.seeds.front();
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  os << content;
  if (!os) throw IoError("write failed: " + p.string());
}

}  // namespace

// ---------------------------------------------------------------- config

std::string_view to_string(Mode m) { return m == Mode::kTrain ? "train" : "test"; }

std::string_view to_string(ControllerKind c) {
  switch (c) {
    case ControllerKind::kDhal: return "dhal";
    case ControllerKind::kFt: return "ft";
    case ControllerKind::kLqf: return "lqf";
    case ControllerKind::kFcfs: return "fcfs";
    case ControllerKind::kPlatoon: return "platoon";
  }
  return "?";
}

ControllerKind parse_controller(std::string_view s) {
  for (auto c : {ControllerKind::kDhal, ControllerKind::kFt, ControllerKind::kLqf,
                 ControllerKind::kFcfs, ControllerKind::kPlatoon}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown controller '" + std::string(s) + "'");
}

double flow_rate(std::string_view flow) {
  if (flow == "low") return 5400.0;
  if (flow == "medium") return 7200.0;
  if (flow == "high") return 9000.0;
  const double r = parse_double("flow", flow);
  if (r < 0.0) throw ConfigError("flow rate must be non-negative");
  return r;
}

void set_option(ExperimentConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(config, trim(value));
      sync(config);
      return;
    }
  }
  throw ConfigError("unknown option '" + std::string(key) + "'");
}

std::string get_option(const ExperimentConfig& config, std::string_view key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f.get(config);
  }
  throw ConfigError("unknown option '" + std::string(key) + "'");
}

ExperimentConfig parse_config(std::istream& is, ExperimentConfig base) {
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    std::string_view s = line;
    if (auto h = s.find('#'); h != std::string_view::npos) s = s.substr(0, h);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    }
    try {
      set_option(base, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(n) + ": " + e.what());
    }
  }
  sync(base);
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  return parse_config(is, std::move(base));
}

std::string dump_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(config);
    out += '\n';
  }
  return out;
}

std::vector<std::string> option_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& config) { return fnv1a(dump_config(config)); }

void validate(const ExperimentConfig& c) {
  if (!(c.desk_scale > 0.0 && c.desk_scale <= 1.0)) throw ConfigError("desk_scale must lie in (0, 1]");
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (c.test_length < 0.0 || c.drain < 0.0) throw ConfigError("durations must be non-negative");
  flow_rate(c.flow);
  if (c.mode == Mode::kTrain && c.controller != ControllerKind::kDhal) {
    throw ConfigError("only the dhal controller can be trained");
  }
  if (c.mode == Mode::kTest && c.controller == ControllerKind::kDhal && c.checkpoint.empty()) {
    throw ConfigError("testing dhal needs a checkpoint");
  }
  const auto& t = c.training;
  if (t.epochs < 0 || t.cycle_length < 1) throw ConfigError("epochs must be non-negative and cycle_length positive");
  if (t.batch_size == 0 || t.palace_capacity == 0 || t.update_every < 1) {
    throw ConfigError("batch_size, buffer_size and update_every must be positive");
  }
  if (!(t.sim.substep > 0.0) || t.sim.substeps_per_action < 1) throw ConfigError("bad time step");
  if (!(t.agent.loss.d_max > t.agent.loss.d_min)) throw ConfigError("d_max must exceed d_min");
  if (c.platoon.max_size < 1) throw ConfigError("platoon.max_size must be at least 1");
  if (c.lqf_min_green < 0.0 || c.yellow < 0.0) throw ConfigError("signal timings must be non-negative");
  if (c.ft_cycle != 0.0 && !(c.ft_cycle > 4.0 * c.yellow)) throw ConfigError("ft_cycle too short");
}

// ---------------------------------------------------------------- runs

EpisodeResult run_episode(World& world, Controller& controller, double duration, double drain) {
  std::vector<Command> commands;
  const double dt = world.params().action_dt();
  const auto steps = static_cast<std::int64_t>(std::llround(duration / dt));
  const auto drain_steps = static_cast<std::int64_t>(std::llround(drain / dt));
  for (std::int64_t k = 0; k < steps + drain_steps; ++k) {
    if (k == steps) world.set_arrivals_enabled(false);
    controller.decide(world, commands);
    const auto report = world.step(commands);
    controller.observe(world, report);
  }
  EpisodeResult r;
  r.trips = world.finish();
  r.collisions.assign(world.collisions().begin(), world.collisions().end());
  r.counters = world.counters();
  r.duration = world.time();
  return r;
}

std::unique_ptr<Controller> make_controller(const ExperimentConfig& config,
                                            std::shared_ptr<const dhal::DhalNets<float>> nets,
                                            std::uint64_t seed) {
  const double level = flow_rate(config.flow);
  const double cycle = config.ft_cycle > 0.0 ? config.ft_cycle : baselines::fixed_time_cycle(level);
  switch (config.controller) {
    case ControllerKind::kDhal: {
      if (!nets) throw ConfigError("dhal controller needs networks");
      auto params = config.training.agent;
      params.exploration_sigma = 0.0;
      return std::make_unique<dhal::DhalAgent>(std::move(nets), params, seed);
    }
    case ControllerKind::kFt:
      return std::make_unique<baselines::FixedTimeController>(baselines::four_phase_plan(cycle, config.yellow));
    case ControllerKind::kLqf:
      return std::make_unique<baselines::LqfController>(
          baselines::four_phase_plan(cycle, config.yellow), config.lqf_min_green);
    case ControllerKind::kFcfs: return std::make_unique<baselines::FcfsController>();
    case ControllerKind::kPlatoon: return std::make_unique<baselines::PlatoonController>(config.platoon);
  }
  throw ConfigError("unknown controller");
}

SeedRun run_test_seed(const ExperimentConfig& config, std::shared_ptr<const Layout> layout,
                      std::shared_ptr<const dhal::DhalNets<float>> nets, std::uint64_t seed) {
  ArrivalConfig arrivals = config.training.arrivals;
  arrivals.total_rate = config.scaled_rate();
  World world(layout, config.training.sim,
              ArrivalProcess(arrivals, layout->trajectory_count(), seed));
  auto controller = make_controller(config, std::move(nets), seed);
  SeedRun run;
  run.seed = seed;
  run.episode = run_episode(world, *controller, config.test_length, config.drain);
  if (!run.episode.trips.empty()) run.report = compute_report(run.episode.trips);
  return run;
}

RunArtifacts run_experiment(const ExperimentConfig& input, const Progress& progress) {
  ExperimentConfig config = input;
  sync(config);
  validate(config);
  RunArtifacts out;
  out.config = config;
  out.config_hash = config_hash(config);
  if (config.mode == Mode::kTrain) {
    out.training = dhal::run_training(config.training, config.checkpoint,
                                      [&](const dhal::EpochSummary& s) {
                                        if (!progress) return;
                                        std::ostringstream os;
                                        os << "epoch " << s.epoch << " rate " << s.rate << " passed "
                                           << s.passed << "/" << s.trips << " collided " << s.collided
                                           << " actor_loss " << s.mean_actor_loss << " final_bce "
                                           << s.mean_final_bce;
                                        progress(os.str());
                                      });
    return out;
  }

  auto layout = std::make_shared<const Layout>(build_layout(config.training.layout));
  std::shared_ptr<const dhal::DhalNets<float>> nets;
  if (config.controller == ControllerKind::kDhal) {
    nets = std::make_shared<const dhal::DhalNets<float>>(dhal::load_bundle(config.checkpoint));
  }
  // Seeds run on parallel workers; results keep the configured order.
  out.runs.resize(config.seeds.size());
  {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < config.seeds.size();) {
        try {
          out.runs[i] = run_test_seed(config, layout, nets, config.seeds[i]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    const auto workers = std::min<std::size_t>(config.seeds.size(),
                                               std::max(1u, std::thread::hardware_concurrency()));
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }
  std::vector<MetricsReport> reports;
  for (const auto& r : out.runs) {
    const auto seed = r.seed;
    if (r.report.total > 0) reports.push_back(r.report);
    if (progress) {
      std::ostringstream os;
      os << "seed " << seed << " trips " << r.report.total << " pr " << r.report.pr << " sr "
         << r.report.sr << " att " << (r.report.att ? num(*r.report.att) : "-");
      progress(os.str());
    }
  }
  if (!reports.empty()) out.aggregate = aggregate(reports);
  return out;
}

// ---------------------------------------------------------------- export

const std::vector<std::string>& trip_csv_columns() {
  static const std::vector<std::string> cols = {"id",           "trajectory",  "spawn_time",
                                                "t_enter_prep", "t_exit_cross", "travel_time",
                                                "stopped",      "fuel_ml",     "outcome"};
  return cols;
}

std::string trips_csv(std::span<const TripRecord> trips) {
  std::string out;
  for (std::size_t i = 0; i < trip_csv_columns().size(); ++i) {
    if (i) out += ',';
    out += trip_csv_columns()[i];
  }
  out += '\n';
  for (const auto& t : trips) {
    out += std::to_string(t.id) + ',' + std::to_string(t.trajectory) + ',' + num(t.spawn_time) + ',' +
           num(t.t_enter_prep) + ',' + num(t.t_exit_cross) + ',' +
           (t.outcome == Outcome::kPassed ? num(t.travel_time()) : std::string()) + ',' +
           (t.stopped ? "1" : "0") + ',' + num(t.fuel_ml) + ',' + std::string(to_string(t.outcome)) +
           '\n';
  }
  return out;
}

std::string curves_csv(std::span<const dhal::CurvePoint> curves) {
  std::string out = "step,epoch,actor_loss,immediate_bce,final_bce,gamma\n";
  for (const auto& c : curves) {
    out += std::to_string(c.step) + ',' + std::to_string(c.epoch) + ',' + num(c.actor_loss) + ',' +
           num(c.immediate_bce) + ',' + num(c.final_bce) + ',' + num(c.gamma) + '\n';
  }
  return out;
}

std::string metrics_csv(const RunArtifacts& a) {
  std::string out = "controller,flow,seed";
  for (const auto& c : metrics_csv_columns()) out += ',' + c;
  out += '\n';
  for (const auto& r : a.runs) {
    out += std::string(to_string(a.config.controller)) + ',' + a.config.flow + ',' +
           std::to_string(r.seed) + ',' + metrics_csv_row(r.report) + '\n';
  }
  return out;
}

nlohmann::json metrics_json(const RunArtifacts& a) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["controller"] = to_string(a.config.controller);
  j["flow"] = a.config.flow;
  j["rate"] = a.config.scaled_rate();
  j["runs"] = nlohmann::json::array();
  for (const auto& r : a.runs) {
    j["runs"].push_back({{"seed", r.seed},
                         {"report", to_json(r.report)},
                         {"collision_events", r.episode.collisions.size()},
                         {"gate_breaches", r.episode.counters.breaches}});
  }
  if (a.aggregate) j["aggregate"] = to_json(*a.aggregate);
  return j;
}

nlohmann::json manifest(const RunArtifacts& a) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = "crossway";
  j["code_version"] = "0.1.0";
  j["config_hash"] = hex(a.config_hash);
  j["mode"] = to_string(a.config.mode);
  j["controller"] = to_string(a.config.controller);
  j["seeds"] = a.config.seeds;
  j["config"] = nlohmann::json::object();
  for (const auto& f : fields()) j["config"][f.key] = f.get(a.config);
  std::vector<std::string> files{"manifest.json"};
  if (!a.runs.empty() || a.training) files.push_back("config.txt");
  if (!a.runs.empty()) {
    files.push_back("metrics.csv");
    files.push_back("metrics.json");
    for (const auto& r : a.runs) files.push_back("trips_seed" + std::to_string(r.seed) + ".csv");
  }
  if (a.training) {
    files.push_back("curves.csv");
    files.push_back("epochs.csv");
    files.push_back("policy.bin");
  }
  j["files"] = files;
  return j;
}

void export_artifacts(const RunArtifacts& a, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create " + dir.string());
  // An empty run leaves only the manifest.
  if (!a.runs.empty() || a.training) write_file(dir / "config.txt", dump_config(a.config));
  if (!a.runs.empty()) {
    write_file(dir / "metrics.csv", metrics_csv(a));
    write_file(dir / "metrics.json", metrics_json(a).dump(2) + "\n");
    for (const auto& r : a.runs) {
      write_file(dir / ("trips_seed" + std::to_string(r.seed) + ".csv"), trips_csv(r.episode.trips));
    }
  }
  if (a.training) {
    write_file(dir / "curves.csv", curves_csv(a.training->curves));
    std::string ep = "epoch,rate,trips,passed,collided,palace,mean_actor_loss,mean_final_bce\n";
    for (const auto& e : a.training->epochs) {
      ep += std::to_string(e.epoch) + ',' + num(e.rate) + ',' + std::to_string(e.trips) + ',' +
            std::to_string(e.passed) + ',' + std::to_string(e.collided) + ',' + std::to_string(e.palace) +
            ',' + num(e.mean_actor_loss) + ',' + num(e.mean_final_bce) + '\n';
    }
    write_file(dir / "epochs.csv", ep);
    try {
      dhal::save_bundle(a.training->nets, (dir / "policy.bin").string());
    } catch (const nn::CheckpointError& e) {
      throw IoError(e.what());
    }
  }
  write_file(dir / "manifest.json", manifest(a).dump(2) + "\n");
}

}  // namespace crossway::harness
