#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "harness.hpp"

using namespace crossway;
using namespace crossway::harness;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("crossway_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

ExperimentConfig short_test(ControllerKind c, std::vector<std::uint64_t> seeds) {
  ExperimentConfig cfg;
  cfg.controller = c;
  cfg.mode = Mode::kTest;
  cfg.flow = "low";
  cfg.desk_scale = 0.5;
  cfg.test_length = 300.0;
  cfg.drain = 60.0;
  cfg.seeds = std::move(seeds);
  return cfg;
}

}  // namespace

// Parameter table of the reference configuration, written out by hand.
TEST_CASE("defaults reproduce the reference parameter table") {
  const ExperimentConfig cfg;
  const std::map<std::string, std::string> table{
      {"train.episode_length", "300"}, {"test_length", "10000"},  {"layout.prep_depth", "100"},
      {"sim.substep", "0.1"},          {"sim.vehicle_length", "5"}, {"sim.vehicle_width", "1.8"},
      {"sim.v_max", "15"},             {"sim.a_max", "4"},          {"train.epochs", "100"},
      {"train.batch_size", "256"},     {"train.buffer_size", "1000000"},
      {"train.actor_lr", "1e-05"},     {"train.disc_lr", "1e-05"},  {"train.alpha", "0.6"},
      {"train.gamma", "0.2"},          {"sim.table_horizon", "100"},
  };
  for (const auto& [key, value] : table) CHECK_MESSAGE(get_option(cfg, key) == value, key);
  const auto& t = cfg.training;
  CHECK(t.sim.action_dt() == doctest::Approx(0.2));
  CHECK(t.agent.labels.horizon == 100.0);
  CHECK(t.sim.gate.horizon == 100.0);
  CHECK(t.cycle_length == 15);
  CHECK(flow_rate("low") == 5400.0);
  CHECK(flow_rate("medium") == 7200.0);
  CHECK(flow_rate("high") == 9000.0);
  CHECK(flow_rate("1234.5") == 1234.5);
  CHECK_THROWS_AS(flow_rate("-3"), ConfigError);
  CHECK_THROWS_AS(flow_rate("busy"), ConfigError);
}

TEST_CASE("options parse, dump and hash consistently") {
  std::istringstream in(
      "# comment line\n"
      "controller = fcfs\n"
      "flow = medium   # trailing comment\n"
      "\n"
      "seeds = 4,5,6\n"
      "train.alpha = 0.5\n");
  const auto cfg = parse_config(in);
  CHECK(cfg.controller == ControllerKind::kFcfs);
  CHECK(cfg.flow == "medium");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5, 6});
  CHECK(cfg.training.agent.loss.alpha == 0.5);

  std::istringstream again(dump_config(cfg));
  const auto back = parse_config(again);
  CHECK(dump_config(back) == dump_config(cfg));
  CHECK(config_hash(back) == config_hash(cfg));
  auto other = cfg;
  set_option(other, "train.alpha", "0.6");
  CHECK(config_hash(other) != config_hash(cfg));
  CHECK(option_keys().size() > 40);

  ExperimentConfig c;
  CHECK_THROWS_AS(set_option(c, "no.such.key", "1"), ConfigError);
  CHECK_THROWS_AS(set_option(c, "train.alpha", "abc"), ConfigError);
  CHECK_THROWS_AS(set_option(c, "controller", "pilot"), ConfigError);
  CHECK_THROWS_AS(get_option(c, "no.such.key"), ConfigError);
  std::istringstream broken("just some words\n");
  CHECK_THROWS_AS(parse_config(broken), ConfigError);
}

TEST_CASE("validation rejects out-of-range settings") {
  ExperimentConfig c;
  c.desk_scale = 0.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c.desk_scale = 1.5;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c.desk_scale = 0.5;
  c.seeds.clear();
  CHECK_THROWS_AS(validate(c), ConfigError);
  auto dhal_test = short_test(ControllerKind::kDhal, {1});
  dhal_test.checkpoint.clear();
  CHECK_THROWS_AS(run_experiment(dhal_test), ConfigError);
  dhal_test.checkpoint = "/nonexistent/policy.bin";
  CHECK_THROWS(run_experiment(dhal_test));
}

TEST_CASE("desk scale halves the arrival rate only") {
  auto c = short_test(ControllerKind::kFcfs, {1});
  CHECK(c.scaled_rate() == doctest::Approx(2700.0));
  c.desk_scale = 1.0;
  CHECK(c.scaled_rate() == doctest::Approx(5400.0));
}

TEST_CASE("test mode replicates seeds and aggregates") {
  const auto art = run_experiment(short_test(ControllerKind::kFcfs, {1, 2, 3}));
  REQUIRE(art.runs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(art.runs[i].seed == i + 1);
    CHECK(art.runs[i].report.total > 20);
    CHECK(art.runs[i].report.collided == 0);
  }
  REQUIRE(art.aggregate);
  CHECK(art.aggregate->pr.n == 3);
  const auto csv = metrics_csv(art);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.substr(0, csv.find('\n')) ==
        "controller,flow,seed,total,passed,collided,unfinished,stopped,pr,sr,att,dtt,afc");
}

TEST_CASE("trip csv schema") {
  const std::vector<std::string> expected{"id",           "trajectory", "spawn_time",
                                          "t_enter_prep", "t_exit_cross", "travel_time",
                                          "stopped",      "fuel_ml",    "outcome"};
  CHECK(trip_csv_columns() == expected);
  TripRecord t;
  t.id = 7;
  t.trajectory = 3;
  t.spawn_time = 1.5;
  t.t_enter_prep = 2.0;
  t.t_exit_cross = 12.25;
  t.stopped = true;
  t.fuel_ml = 4.0;
  t.outcome = Outcome::kPassed;
  const std::vector<TripRecord> one{t};
  const auto csv = trips_csv(one);
  const auto row = csv.substr(csv.find('\n') + 1);
  CHECK(row == "7,3,1.5,2,12.25,10.25,1,4,passed\n");
}

TEST_CASE("identical config and seed give byte-identical trip logs") {
  const auto cfg = short_test(ControllerKind::kPlatoon, {9});
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  CHECK(trips_csv(a.runs[0].episode.trips) == trips_csv(b.runs[0].episode.trips));
}

TEST_CASE("export writes the manifest and round-trips the report") {
  const auto art = run_experiment(short_test(ControllerKind::kFt, {2, 4}));
  const auto dir = scratch_dir("export");
  export_artifacts(art, dir);
  for (const char* f : {"manifest.json", "config.txt", "metrics.csv", "metrics.json",
                        "trips_seed2.csv", "trips_seed4.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  }
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(m.at("schema_version") == kSchemaVersion);
  CHECK(m.at("config_hash").get<std::string>().size() == 16);

  const auto j = nlohmann::json::parse(slurp(dir / "metrics.json"));
  REQUIRE(j.at("runs").size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto back = report_from_json(j["runs"][i]["report"]);
    CHECK(metrics_csv_row(back) == metrics_csv_row(art.runs[i].report));
  }

  // Replay from the manifest alone.
  ExperimentConfig replay;
  for (const auto& [k, v] : m.at("config").items()) set_option(replay, k, v.get<std::string>());
  CHECK(config_hash(replay) == art.config_hash);
  const auto again = run_experiment(replay);
  CHECK(trips_csv(again.runs[1].episode.trips) == slurp(dir / "trips_seed4.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("an empty run exports only its description") {
  RunArtifacts empty;
  const auto dir = scratch_dir("empty");
  export_artifacts(empty, dir);
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir)) names.push_back(e.path().filename().string());
  CHECK(names == std::vector<std::string>{"manifest.json"});
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(export_artifacts(empty, "/proc/definitely/not/writable"), IoError);
}

TEST_CASE("train mode runs the curriculum and saves a policy") {
  ExperimentConfig cfg;
  cfg.mode = Mode::kTrain;
  cfg.controller = ControllerKind::kDhal;
  cfg.desk_scale = 0.5;
  set_option(cfg, "train.epochs", "1");
  set_option(cfg, "train.episode_length", "60");
  set_option(cfg, "net.branch", "16");
  set_option(cfg, "net.head", "8");
  set_option(cfg, "train.batch_size", "16");
  const auto art = run_experiment(cfg);
  REQUIRE(art.training);
  REQUIRE(art.training->epochs.size() == 1);
  // Curriculum rate of the first band, halved.
  CHECK(art.training->epochs[0].rate >= 3000.0);
  CHECK(art.training->epochs[0].rate <= 3600.0);
  const auto dir = scratch_dir("train");
  export_artifacts(art, dir);
  CHECK(std::filesystem::exists(dir / "policy.bin"));
  CHECK(std::filesystem::exists(dir / "curves.csv"));
  CHECK(slurp(dir / "curves.csv").rfind("step,epoch,actor_loss,immediate_bce,final_bce,gamma\n", 0) == 0);

  auto test = short_test(ControllerKind::kDhal, {1});
  test.checkpoint = (dir / "policy.bin").string();
  set_option(test, "net.branch", "16");
  set_option(test, "net.head", "8");
  const auto run = run_experiment(test);
  REQUIRE(run.runs.size() == 1);
  CHECK(run.runs[0].report.total > 0);
  std::filesystem::remove_all(dir);
}
