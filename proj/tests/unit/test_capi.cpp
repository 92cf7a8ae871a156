#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include <crossway/crossway.h>

namespace {

// Reads a (buf, cap, needed) string output in two calls.
template <class F>
std::string read_string(F&& call) {
  size_t needed = 0;
  REQUIRE(call(nullptr, 0, &needed) == CW_OK);
  std::string s(needed + 1, '\0');
  REQUIRE(call(s.data(), s.size(), &needed) == CW_OK);
  s.resize(needed);
  return s;
}

cw_config* short_fcfs() {
  cw_config* c = nullptr;
  REQUIRE(cw_config_create(&c) == CW_OK);
  REQUIRE(cw_config_set(c, "controller", "fcfs") == CW_OK);
  REQUIRE(cw_config_set(c, "test_length", "200") == CW_OK);
  REQUIRE(cw_config_set(c, "desk_scale", "0.5") == CW_OK);
  REQUIRE(cw_config_set(c, "seeds", "1,2") == CW_OK);
  return c;
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(cw_version()) == "0.1.0");
  CHECK(std::string(cw_status_name(CW_OK)) == "ok");
  CHECK(std::string(cw_status_name(CW_E_CHECKPOINT)) != "");
}

TEST_CASE("config set, get and truncating reads") {
  cw_config* c = nullptr;
  REQUIRE(cw_config_create(&c) == CW_OK);
  CHECK(cw_config_set(c, "train.alpha", "0.25") == CW_OK);
  CHECK(read_string([&](char* b, size_t n, size_t* need) {
          return cw_config_get(c, "train.alpha", b, n, need);
        }) == "0.25");

  char tiny[3];
  size_t needed = 0;
  CHECK(cw_config_get(c, "controller", tiny, sizeof tiny, &needed) == CW_OK);
  CHECK(needed == 4);  // "dhal"
  CHECK(std::string(tiny) == "dh");

  CHECK(cw_config_set(c, "bogus", "1") == CW_E_CONFIG);
  CHECK(std::string(cw_last_error()).find("bogus") != std::string::npos);
  CHECK(cw_config_set(c, "train.alpha", "x") == CW_E_CONFIG);
  CHECK(cw_config_set(nullptr, "train.alpha", "1") == CW_E_INVALID_ARGUMENT);
  CHECK(cw_config_set(c, nullptr, "1") == CW_E_INVALID_ARGUMENT);

  uint64_t h1 = 0, h2 = 0;
  cw_config* d = nullptr;
  REQUIRE(cw_config_clone(c, &d) == CW_OK);
  CHECK(cw_config_hash(c, &h1) == CW_OK);
  CHECK(cw_config_hash(d, &h2) == CW_OK);
  CHECK(h1 == h2);
  CHECK(cw_config_set(d, "flow", "high") == CW_OK);
  CHECK(cw_config_hash(d, &h2) == CW_OK);
  CHECK(h1 != h2);

  const auto dump = read_string([&](char* b, size_t n, size_t* need) {
    return cw_config_dump(d, b, n, need);
  });
  CHECK(dump.find("flow = high") != std::string::npos);
  const auto path = std::filesystem::temp_directory_path() / "crossway_capi_config.txt";
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    REQUIRE(f != nullptr);
    std::fputs(dump.c_str(), f);
    std::fclose(f);
  }
  cw_config* e = nullptr;
  REQUIRE(cw_config_create(&e) == CW_OK);
  CHECK(cw_config_load(e, path.c_str()) == CW_OK);
  uint64_t h3 = 0;
  CHECK(cw_config_hash(e, &h3) == CW_OK);
  CHECK(h3 == h2);
  CHECK(cw_config_load(e, "/nonexistent/config.txt") == CW_E_IO);
  std::filesystem::remove(path);

  CHECK(cw_config_set(c, "desk_scale", "3") == CW_OK);
  CHECK(cw_config_validate(c) == CW_E_CONFIG);

  cw_config_destroy(e);
  cw_config_destroy(d);
  cw_config_destroy(c);
  cw_config_destroy(nullptr);
}

TEST_CASE("layout json lists twelve trajectories") {
  cw_config* c = nullptr;
  REQUIRE(cw_config_create(&c) == CW_OK);
  const auto js = read_string([&](char* b, size_t n, size_t* need) {
    return cw_layout_json(c, b, n, need);
  });
  CHECK(js.find("\"trajectories\"") != std::string::npos);
  CHECK(js.find("\"conflicts\"") != std::string::npos);
  cw_config_destroy(c);
}

TEST_CASE("a short fcfs run through the C interface") {
  cw_config* c = short_fcfs();
  int lines = 0;
  cw_result* r = nullptr;
  REQUIRE(cw_run(
              c, [](const char*, void* u) { ++*static_cast<int*>(u); }, &lines, &r) == CW_OK);
  CHECK(lines > 0);

  size_t n = 0;
  CHECK(cw_result_seed_count(r, &n) == CW_OK);
  REQUIRE(n == 2);
  uint64_t seed = 0;
  CHECK(cw_result_seed(r, 1, &seed) == CW_OK);
  CHECK(seed == 2);
  CHECK(cw_result_seed(r, 2, &seed) == CW_E_INVALID_ARGUMENT);

  double total = 0, passed = 0, pr = 0, collisions = -1;
  CHECK(cw_result_metric(r, 0, "total", &total) == CW_OK);
  CHECK(cw_result_metric(r, 0, "passed", &passed) == CW_OK);
  CHECK(cw_result_metric(r, 0, "pr", &pr) == CW_OK);
  CHECK(cw_result_metric(r, 0, "collision_events", &collisions) == CW_OK);
  CHECK(total > 0);
  CHECK(pr == doctest::Approx(100.0 * passed / total));
  CHECK(collisions == 0);
  double x = 0;
  CHECK(cw_result_metric(r, 0, "speed", &x) == CW_E_INVALID_ARGUMENT);

  const auto trips = read_string([&](char* b, size_t m, size_t* need) {
    return cw_result_trips_csv(r, 0, b, m, need);
  });
  CHECK(trips.rfind("id,trajectory,spawn_time,", 0) == 0);
  const auto mj = read_string([&](char* b, size_t m, size_t* need) {
    return cw_result_metrics_json(r, b, m, need);
  });
  CHECK(mj.find("\"runs\"") != std::string::npos);
  size_t curves = 7;
  CHECK(cw_result_curve_count(r, &curves) == CW_OK);
  CHECK(curves == 0);

  // Same config, same bytes.
  cw_result* again = nullptr;
  REQUIRE(cw_run(c, nullptr, nullptr, &again) == CW_OK);
  CHECK(read_string([&](char* b, size_t m, size_t* need) {
          return cw_result_trips_csv(again, 0, b, m, need);
        }) == trips);

  const auto dir = std::filesystem::temp_directory_path() / "crossway_capi_export";
  std::filesystem::remove_all(dir);
  CHECK(cw_result_export(r, dir.c_str()) == CW_OK);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "trips_seed1.csv"));
  std::filesystem::remove_all(dir);

  cw_result_destroy(again);
  cw_result_destroy(r);
  cw_result_destroy(nullptr);
  cw_config_destroy(c);
}

TEST_CASE("run errors map to status codes") {
  cw_config* c = nullptr;
  REQUIRE(cw_config_create(&c) == CW_OK);
  cw_result* r = nullptr;
  // Default controller is dhal in test mode, which needs a checkpoint.
  CHECK(cw_run(c, nullptr, nullptr, &r) == CW_E_CONFIG);
  CHECK(r == nullptr);
  REQUIRE(cw_config_set(c, "checkpoint", "/nonexistent/policy.bin") == CW_OK);
  const auto st = cw_run(c, nullptr, nullptr, &r);
  CHECK((st == CW_E_CHECKPOINT || st == CW_E_IO));
  CHECK(cw_run(nullptr, nullptr, nullptr, &r) == CW_E_INVALID_ARGUMENT);
  CHECK(cw_run(c, nullptr, nullptr, nullptr) == CW_E_INVALID_ARGUMENT);
  cw_config_destroy(c);
}
