// Command-line front end over the C API.
//
//   crossway train --flow medium --desk-scale 0.5 --out runs/train --checkpoint policy.bin
//   crossway test --controller fcfs --flow low --seeds 1,2,3 --out runs/fcfs
//   crossway layout-dump --out layout.json

#include <crossway/crossway.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace {

struct ConfigHandle {
  cw_config* p = nullptr;
  ~ConfigHandle() { cw_config_destroy(p); }
};

struct ResultHandle {
  cw_result* p = nullptr;
  ~ResultHandle() { cw_result_destroy(p); }
};

int report(cw_status s, const std::string& what) {
  std::cerr << "crossway: " << what << ": " << cw_status_name(s) << ": " << cw_last_error() << "\n";
  return s == CW_E_CONFIG || s == CW_E_INVALID_ARGUMENT ? 2 : 1;
}

std::string fetch(cw_status (*f)(const cw_config*, char*, size_t, size_t*), const cw_config* c,
                  cw_status& s) {
  size_t n = 0;
  if ((s = f(c, nullptr, 0, &n)) != CW_OK) return {};
  std::string out(n + 1, '\0');
  s = f(c, out.data(), out.size(), &n);
  out.resize(n);
  return out;
}

struct Options {
  std::string controller;
  std::string flow;
  std::string seeds;
  std::uint64_t seed = 0;
  double desk_scale = 0.0;
  std::string config;
  std::string out;
  std::string checkpoint;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--flow", o.flow, "low, medium, high or a rate in veh/h");
  auto* seed = cmd->add_option("--seed", o.seed, "single seed");
  cmd->add_option("--seeds", o.seeds, "comma-separated seeds")->excludes(seed);
  cmd->add_option("--desk-scale", o.desk_scale, "fraction of the arrival rate and training budget")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--set", o.sets, "extra key=value override, repeatable");
}

// Command-line flags override the config file; --set overrides both.
int build_config(const Options& o, const char* mode, ConfigHandle& cfg) {
  if (auto s = cw_config_create(&cfg.p); s != CW_OK) return report(s, "config");
  if (!o.config.empty()) {
    if (auto s = cw_config_load(cfg.p, o.config.c_str()); s != CW_OK) return report(s, o.config);
  }
  std::vector<std::pair<std::string, std::string>> kv;
  if (mode) kv.emplace_back("mode", mode);
  if (!o.controller.empty()) kv.emplace_back("controller", o.controller);
  if (!o.flow.empty()) kv.emplace_back("flow", o.flow);
  if (o.seed) kv.emplace_back("seeds", std::to_string(o.seed));
  if (!o.seeds.empty()) kv.emplace_back("seeds", o.seeds);
  if (o.desk_scale > 0.0) kv.emplace_back("desk_scale", std::to_string(o.desk_scale));
  if (!o.checkpoint.empty()) kv.emplace_back("checkpoint", o.checkpoint);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      std::cerr << "crossway: --set expects key=value, got '" << s << "'\n";
      return 2;
    }
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : kv) {
    if (auto s = cw_config_set(cfg.p, k.c_str(), v.c_str()); s != CW_OK) return report(s, "--" + k);
  }
  return 0;
}

void print_progress(const char* line, void*) { std::cerr << line << "\n"; }

void print_summary(const cw_result* r) {
  size_t n = 0;
  cw_result_seed_count(r, &n);
  for (size_t i = 0; i < n; ++i) {
    std::uint64_t seed = 0;
    cw_result_seed(r, i, &seed);
    std::printf("seed %llu", static_cast<unsigned long long>(seed));
    for (const char* m : {"total", "pr", "sr", "att", "dtt", "afc", "collided"}) {
      double v = NAN;
      cw_result_metric(r, i, m, &v);
      std::printf(" %s %.4g", m, v);
    }
    std::printf("\n");
  }
}

int run(const Options& o, const char* mode) {
  ConfigHandle cfg;
  if (int rc = build_config(o, mode, cfg)) return rc;
  if (auto s = cw_config_validate(cfg.p); s != CW_OK) return report(s, "config");
  ResultHandle result;
  if (auto s = cw_run(cfg.p, print_progress, nullptr, &result.p); s != CW_OK) return report(s, mode);
  print_summary(result.p);
  if (!o.out.empty()) {
    if (auto s = cw_result_export(result.p, o.out.c_str()); s != CW_OK) return report(s, o.out);
    std::cerr << "artifacts written to " << o.out << "\n";
  }
  return 0;
}

int layout_dump(const Options& o) {
  ConfigHandle cfg;
  if (int rc = build_config(o, nullptr, cfg)) return rc;
  cw_status s = CW_OK;
  const auto json = fetch(cw_layout_json, cfg.p, s);
  if (s != CW_OK) return report(s, "layout");
  if (o.out.empty()) {
    std::cout << json;
    return 0;
  }
  std::ofstream f(o.out, std::ios::binary);
  f << json;
  if (!f) {
    std::cerr << "crossway: cannot write " << o.out << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Signal-free intersection simulator with learned admission control"};
  app.set_version_flag("--version", std::string(cw_version()));
  app.require_subcommand(1);

  Options train_opts, test_opts, layout_opts;

  auto* train = app.add_subcommand("train", "train the learned controller");
  add_common(train, train_opts);
  train->add_option("--out", train_opts.out, "artifact directory");
  train->add_option("--checkpoint", train_opts.checkpoint, "where to save the trained policy");

  auto* test = app.add_subcommand("test", "evaluate a controller over one or more seeds");
  add_common(test, test_opts);
  test->add_option("--controller", test_opts.controller, "dhal, ft, lqf, fcfs or platoon");
  test->add_option("--out", test_opts.out, "artifact directory");
  test->add_option("--checkpoint", test_opts.checkpoint, "trained policy (dhal only)");

  auto* layout = app.add_subcommand("layout-dump", "write the intersection layout as JSON");
  layout->add_option("--config", layout_opts.config, "key = value configuration file")
      ->check(CLI::ExistingFile);
  layout->add_option("--set", layout_opts.sets, "extra key=value override, repeatable");
  layout->add_option("--out", layout_opts.out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  if (*train) {
    train_opts.controller = "dhal";
    return run(train_opts, "train");
  }
  if (*test) return run(test_opts, "test");
  return layout_dump(layout_opts);
}
