#include <crossway/crossway.h>

#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <new>
#include <sstream>
#include <string>

#include "dhal.hpp"
#include "geometry.hpp"
#include "harness.hpp"
#include "nnet.hpp"

struct cw_config {
  crossway::harness::ExperimentConfig value;
};

struct cw_result {
  crossway::harness::RunArtifacts value;
};

namespace {

namespace h = crossway::harness;

thread_local std::string g_last_error;

cw_status fail(cw_status s, std::string message) {
  g_last_error = std::move(message);
  return s;
}

// Maps the core's exception types onto status codes.
template <class F>
cw_status guarded(F&& f) {
  try {
    return f();
  } catch (const h::ConfigError& e) {
    return fail(CW_E_CONFIG, e.what());
  } catch (const h::IoError& e) {
    return fail(CW_E_IO, e.what());
  } catch (const crossway::nn::CheckpointError& e) {
    return fail(CW_E_CHECKPOINT, e.what());
  } catch (const crossway::dhal::NonFiniteLoss& e) {
    return fail(CW_E_NUMERIC, e.what());
  } catch (const crossway::LayoutError& e) {
    return fail(CW_E_LAYOUT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(CW_E_INTERNAL, "out of memory");
  } catch (const std::invalid_argument& e) {
    return fail(CW_E_CONFIG, e.what());
  } catch (const std::exception& e) {
    return fail(CW_E_INTERNAL, e.what());
  } catch (...) {
    return fail(CW_E_INTERNAL, "unknown error");
  }
}

cw_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (!buf && cap) return fail(CW_E_INVALID_ARGUMENT, "null buffer with non-zero capacity");
  if (needed) *needed = s.size();
  if (buf && cap) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  return CW_OK;
}

double opt(const std::optional<double>& v) {
  return v ? *v : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

extern "C" {

const char* cw_version(void) { return "0.1.0"; }

const char* cw_status_name(cw_status status) {
  switch (status) {
    case CW_OK: return "ok";
    case CW_E_INVALID_ARGUMENT: return "invalid argument";
    case CW_E_CONFIG: return "configuration error";
    case CW_E_LAYOUT: return "layout error";
    case CW_E_IO: return "i/o error";
    case CW_E_CHECKPOINT: return "checkpoint error";
    case CW_E_NUMERIC: return "numeric error";
    case CW_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* cw_last_error(void) { return g_last_error.c_str(); }

cw_status cw_config_create(cw_config** out) {
  if (!out) return fail(CW_E_INVALID_ARGUMENT, "null output pointer");
  *out = nullptr;
  return guarded([&] {
    std::istringstream empty;
    *out = new cw_config{h::parse_config(empty)};
    return CW_OK;
  });
}

void cw_config_destroy(cw_config* config) { delete config; }

cw_status cw_config_clone(const cw_config* config, cw_config** out) {
  if (!config || !out) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    *out = new cw_config{config->value};
    return CW_OK;
  });
}

cw_status cw_config_load(cw_config* config, const char* path) {
  if (!config || !path) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    // Parsed into a copy so a bad file leaves the handle untouched.
    config->value = h::load_config(path, config->value);
    return CW_OK;
  });
}

cw_status cw_config_set(cw_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    auto copy = config->value;
    h::set_option(copy, key, value);
    config->value = std::move(copy);
    return CW_OK;
  });
}

cw_status cw_config_get(const cw_config* config, const char* key, char* buf, size_t cap,
                        size_t* needed) {
  if (!config || !key) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  return guarded([&] { return copy_out(h::get_option(config->value, key), buf, cap, needed); });
}

cw_status cw_config_dump(const cw_config* config, char* buf, size_t cap, size_t* needed) {
  if (!config) return fail(CW_E_INVALID_ARGUMENT, "null config");
  return guarded([&] { return copy_out(h::dump_config(config->value), buf, cap, needed); });
}

cw_status cw_config_hash(const cw_config* config, uint64_t* out) {
  if (!config || !out) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    *out = h::config_hash(config->value);
    return CW_OK;
  });
}

cw_status cw_config_validate(const cw_config* config) {
  if (!config) return fail(CW_E_INVALID_ARGUMENT, "null config");
  return guarded([&] {
    h::validate(config->value);
    return CW_OK;
  });
}

cw_status cw_layout_json(const cw_config* config, char* buf, size_t cap, size_t* needed) {
  if (!config) return fail(CW_E_INVALID_ARGUMENT, "null config");
  return guarded([&] {
    const auto layout = crossway::build_layout(config->value.training.layout);
    return copy_out(crossway::layout_to_json(layout).dump(2) + "\n", buf, cap, needed);
  });
}

cw_status cw_run(const cw_config* config, cw_progress_fn progress, void* user, cw_result** out) {
  if (!config || !out) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    h::Progress report;
    if (progress) report = [&](const std::string& line) { progress(line.c_str(), user); };
    *out = new cw_result{h::run_experiment(config->value, report)};
    return CW_OK;
  });
}

void cw_result_destroy(cw_result* result) { delete result; }

cw_status cw_result_export(const cw_result* result, const char* dir) {
  if (!result || !dir) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    h::export_artifacts(result->value, dir);
    return CW_OK;
  });
}

cw_status cw_result_seed_count(const cw_result* result, size_t* out) {
  if (!result || !out) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  *out = result->value.runs.size();
  return CW_OK;
}

cw_status cw_result_seed(const cw_result* result, size_t index, uint64_t* out) {
  if (!result || !out) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  if (index >= result->value.runs.size()) return fail(CW_E_INVALID_ARGUMENT, "seed index out of range");
  *out = result->value.runs[index].seed;
  return CW_OK;
}

cw_status cw_result_metric(const cw_result* result, size_t index, const char* name, double* out) {
  if (!result || !name || !out) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  if (index >= result->value.runs.size()) return fail(CW_E_INVALID_ARGUMENT, "seed index out of range");
  const auto& run = result->value.runs[index];
  const auto& r = run.report;
  const std::string n = name;
  if (n == "total") *out = static_cast<double>(r.total);
  else if (n == "passed") *out = static_cast<double>(r.passed);
  else if (n == "collided") *out = static_cast<double>(r.collided);
  else if (n == "unfinished") *out = static_cast<double>(r.unfinished);
  else if (n == "stopped") *out = static_cast<double>(r.stopped);
  else if (n == "pr") *out = r.pr;
  else if (n == "sr") *out = r.sr;
  else if (n == "att") *out = opt(r.att);
  else if (n == "dtt") *out = opt(r.dtt);
  else if (n == "afc") *out = opt(r.afc);
  else if (n == "collision_events") *out = static_cast<double>(run.episode.collisions.size());
  else return fail(CW_E_INVALID_ARGUMENT, "unknown metric '" + n + "'");
  return CW_OK;
}

cw_status cw_result_trips_csv(const cw_result* result, size_t index, char* buf, size_t cap,
                              size_t* needed) {
  if (!result) return fail(CW_E_INVALID_ARGUMENT, "null result");
  if (index >= result->value.runs.size()) return fail(CW_E_INVALID_ARGUMENT, "seed index out of range");
  return guarded(
      [&] { return copy_out(h::trips_csv(result->value.runs[index].episode.trips), buf, cap, needed); });
}

cw_status cw_result_metrics_json(const cw_result* result, char* buf, size_t cap, size_t* needed) {
  if (!result) return fail(CW_E_INVALID_ARGUMENT, "null result");
  return guarded([&] { return copy_out(h::metrics_json(result->value).dump(2), buf, cap, needed); });
}

cw_status cw_result_curve_count(const cw_result* result, size_t* out) {
  if (!result || !out) return fail(CW_E_INVALID_ARGUMENT, "null argument");
  *out = result->value.training ? result->value.training->curves.size() : 0;
  return CW_OK;
}

cw_status cw_result_curves_csv(const cw_result* result, char* buf, size_t cap, size_t* needed) {
  if (!result) return fail(CW_E_INVALID_ARGUMENT, "null result");
  if (!result->value.training) return fail(CW_E_INVALID_ARGUMENT, "not a training result");
  return guarded([&] { return copy_out(h::curves_csv(result->value.training->curves), buf, cap, needed); });
}

}  // extern "C"
