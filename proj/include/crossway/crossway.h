/* crossway: signal-free intersection simulation, learned admission control
 * and rule-based baselines behind a C interface.
 *
 * Every call returns a cw_status. On failure a description is available
 * from cw_last_error() on the calling thread until its next failing call.
 * Handles are opaque; each *_create / producing call has a matching
 * *_destroy that accepts NULL.
 *
 * String outputs use the (buf, cap, needed) convention: the full length
 * excluding the terminator is stored in *needed (when non-NULL), and as
 * much as fits is copied into buf with a terminator. Pass buf = NULL and
 * cap = 0 to query the size.
 */
#ifndef CROSSWAY_CROSSWAY_H
#define CROSSWAY_CROSSWAY_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(CROSSWAY_BUILDING_LIBRARY)
#    define CW_API __declspec(dllexport)
#  else
#    define CW_API __declspec(dllimport)
#  endif
#else
#  define CW_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cw_status {
  CW_OK = 0,
  CW_E_INVALID_ARGUMENT = 1, /* null handle, bad index, unknown metric */
  CW_E_CONFIG = 2,           /* unknown option, malformed value, invalid combination */
  CW_E_LAYOUT = 3,           /* layout geometry could not be built */
  CW_E_IO = 4,               /* file could not be read or written */
  CW_E_CHECKPOINT = 5,       /* policy bundle missing, truncated or mismatched */
  CW_E_NUMERIC = 6,          /* training produced a non-finite loss */
  CW_E_INTERNAL = 99
} cw_status;

typedef struct cw_config cw_config;
typedef struct cw_result cw_result;

typedef void (*cw_progress_fn)(const char* line, void* user);

CW_API const char* cw_version(void);
CW_API const char* cw_status_name(cw_status status);
CW_API const char* cw_last_error(void);

/* ---- configuration */

/* Defaults: dhal controller, test mode, low flow, desk scale 1, seed 1. */
CW_API cw_status cw_config_create(cw_config** out);
CW_API void cw_config_destroy(cw_config* config);
CW_API cw_status cw_config_clone(const cw_config* config, cw_config** out);

/* Applies a `key = value` file on top of the current settings. */
CW_API cw_status cw_config_load(cw_config* config, const char* path);
CW_API cw_status cw_config_set(cw_config* config, const char* key, const char* value);
CW_API cw_status cw_config_get(const cw_config* config, const char* key, char* buf, size_t cap,
                               size_t* needed);
/* The whole configuration as a `key = value` document. */
CW_API cw_status cw_config_dump(const cw_config* config, char* buf, size_t cap, size_t* needed);
CW_API cw_status cw_config_hash(const cw_config* config, uint64_t* out);
CW_API cw_status cw_config_validate(const cw_config* config);

/* Layout of the configured intersection as JSON (trajectory polylines and
 * conflict points). */
CW_API cw_status cw_layout_json(const cw_config* config, char* buf, size_t cap, size_t* needed);

/* ---- runs */

/* Trains (mode = train) or evaluates every seed (mode = test). progress may
 * be NULL; it is called from the calling thread. */
CW_API cw_status cw_run(const cw_config* config, cw_progress_fn progress, void* user,
                        cw_result** out);
CW_API void cw_result_destroy(cw_result* result);

/* Writes manifest, config, metrics, trip logs and training artifacts. */
CW_API cw_status cw_result_export(const cw_result* result, const char* dir);

CW_API cw_status cw_result_seed_count(const cw_result* result, size_t* out);
CW_API cw_status cw_result_seed(const cw_result* result, size_t index, uint64_t* out);

/* Per-seed metric by name: total, passed, collided, unfinished, stopped,
 * pr, sr, att, dtt, afc, collision_events. Metrics without samples
 * (e.g. att with no passed trip) read as NaN. */
CW_API cw_status cw_result_metric(const cw_result* result, size_t index, const char* name,
                                  double* out);
CW_API cw_status cw_result_trips_csv(const cw_result* result, size_t index, char* buf, size_t cap,
                                     size_t* needed);
CW_API cw_status cw_result_metrics_json(const cw_result* result, char* buf, size_t cap,
                                        size_t* needed);

/* Training runs only; count is 0 for test runs. */
CW_API cw_status cw_result_curve_count(const cw_result* result, size_t* out);
CW_API cw_status cw_result_curves_csv(const cw_result* result, char* buf, size_t cap,
                                      size_t* needed);

#ifdef __cplusplus
}
#endif

#endif /* CROSSWAY_CROSSWAY_H */
