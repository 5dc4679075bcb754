#ifndef SWEEPHERD_H
#define SWEEPHERD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SweepherdStatus {
  SWEEPHERD_STATUS_OK = 0,
  SWEEPHERD_STATUS_NULL_ARGUMENT = 1,
  SWEEPHERD_STATUS_INVALID_UTF8 = 2,
  SWEEPHERD_STATUS_INVALID_DESCRIPTOR = 3,
  SWEEPHERD_STATUS_OUT_OF_RANGE = 4,
  SWEEPHERD_STATUS_IO = 5,
  SWEEPHERD_STATUS_BAD_QUERY = 6,
  SWEEPHERD_STATUS_RUN_FAILED = 7,
  SWEEPHERD_STATUS_PANIC = 8,
} SweepherdStatus;

/**
 * Cancellation flags shared with a running [`sweepherd_run_local`].
 */
typedef struct SweepherdCancel SweepherdCancel;

/**
 * A parsed experiment descriptor.
 */
typedef struct SweepherdDescriptor SweepherdDescriptor;

/**
 * Receives one progress report as a JSON object. May be called from
 * several threads at once.
 */
typedef void (*SweepherdProgressFn)(const char *report_json, void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *sweepherd_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library on this thread.
 */
const char *sweepherd_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sweepherd_string_free(char *s);

/**
 * JSON schema of every environment and agent class.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SweepherdStatus sweepherd_schema_json(char **out);

/**
 * Parses and validates a descriptor. On `InvalidDescriptor` the last error
 * includes the violations as a JSON array.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SweepherdStatus sweepherd_descriptor_parse(const char *json, struct SweepherdDescriptor **out);

/**
 * # Safety
 * `d` must come from [`sweepherd_descriptor_parse`] and not have been freed.
 */
void sweepherd_descriptor_free(struct SweepherdDescriptor *d);

/**
 * Canonical JSON form of the descriptor.
 *
 * # Safety
 * `d` must be a live handle and `out` a valid pointer.
 */
enum SweepherdStatus sweepherd_descriptor_to_json(const struct SweepherdDescriptor *d, char **out);

/**
 * # Safety
 * `d` must be a live handle and `out` a valid pointer.
 */
enum SweepherdStatus sweepherd_descriptor_unit_count(const struct SweepherdDescriptor *d,
                                                     uint64_t *out);

/**
 * Unit `index` as JSON: `unit_id`, `index`, `seed`, `assignments` and the
 * fully `resolved` descriptor.
 *
 * # Safety
 * `d` must be a live handle and `out` a valid pointer.
 */
enum SweepherdStatus sweepherd_descriptor_unit(const struct SweepherdDescriptor *d,
                                               uint64_t index,
                                               char **out);

struct SweepherdCancel *sweepherd_cancel_new(void);

/**
 * # Safety
 * `c` must come from [`sweepherd_cancel_new`], not have been freed, and no
 * run may still be using it.
 */
void sweepherd_cancel_free(struct SweepherdCancel *c);

/**
 * Cancels every unit. Safe to call from any thread while a run is active.
 *
 * # Safety
 * `c` must be a live handle.
 */
enum SweepherdStatus sweepherd_cancel_all(const struct SweepherdCancel *c);

/**
 * # Safety
 * `c` must be a live handle and `unit_id` a NUL-terminated string.
 */
enum SweepherdStatus sweepherd_cancel_unit(const struct SweepherdCancel *c, const char *unit_id);

/**
 * Runs every unit of `d` under `root` with `jobs` worker threads and blocks
 * until all are final. `progress` and `cancel` may be NULL. On success
 * `statuses_json` (if not NULL) receives a JSON object mapping unit ids to
 * final statuses.
 *
 * # Safety
 * `d` must be a live handle, `root` a NUL-terminated string, `cancel` NULL or
 * a live handle, and `progress` safe to call concurrently with `user_data`.
 */
enum SweepherdStatus sweepherd_run_local(const struct SweepherdDescriptor *d,
                                         const char *root,
                                         uint32_t jobs,
                                         SweepherdProgressFn progress,
                                         void *user_data,
                                         const struct SweepherdCancel *cancel,
                                         char **statuses_json);

/**
 * Aggregates the logs in `experiment_dir` according to `query_json` and
 * writes an SVG plot to `svg_path` and, if `csv_path` is not NULL, a CSV
 * table. `title` may be NULL.
 *
 * # Safety
 * All non-NULL pointers must be NUL-terminated strings.
 */
enum SweepherdStatus sweepherd_report(const char *experiment_dir,
                                      const char *query_json,
                                      const char *title,
                                      const char *svg_path,
                                      const char *csv_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWEEPHERD_H */
