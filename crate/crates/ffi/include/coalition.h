/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef COALITION_H
#define COALITION_H

#include <stdbool.h>
#include <stddef.h>

// Result of every fallible call.
typedef enum CoalStatus {
  COAL_STATUS_OK = 0,
  // A required pointer argument was null.
  COAL_STATUS_NULL_ARGUMENT = 1,
  // An input string was not valid UTF-8.
  COAL_STATUS_INVALID_UTF8 = 2,
  // An input string was not the expected JSON.
  COAL_STATUS_INVALID_JSON = 3,
  // Well-formed input the operation rejects (unknown path, empty golden
  // plan, unparseable plan text, ...).
  COAL_STATUS_INVALID_INPUT = 4,
  // Configuration or catalog could not be loaded.
  COAL_STATUS_CONFIG = 5,
  // A pipeline run failed; the trace is still returned when requested.
  COAL_STATUS_PIPELINE = 6,
  // A Rust panic was caught at the boundary.
  COAL_STATUS_PANIC = 7,
} CoalStatus;

// Opaque tool catalog.
typedef struct CoalCatalog CoalCatalog;

// Opaque loaded configuration ready to run queries.
typedef struct CoalSession CoalSession;

// ROUGE-L precision, recall and F1.
typedef struct CoalRouge {
  double pre;
  double rec;
  double f;
} CoalRouge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// successful call. The pointer stays valid until the next call on this
// thread; do not free it.
const char *coal_last_error(void);

// Releases a string returned through an out-parameter. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void coal_string_free(char *s);

// Library version as a static string.
const char *coal_version(void);

// ROUGE-L between a candidate and a reference text.
//
// # Safety
// String arguments must be valid NUL-terminated strings; `out` must point
// to writable memory.
enum CoalStatus coal_rouge_l(const char *candidate, const char *reference, struct CoalRouge *out);

// Whether the candidate plan ends with the golden plan's tool sequence.
//
// # Safety
// See [`coal_rouge_l`].
enum CoalStatus coal_eval_plan(const char *candidate_json, const char *golden_json, bool *out_pass);

// Parses planner output text (`1. tool: intent` lines) into plan JSON.
//
// # Safety
// See [`coal_rouge_l`]; free `*out_json` with [`coal_string_free`].
enum CoalStatus coal_plan_parse(const char *text, char **out_json);

// Loads a catalog file.
//
// # Safety
// `path` must be a valid string; free the handle with [`coal_catalog_free`].
enum CoalStatus coal_catalog_load(const char *path, struct CoalCatalog **out);

// Builds a catalog from JSON text.
//
// # Safety
// See [`coal_catalog_load`].
enum CoalStatus coal_catalog_from_json(const char *json, struct CoalCatalog **out);

// Number of tools in the catalog; 0 for null.
//
// # Safety
// `catalog` must be null or a live handle.
size_t coal_catalog_tool_count(const struct CoalCatalog *catalog);

// # Safety
// `catalog` must be null or a live handle, which becomes invalid.
void coal_catalog_free(struct CoalCatalog *catalog);

// Removes and repairs out-of-catalog steps. Writes
// `{"plan": [...], "removed": [...], "replaced": [...]}`.
//
// # Safety
// `catalog` must be a live handle; see also [`coal_plan_parse`].
enum CoalStatus coal_plan_sanitize(const struct CoalCatalog *catalog,
                                   const char *plan_json,
                                   char **out_json);

// Minimal sub-document holding the given paths.
//
// # Safety
// See [`coal_plan_parse`].
enum CoalStatus coal_json_project(const char *document_json,
                                  const char *paths_json,
                                  char **out_json);

// Projection onto the given paths, then shrunk to at most `budget`
// serialized characters.
//
// # Safety
// See [`coal_plan_parse`].
enum CoalStatus coal_json_reduce(const char *document_json,
                                 const char *paths_json,
                                 size_t budget,
                                 char **out_json);

// Loads a run configuration file and everything it references.
//
// # Safety
// `config_path` must be a valid string; free the handle with
// [`coal_session_free`].
enum CoalStatus coal_session_open(const char *config_path, struct CoalSession **out);

// Answers one query. On success `*out_response` holds the response text.
// When `out_trace` is non-null it receives the JSON-lines trace, also on
// [`CoalStatus::Pipeline`] failures.
//
// # Safety
// `session` must be a live handle; free returned strings with
// [`coal_string_free`].
enum CoalStatus coal_session_run(const struct CoalSession *session,
                                 const char *query,
                                 char **out_response,
                                 char **out_trace);

// # Safety
// `session` must be null or a live handle, which becomes invalid.
void coal_session_free(struct CoalSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COALITION_H */
