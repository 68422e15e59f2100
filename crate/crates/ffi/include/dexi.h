#ifndef DEXI_H
#define DEXI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DexiStatus {
  DEXI_STATUS_OK = 0,
  DEXI_STATUS_NULL_ARGUMENT = 1,
  DEXI_STATUS_INVALID_UTF8 = 2,
  DEXI_STATUS_DECODE = 3,
  DEXI_STATUS_UNKNOWN_CONFIG = 4,
  DEXI_STATUS_CORPUS = 5,
  DEXI_STATUS_UNKNOWN_ENTRY = 6,
  DEXI_STATUS_SEARCH = 7,
  DEXI_STATUS_BUDGET_EXHAUSTED = 8,
  DEXI_STATUS_OUT_OF_RANGE = 9,
  DEXI_STATUS_PANIC = 10,
} DexiStatus;

// A loaded corpus of applications.
typedef struct DexiCorpus DexiCorpus;

// A distributed execution index.
typedef struct DexiIndex DexiIndex;

// Result of one exploration.
typedef struct DexiReport DexiReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next failing call on the same thread; do not free.
const char *dexi_last_error(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not be freed twice.
void dexi_string_free(char *s);

// Parses the wire form of an index.
//
// # Safety
// `text` must be a NUL-terminated string and `out` writable.
enum DexiStatus dexi_index_decode(const char *text, struct DexiIndex **out);

// Wire form of `index`; free with `dexi_string_free`.
//
// # Safety
// `index` must be a live handle and `out` writable.
enum DexiStatus dexi_index_encode(const struct DexiIndex *index, char **out);

// Number of entries in `index`.
//
// # Safety
// `index` must be a live handle and `out` writable.
enum DexiStatus dexi_index_len(const struct DexiIndex *index, size_t *out);

// Whether `prefix` is a (not necessarily strict) prefix of `index`.
//
// # Safety
// Both handles must be live and `out` writable.
enum DexiStatus dexi_index_is_prefix(const struct DexiIndex *prefix,
                                     const struct DexiIndex *index,
                                     bool *out);

// Projects `index` under a config label such as `no-count`.
//
// # Safety
// `index` must be live, `config_label` NUL-terminated, `out` writable.
enum DexiStatus dexi_index_project(const struct DexiIndex *index,
                                   const char *config_label,
                                   struct DexiIndex **out);

// # Safety
// `index` must come from this library and not be freed twice.
void dexi_index_free(struct DexiIndex *index);

// The corpus compiled into the library.
//
// # Safety
// `out` must be writable.
enum DexiStatus dexi_corpus_bundled(struct DexiCorpus **out);

// Loads a corpus directory or a single entry file.
//
// # Safety
// `path` must be NUL-terminated and `out` writable.
enum DexiStatus dexi_corpus_load(const char *path, struct DexiCorpus **out);

// # Safety
// `corpus` must be live and `out` writable.
enum DexiStatus dexi_corpus_len(const struct DexiCorpus *corpus, size_t *out);

// Name of entry `i`; free with `dexi_string_free`.
//
// # Safety
// `corpus` must be live and `out` writable.
enum DexiStatus dexi_corpus_entry_name(const struct DexiCorpus *corpus, size_t i, char **out);

// # Safety
// `corpus` must come from this library and not be freed twice.
void dexi_corpus_free(struct DexiCorpus *corpus);

// Explores entry `name` under `config_label` with the virtual scheduler
// and seed 0. When the execution budget runs out the status is
// `DEXI_STATUS_BUDGET_EXHAUSTED` and `out` still receives the partial
// report.
//
// # Safety
// `corpus` must be live, strings NUL-terminated, `out` writable.
enum DexiStatus dexi_explore(const struct DexiCorpus *corpus,
                             const char *name,
                             const char *config_label,
                             bool reduction,
                             size_t budget,
                             struct DexiReport **out);

// # Safety
// `report` must be live and `out` writable.
enum DexiStatus dexi_report_total_executed(const struct DexiReport *report, size_t *out);

// Number of completeness violations found in the report.
//
// # Safety
// `report` must be live and `out` writable.
enum DexiStatus dexi_report_violations(const struct DexiReport *report, size_t *out);

// The report as JSON; free with `dexi_string_free`.
//
// # Safety
// `report` must be live and `out` writable.
enum DexiStatus dexi_report_json(const struct DexiReport *report, char **out);

// # Safety
// `report` must come from this library and not be freed twice.
void dexi_report_free(struct DexiReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEXI_H */
