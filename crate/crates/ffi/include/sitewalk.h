#ifndef SITEWALK_H
#define SITEWALK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SwStatus {
  SW_STATUS_OK = 0,
  SW_STATUS_NULL_ARGUMENT = 1,
  SW_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed URL, action or agent output.
   */
  SW_STATUS_PARSE_ERROR = 3,
  /**
   * Site specification failed to load.
   */
  SW_STATUS_SPEC_ERROR = 4,
  SW_STATUS_CONFIG_ERROR = 5,
  SW_STATUS_PROVIDER_ERROR = 6,
  SW_STATUS_DATA_ERROR = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  SW_STATUS_PANIC = 8,
} SwStatus;

/**
 * A run configuration with command-line style overrides applied.
 */
typedef struct SwConfig SwConfig;

/**
 * A loaded site specification.
 */
typedef struct SwSite SwSite;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on this thread; do not free.
 */
const char *sw_last_error(void);

/**
 * Library version as a static string; do not free.
 */
const char *sw_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void sw_string_free(char *s);

/**
 * Parses a site specification from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum SwStatus sw_site_load(const char *toml, struct SwSite **out);

/**
 * Loads a site specification file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SwStatus sw_site_load_file(const char *path, struct SwSite **out);

/**
 * # Safety
 * `site` must come from `sw_site_load*` and not be freed twice. Null is
 * ignored.
 */
void sw_site_free(struct SwSite *site);

/**
 * Number of pages reachable by clicking from the site root.
 *
 * # Safety
 * `site` must be a live handle; `out` must be writable.
 */
enum SwStatus sw_site_reachable_pages(const struct SwSite *site, size_t *out);

/**
 * Site id as a new string.
 *
 * # Safety
 * `site` must be a live handle; `out` must be writable.
 */
enum SwStatus sw_site_id(const struct SwSite *site, char **out);

/**
 * Canonical form of a URL.
 *
 * # Safety
 * `url` must be a NUL-terminated string; `out` must be writable.
 */
enum SwStatus sw_canonicalize_url(const char *url, char **out);

/**
 * Number of non-empty path segments of a URL.
 *
 * # Safety
 * `url` must be a NUL-terminated string; `out` must be writable.
 */
enum SwStatus sw_url_path_depth(const char *url, size_t *out);

/**
 * Parses an agent reply into its action, rendered in call syntax, and the
 * thought. Either output pointer may be null if unwanted.
 *
 * # Safety
 * `output` must be a NUL-terminated string; non-null outputs must be
 * writable.
 */
enum SwStatus sw_parse_agent_output(const char *output, char **action_out, char **thought_out);

/**
 * Normalizes an action call such as `click( "12" )` to its canonical
 * rendering, and returns its JSON form when `json_out` is non-null.
 *
 * # Safety
 * `call` must be a NUL-terminated string; non-null outputs must be writable.
 */
enum SwStatus sw_normalize_action(const char *call, char **rendered_out, char **json_out);

/**
 * Loads and validates a `run.toml`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SwStatus sw_config_load(const char *path, struct SwConfig **out);

/**
 * # Safety
 * `config` must come from `sw_config_load` and not be freed twice. Null is
 * ignored.
 */
void sw_config_free(struct SwConfig *config);

/**
 * Overrides seed and determinism; a null `output_dir` keeps the configured
 * one.
 *
 * # Safety
 * `config` must be a live handle; `output_dir` null or NUL-terminated.
 */
enum SwStatus sw_config_override(struct SwConfig *config,
                                 uint64_t seed,
                                 bool deterministic,
                                 const char *output_dir);

/**
 * Runs exploration and returns the dataset path.
 *
 * # Safety
 * `config` must be a live handle; `dataset_out` writable.
 */
enum SwStatus sw_explore(const struct SwConfig *config, char **dataset_out);

/**
 * Dataset statistics as a JSON document.
 *
 * # Safety
 * `dataset` must be a NUL-terminated string; `json_out` writable.
 */
enum SwStatus sw_dataset_stats(const char *dataset, char **json_out);

/**
 * Writes fine-tuning examples and reports how many.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `count_out` writable.
 */
enum SwStatus sw_export_sft(const char *dataset, const char *destination, size_t *count_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SITEWALK_H */
