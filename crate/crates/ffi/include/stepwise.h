#ifndef STEPWISE_H
#define STEPWISE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SraStatus {
  SRA_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SRA_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  SRA_STATUS_INVALID_UTF8 = 2,
  /**
   * The engine configuration could not be parsed or applied.
   */
  SRA_STATUS_CONFIG_ERROR = 3,
  /**
   * Knowledge-base load or search failed.
   */
  SRA_STATUS_KB_ERROR = 4,
  /**
   * An argument was out of range or malformed.
   */
  SRA_STATUS_INVALID_ARGUMENT = 5,
  /**
   * The engine panicked; the handle may still be used.
   */
  SRA_STATUS_PANIC = 6,
} SraStatus;

/**
 * Shared engine: configuration, providers and knowledge base.
 */
typedef struct SraEngine SraEngine;

/**
 * One protocol session.
 */
typedef struct SraSession SraSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine from a JSON config (the same fields as the TOML
 * config file). Pass null or `"{}"` for defaults: mock provider, test
 * embedder, no knowledge base. Relative paths are resolved against the
 * current directory.
 *
 * # Safety
 * `config_json` must be null or a valid C string; `out` must be a valid
 * pointer to write the handle to.
 */
enum SraStatus sra_engine_new(const char *config_json, struct SraEngine **out);

/**
 * Releases an engine. Sessions created from it stay valid.
 *
 * # Safety
 * `engine` must be null or a handle from [`sra_engine_new`] not yet freed.
 */
void sra_engine_free(struct SraEngine *engine);

/**
 * Opens a new session on `engine`. `session_id` names the session in
 * event messages; null gives `"ffi"`.
 *
 * # Safety
 * `engine` must be a live engine handle; `session_id` null or a valid C
 * string; `out` a valid pointer.
 */
enum SraStatus sra_session_new(const struct SraEngine *engine,
                               const char *session_id,
                               struct SraSession **out);

/**
 * # Safety
 * `session` must be null or a handle from [`sra_session_new`] not yet
 * freed, with no call on it in progress.
 */
void sra_session_free(struct SraSession *session);

/**
 * Handles one protocol request line. On [`SraStatus::Ok`], `*out_lines`
 * receives all output lines joined by `\n` (possibly empty for a blank
 * input line). Protocol-level failures such as malformed JSON are
 * reported inside the response line, not through the status.
 *
 * # Safety
 * `session` must be a live session handle; `line` a valid C string;
 * `out_lines` a valid pointer.
 */
enum SraStatus sra_session_request(const struct SraSession *session,
                                   const char *line,
                                   char **out_lines);

/**
 * Cancels the session's in-flight generation, if any. Safe to call from
 * any thread. `*out_cancelled` (if not null) is set to 1 when a
 * generation was cancelled.
 *
 * # Safety
 * `session` must be a live session handle; `out_cancelled` null or valid.
 */
enum SraStatus sra_session_cancel(const struct SraSession *session, uint8_t *out_cancelled);

/**
 * Searches the engine's knowledge base. `*out_json` receives a JSON
 * array of `{chunk_id, score, best_variant_id, title, content}` in rank
 * order.
 *
 * # Safety
 * `engine` must be a live engine handle; `query` a valid C string;
 * `out_json` a valid pointer.
 */
enum SraStatus sra_engine_search(const struct SraEngine *engine,
                                 const char *query,
                                 size_t k,
                                 bool use_hyde,
                                 char **out_json);

/**
 * Message for the last failed call on this thread, or null. The caller
 * owns the returned string.
 */
char *sra_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void sra_string_free(char *s);

/**
 * Library version, static storage.
 */
const char *sra_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEPWISE_H */
