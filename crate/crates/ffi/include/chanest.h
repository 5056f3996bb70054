#ifndef CHANEST_H
#define CHANEST_H

/* Generated by cbindgen from chanest-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes of every fallible entry point.
 */
typedef enum ChanestStatus {
  CHANEST_STATUS_OK = 0,
  /**
   * Invalid configuration or arguments.
   */
  CHANEST_STATUS_CONFIG_ERROR = 1,
  /**
   * The operation itself failed.
   */
  CHANEST_STATUS_RUNTIME_ERROR = 2,
  /**
   * A required pointer was null.
   */
  CHANEST_STATUS_NULL_POINTER = 3,
  /**
   * A string argument was not valid UTF-8.
   */
  CHANEST_STATUS_INVALID_UTF8 = 4,
} ChanestStatus;

/**
 * Opaque experiment handle.
 */
typedef struct ChanestLab ChanestLab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed by the caller.
 */
const char *chanest_version(void);

/**
 * Message for the most recent error on this thread. The pointer stays valid
 * until the next failing call on the same thread; do not free it.
 */
const char *chanest_last_error_message(void);

/**
 * Frees a string returned through an out-parameter.
 *
 * # Safety
 * `s` must be a pointer previously returned by this library through a
 * `char**` out-parameter, not yet freed; null is a no-op.
 */
void chanest_string_free(char *s);

/**
 * Parses an experiment configuration from TOML text.
 *
 * # Safety
 * `toml_text` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to writable storage for one pointer.
 */
enum ChanestStatus chanest_lab_from_toml(const char *toml_text, struct ChanestLab **out);

/**
 * Loads an experiment configuration from a TOML file.
 *
 * # Safety
 * As [`chanest_lab_from_toml`], with `path` a valid NUL-terminated path.
 */
enum ChanestStatus chanest_lab_from_file(const char *path, struct ChanestLab **out);

/**
 * Releases a lab handle.
 *
 * # Safety
 * `lab` must come from a `chanest_lab_from_*` call and not be used after.
 */
void chanest_lab_free(struct ChanestLab *lab);

/**
 * Generates the train/val/test dataset file pairs under `out_dir`.
 *
 * # Safety
 * `lab` must be a live handle; `out_dir` a valid NUL-terminated path.
 */
enum ChanestStatus chanest_lab_generate(const struct ChanestLab *lab, const char *out_dir);

/**
 * Runs the experiment grid (resumable) and writes the result bundle and CSV
 * outputs under `out_dir`.
 *
 * # Safety
 * `lab` must be a live handle; `out_dir` a valid NUL-terminated path.
 */
enum ChanestStatus chanest_lab_run(const struct ChanestLab *lab, const char *out_dir);

/**
 * Evaluates a trained checkpoint on the lab's test split and writes
 * `mse_<estimator>.csv` and `.json` under `out_dir`.
 *
 * # Safety
 * `lab` must be a live handle; both paths valid NUL-terminated strings.
 */
enum ChanestStatus chanest_lab_eval_checkpoint(const struct ChanestLab *lab,
                                               const char *checkpoint_path,
                                               const char *out_dir);

/**
 * Closed-form FLOPs/parameter table as a JSON string (caller frees with
 * `chanest_string_free`).
 *
 * # Safety
 * `out_json` must point to writable storage for one pointer.
 */
enum ChanestStatus chanest_complexity_table_json(bool paper_scale,
                                                 bool include_acquisition,
                                                 bool drop_final_attention,
                                                 char **out_json);

/**
 * Fills `out` with the length-`2 * n_antennas` interleaved re/im steering
 * vector for a half-wavelength ULA.
 *
 * # Safety
 * `out` must point to at least `2 * n_antennas` writable doubles.
 */
enum ChanestStatus chanest_steering_vector(double theta, size_t n_antennas, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHANEST_H */
