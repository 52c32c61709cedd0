#ifndef NLCF_H
#define NLCF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NlcfStatus {
  NLCF_STATUS_OK = 0,
  NLCF_STATUS_NULL_POINTER = 1,
  NLCF_STATUS_INVALID_UTF8 = 2,
  NLCF_STATUS_PARSE = 3,
  NLCF_STATUS_PARAMETER = 4,
  NLCF_STATUS_NUMERICAL = 5,
  NLCF_STATUS_OUT_OF_RANGE = 6,
  /**
   * The scenario ran and missed its acceptance thresholds.
   */
  NLCF_STATUS_FAILED = 7,
} NlcfStatus;

/**
 * Interaction kernel.
 */
typedef struct NlcfKernel NlcfKernel;

/**
 * Planar set.
 */
typedef struct NlcfShape NlcfShape;

/**
 * Recorded evolution of a set.
 */
typedef struct NlcfTrace NlcfTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none.
 *
 * The pointer stays valid until the next failing call on this thread.
 */
const char *nlcf_last_error(void);

/**
 * Build a kernel from a JSON kernel spec, e.g. `{"type":"fractional","s":0.5}`.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer
 * to writable storage for one handle.
 */
enum NlcfStatus nlcf_kernel_from_json(const char *json, struct NlcfKernel **out);

/**
 * # Safety
 * `k` must be null or a handle from [`nlcf_kernel_from_json`] not yet freed.
 */
void nlcf_kernel_free(struct NlcfKernel *k);

/**
 * Curvature `c(R)` of the ball of radius `r`.
 *
 * # Safety
 * `k` must be a live kernel handle and `out` a valid `double` pointer.
 */
enum NlcfStatus nlcf_ball_curvature(const struct NlcfKernel *k, double r, double *out);

/**
 * Tail mass `Ψ(r)`.
 *
 * # Safety
 * `k` must be a live kernel handle and `out` a valid `double` pointer.
 */
enum NlcfStatus nlcf_psi(const struct NlcfKernel *k, double r, double *out);

/**
 * Build a shape from a JSON shape spec, e.g. `{"shape":"ball","radius":1}`.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer
 * to writable storage for one handle.
 */
enum NlcfStatus nlcf_shape_from_json(const char *json, struct NlcfShape **out);

/**
 * # Safety
 * `s` must be null or a handle from [`nlcf_shape_from_json`] not yet freed.
 */
void nlcf_shape_free(struct NlcfShape *s);

/**
 * Signed distance, positive inside.
 *
 * # Safety
 * `s` must be a live shape handle and `out` a valid `double` pointer.
 */
enum NlcfStatus nlcf_signed_distance(const struct NlcfShape *s, double x, double y, double *out);

/**
 * Principal-value curvature at a boundary point with its error bar.
 *
 * # Safety
 * `s` and `k` must be live handles; `value` and `bar` valid `double` pointers.
 */
enum NlcfStatus nlcf_curvature(const struct NlcfShape *s,
                               const struct NlcfKernel *k,
                               double x,
                               double y,
                               double *value,
                               double *bar);

/**
 * Level-set evolution of `s` on `[-half_width, half_width]²` with `n`
 * cells per side, recording `frames` frames after the initial one.
 *
 * # Safety
 * `s` and `k` must be live handles and `out` a valid pointer to writable
 * storage for one handle.
 */
enum NlcfStatus nlcf_evolve(const struct NlcfShape *s,
                            const struct NlcfKernel *k,
                            double t_end,
                            double half_width,
                            uintptr_t n,
                            uintptr_t frames,
                            struct NlcfTrace **out);

/**
 * # Safety
 * `t` must be null or a handle from [`nlcf_evolve`] not yet freed.
 */
void nlcf_trace_free(struct NlcfTrace *t);

/**
 * Number of recorded frames, the initial one included.
 *
 * # Safety
 * `t` must be a live trace handle and `out` a valid pointer.
 */
enum NlcfStatus nlcf_trace_len(const struct NlcfTrace *t, uintptr_t *out);

/**
 * Time and area of frame `i`.
 *
 * # Safety
 * `t` must be a live trace handle; `time` and `area` valid `double` pointers.
 */
enum NlcfStatus nlcf_trace_frame(const struct NlcfTrace *t,
                                 uintptr_t i,
                                 double *time,
                                 double *area);

/**
 * Extrapolated extinction time; `OutOfRange` if the set did not vanish.
 *
 * # Safety
 * `t` must be a live trace handle and `out` a valid `double` pointer.
 */
enum NlcfStatus nlcf_trace_extinction_time(const struct NlcfTrace *t, double *out);

/**
 * Run a scenario config (the `nlcf run` JSON) and return its summary as
 * a JSON string to be released with [`nlcf_string_free`]. The summary is
 * returned with status `Failed` when the scenario missed its thresholds.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `summary` a valid
 * pointer to writable storage for one string pointer.
 */
enum NlcfStatus nlcf_run_scenario(const char *json, char **summary);

/**
 * # Safety
 * `s` must be null or a string returned by this library not yet freed.
 */
void nlcf_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NLCF_H */
