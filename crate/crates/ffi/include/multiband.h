#ifndef MULTIBAND_H
#define MULTIBAND_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MbStatus {
  MB_STATUS_OK = 0,
  MB_STATUS_INVALID = 1,
  MB_STATUS_RANK_DEFICIENT = 2,
  MB_STATUS_OVERFLOW = 3,
  MB_STATUS_OUTSIDE_INTERVAL = 4,
  MB_STATUS_EMPTY_SUPPORT = 5,
  MB_STATUS_NULL_POINTER = 6,
  MB_STATUS_BUFFER_TOO_SMALL = 7,
  MB_STATUS_PANIC = 8,
  MB_STATUS_IO = 9,
} MbStatus;

typedef struct MbReconstructor MbReconstructor;

typedef struct MbScheme MbScheme;

typedef struct MbSupport MbSupport;

typedef struct MbWindow MbWindow;

typedef struct MbWindowParams {
  double bw;
  double period;
  double t1;
  double delta;
  double rho;
  double epsilon;
  double delta_w;
  double c;
} MbWindowParams;

/**
 * Sample instant T·(n + q/Q_k).
 */
typedef struct MbGridKey {
  int64_t n;
  uint32_t k;
  uint32_t q;
} MbGridKey;

typedef struct MbComplex {
  double re;
  double im;
} MbComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *mb_last_error(void);

/**
 * Designs a window. A `delta` ≤ 0 selects the fitted optimum.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MbStatus mb_window_design(double bw,
                               double period,
                               double t1,
                               double delta,
                               struct MbWindow **out);

/**
 * # Safety
 * `w` must be a live window handle; `out` valid for writes.
 */
enum MbStatus mb_window_params(const struct MbWindow *w, struct MbWindowParams *out);

/**
 * w(t); NaN for a null handle.
 *
 * # Safety
 * `w` must be null or a live window handle.
 */
double mb_window_eval(const struct MbWindow *w, double t);

/**
 * # Safety
 * `w` must be a live window handle; `out` valid for writes.
 */
enum MbStatus mb_window_tail_bound(const struct MbWindow *w, double t, double *out);

/**
 * # Safety
 * `w` must be null or a handle from this library, not freed before.
 */
void mb_window_free(struct MbWindow *w);

/**
 * # Safety
 * `moduli` must point to `len` values; `out` valid for writes.
 */
enum MbStatus mb_scheme_new(const uint32_t *moduli,
                            uintptr_t len,
                            double t0,
                            double period,
                            struct MbScheme **out);

/**
 * Number of distinct sample instants per period; 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live scheme handle.
 */
uintptr_t mb_scheme_instant_count(const struct MbScheme *s);

/**
 * Instants as reduced fractions num/den of T, in increasing order.
 *
 * # Safety
 * `num` and `den` must each hold `cap` values.
 */
enum MbStatus mb_scheme_instants(const struct MbScheme *s,
                                 uint64_t *num,
                                 uint64_t *den,
                                 uintptr_t cap);

/**
 * # Safety
 * `s` must be null or a handle from this library, not freed before.
 */
void mb_scheme_free(struct MbScheme *s);

/**
 * Bands given by center and width, all of length `n`.
 *
 * # Safety
 * `fc` and `width` must point to `n` values; `out` valid for writes.
 */
enum MbStatus mb_support_new(const double *fc,
                             const double *width,
                             uintptr_t n,
                             double period,
                             double window_bw,
                             struct MbSupport **out);

/**
 * Size of the union index set I_zw; 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live support handle.
 */
uintptr_t mb_support_union_len(const struct MbSupport *s);

/**
 * First and last index of component m's expanded index set.
 *
 * # Safety
 * `s` must be a live support handle; `lo` and `hi` valid for writes.
 */
enum MbStatus mb_support_range(const struct MbSupport *s, uintptr_t m, int64_t *lo, int64_t *hi);

/**
 * # Safety
 * `s` must be null or a handle from this library, not freed before.
 */
void mb_support_free(struct MbSupport *s);

/**
 * Copies the three inputs; the caller keeps ownership of its handles.
 *
 * # Safety
 * Inputs must be live handles; `out` valid for writes.
 */
enum MbStatus mb_reconstructor_new(const struct MbScheme *scheme,
                                   const struct MbSupport *support,
                                   const struct MbWindow *window,
                                   struct MbReconstructor **out);

/**
 * Samples needed per block; 0 for a null handle.
 *
 * # Safety
 * `r` must be null or a live reconstructor handle.
 */
uintptr_t mb_reconstructor_block_len(const struct MbReconstructor *r);

/**
 * Grid keys and offsets from τ of the samples needed by the block at τ.
 *
 * # Safety
 * `keys` and `offsets` must each hold `cap` elements.
 */
enum MbStatus mb_reconstructor_plan(const struct MbReconstructor *r,
                                    double tau,
                                    struct MbGridKey *keys,
                                    double *offsets,
                                    uintptr_t cap);

/**
 * Reconstructs the block at τ from samples given in plan order and writes
 * the signal (`component` < 0) or one component at `n_out` offsets from τ.
 *
 * # Safety
 * `samples` must hold `n_samples` values; `t` and `out` `n_out` each.
 */
enum MbStatus mb_reconstructor_block(const struct MbReconstructor *r,
                                     double tau,
                                     const struct MbComplex *samples,
                                     uintptr_t n_samples,
                                     const double *t,
                                     uintptr_t n_out,
                                     int64_t component,
                                     struct MbComplex *out);

/**
 * Pointwise error bound at offset t from τ for the signal (`component` < 0)
 * or one component. `a_s` lists one amplitude bound per component.
 *
 * # Safety
 * `a_s` must hold `n_components` values; `out` valid for writes.
 */
enum MbStatus mb_reconstructor_error_bound(const struct MbReconstructor *r,
                                           double a_eta,
                                           const double *a_s,
                                           uintptr_t n_components,
                                           double epsilon,
                                           int64_t component,
                                           double tau,
                                           double t,
                                           double *out);

/**
 * ε certified by the analytic tail bound; NaN for a null handle.
 *
 * # Safety
 * `r` must be null or a live reconstructor handle.
 */
double mb_reconstructor_certified_epsilon(const struct MbReconstructor *r);

/**
 * # Safety
 * `r` must be null or a handle from this library, not freed before.
 */
void mb_reconstructor_free(struct MbReconstructor *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTIBAND_H */
