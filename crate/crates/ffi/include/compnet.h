#ifndef COMPNET_H
#define COMPNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum {
  CN_STATUS_OK = 0,
  CN_STATUS_NULL_POINTER = 1,
  CN_STATUS_INVALID_UTF8 = 2,
  CN_STATUS_INVALID_INPUT = 3,
  CN_STATUS_DIMENSION_MISMATCH = 4,
  CN_STATUS_SINGULAR_GRAM = 5,
  CN_STATUS_NON_FINITE = 6,
  CN_STATUS_INVALID_NETWORK = 7,
  CN_STATUS_UNRESOLVED_COMPONENT = 8,
  CN_STATUS_UNSUPPORTED_ACTIVATION = 9,
  CN_STATUS_PARSE = 10,
  CN_STATUS_BUFFER_TOO_SMALL = 11,
  CN_STATUS_PANIC = 12,
  CN_STATUS_OTHER = 13,
} CnStatus;

/**
 * Composite network handle.
 */
typedef struct CnNetwork CnNetwork;

/**
 * Component registry handle.
 */
typedef struct CnRegistry CnRegistry;

/**
 * Scaled-activation wrapper handle.
 */
typedef struct CnWrapper CnWrapper;

/**
 * Outcome of the assumption checks on a set of component outputs.
 */
typedef struct {
  /**
   * `[1, f_1, .., f_K]` has full column rank (relative singular value test).
   */
  bool independent;
  /**
   * No component reproduces the labels exactly.
   */
  bool no_perfect_component;
  /**
   * `K < 2 sqrt(N) - 1`; a warning only.
   */
  bool within_budget;
  double min_singular_value;
  double max_singular_value;
  /**
   * Smallest L1 error of any component, or NaN when `K = 0`.
   */
  double min_l1_error;
  double budget_bound;
} CnAssumptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cn_version(void);

/**
 * Message of the last failure on this thread. Valid until the next failing
 * call on the same thread; empty if nothing failed yet.
 */
const char *cn_last_error_message(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void cn_string_free(char *s);

/**
 * Parses a registry from `{"components": [...]}` or a bare component array.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
CnStatus cn_registry_from_json(const char *json, CnRegistry **out);

/**
 * # Safety
 * `registry` must come from [`cn_registry_from_json`] and not have been freed.
 */
void cn_registry_free(CnRegistry *registry);

/**
 * Number of components in the registry.
 *
 * # Safety
 * `registry` must be a live handle and `out` a valid pointer.
 */
CnStatus cn_registry_len(const CnRegistry *registry, size_t *out);

/**
 * Parses a composite network from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
CnStatus cn_network_from_json(const char *json, CnNetwork **out);

/**
 * # Safety
 * `network` must come from [`cn_network_from_json`] and not have been freed.
 */
void cn_network_free(CnNetwork *network);

/**
 * Evaluates `network` on `rows x cols` inputs. On success `*out_len` holds
 * the number of values written (`rows x output_dim`). If `capacity` is too
 * small nothing is written, `*out_len` holds the required size and
 * `BufferTooSmall` is returned.
 *
 * # Safety
 * Handles must be live; `inputs` must hold `rows * cols` values and `out`
 * `capacity` values.
 */
CnStatus cn_evaluate(const CnNetwork *network,
                     const CnRegistry *registry,
                     const double *inputs,
                     size_t rows,
                     size_t cols,
                     double *out,
                     size_t capacity,
                     size_t *out_len);

/**
 * Optimal combination weights `[θ0, θ1, .., θK]` (bias first) for `k`
 * component outputs of length `n`.
 *
 * # Safety
 * `outputs` must hold `k * n` values, `labels` `n` and `theta` `k + 1`.
 */
CnStatus cn_solve_theta_star(const double *outputs,
                             size_t k,
                             size_t n,
                             const double *labels,
                             double ridge,
                             double *theta);

/**
 * Evaluates the linear-independence, no-perfect-component and budget checks.
 *
 * # Safety
 * `outputs` must hold `k * n` values, `labels` `n`; `out` must be valid.
 */
CnStatus cn_check_assumptions(const double *outputs,
                              size_t k,
                              size_t n,
                              const double *labels,
                              CnAssumptions *out);

/**
 * Builds the affine sandwich that lets `activation` (`"logistic"`, `"tanh"`,
 * `"sl"`, `"linear"`) emulate the combiner outputs `g_star` within
 * `epsilon`. A positive `gamma` fixes the neighbourhood half-width; zero or
 * negative selects it automatically.
 *
 * # Safety
 * `g_star` must hold `n` values, `activation` be NUL-terminated and `out` valid.
 */
CnStatus cn_wrapper_construct(const double *g_star,
                              size_t n,
                              const char *activation,
                              double epsilon,
                              double gamma,
                              CnWrapper **out);

/**
 * # Safety
 * `wrapper` must come from [`cn_wrapper_construct`] and not have been freed.
 */
void cn_wrapper_free(CnWrapper *wrapper);

/**
 * Applies the wrapped activation to `n` combiner values.
 *
 * # Safety
 * `values` and `out` must each hold `n` values; they may alias.
 */
CnStatus cn_wrapper_apply(const CnWrapper *wrapper, const double *values, size_t n, double *out);

/**
 * Guaranteed pointwise error bound of the wrapper.
 *
 * # Safety
 * `wrapper` must be live and `out` valid.
 */
CnStatus cn_wrapper_error_bound(const CnWrapper *wrapper, double *out);

/**
 * Wrapper parameters as JSON; release with [`cn_string_free`].
 *
 * # Safety
 * `wrapper` must be live and `out` valid.
 */
CnStatus cn_wrapper_to_json(const CnWrapper *wrapper, char **out);

/**
 * Fills cells whose `known` flag is 0 with the mean of the `k` nearest
 * known cells. `values`, `known` and `out` are `rows x cols` row-major.
 *
 * # Safety
 * All buffers must hold `rows * cols` elements.
 */
CnStatus cn_knn_impute(const double *values,
                       const uint8_t *known,
                       size_t rows,
                       size_t cols,
                       size_t k,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMPNET_H */
