#ifndef NMG_H
#define NMG_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum NmgStatus {
  NMG_STATUS_OK = 0,
  NMG_STATUS_NULL_POINTER = 1,
  NMG_STATUS_INVALID_ARGUMENT = 2,
  NMG_STATUS_SHAPE_MISMATCH = 3,
  NMG_STATUS_IO = 4,
  NMG_STATUS_CHECKPOINT = 5,
  NMG_STATUS_NOT_TRAINABLE = 6,
  NMG_STATUS_DIVERGED = 7,
  NMG_STATUS_NUMERICAL = 8,
  NMG_STATUS_PANIC = 9,
} NmgStatus;

// Opaque network handle.
typedef struct NmgNetwork NmgNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *nmg_version(void);

// Copies the last error message of this thread into `buf` (truncated and
// NUL-terminated) and returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t nmg_last_error_message(char *buf, size_t len);

// Builds an untrained model, e.g. `"lmg"` or `"s3mg_s"`, for a problem such
// as `"p5"` on a grid of side `2^depth - 1`.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum NmgStatus nmg_network_build(const char *model,
                                 const char *problem,
                                 uint32_t depth,
                                 struct NmgNetwork **out);

// Loads a checkpoint and lays the model out for `depth`.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum NmgStatus nmg_network_load(const char *path, uint32_t depth, struct NmgNetwork **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `net` must come from this library and not be used afterwards.
void nmg_network_free(struct NmgNetwork *net);

// Side length of the network's fine grid.
//
// # Safety
// `net` must be a live handle and `side` writable.
enum NmgStatus nmg_network_fine_side(const struct NmgNetwork *net, size_t *side);

// `out = N r`, the approximate inverse applied to a residual.
//
// # Safety
// `r` and `out` must hold `len` doubles.
enum NmgStatus nmg_network_apply_n(const struct NmgNetwork *net,
                                   const double *r,
                                   size_t len,
                                   double *out);

// `out = (I - N A) z`.
//
// # Safety
// `z` and `out` must hold `len` doubles.
enum NmgStatus nmg_network_error_propagation(const struct NmgNetwork *net,
                                             const double *z,
                                             size_t len,
                                             double *out);

// Stochastic spectral radius estimate of `I - N A`. A divergent model
// yields a value `>= 1` or infinity, not an error.
//
// # Safety
// `net` must be a live handle and `rho` writable.
enum NmgStatus nmg_network_rho1(const struct NmgNetwork *net,
                                size_t power_k,
                                size_t n_batch,
                                uint64_t seed,
                                double *rho);

// Trains `model` on `problem` at depth `train_j` with the model's default
// optimizer and writes a checkpoint to `path`. A non-positive
// `learning_rate` selects the default rate. `final_loss` may be null.
//
// # Safety
// String arguments must be NUL-terminated.
enum NmgStatus nmg_train(const char *model,
                         const char *problem,
                         uint32_t train_j,
                         size_t steps,
                         double learning_rate,
                         uint64_t seed,
                         const char *path,
                         double *final_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NMG_H */
