#ifndef S2ATTN_H
#define S2ATTN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call; zero is success.
typedef enum S2Status {
  S2_STATUS_OK = 0,
  S2_STATUS_NULL_POINTER = 1,
  S2_STATUS_INVALID_ARGUMENT = 2,
  S2_STATUS_SHAPE_MISMATCH = 3,
  S2_STATUS_GRID_MISMATCH = 4,
  S2_STATUS_INVALID_CUTOFF = 5,
  S2_STATUS_MALFORMED = 6,
  S2_STATUS_IO = 7,
  S2_STATUS_NUMERICAL = 8,
  S2_STATUS_PANIC = 99,
} S2Status;

// Quadrature family of a grid.
typedef enum S2GridFamily {
  S2_GRID_FAMILY_EQUIANGULAR = 0,
  S2_GRID_FAMILY_GAUSSIAN = 1,
} S2GridFamily;

// Opaque grid handle.
typedef struct S2Grid S2Grid;

// Opaque neighborhood map handle.
typedef struct S2Map S2Map;

// Shape of an attention call: q and k carry `heads * head_dim` channels,
// v and the output `heads * value_dim`.
typedef struct S2AttentionDims {
  size_t batch;
  size_t heads;
  size_t head_dim;
  size_t value_dim;
} S2AttentionDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL, or
// 0 if no error has occurred.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t s2_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *s2_version(void);

// Builds a grid; `family` is an [`S2GridFamily`] value. On success `*out`
// owns a handle to release with [`s2_grid_free`].
//
// # Safety
// `out` must be a valid pointer.
enum S2Status s2_grid_new(uint32_t family, size_t nlat, size_t nlon, struct S2Grid **out);

// Releases a grid. Null is ignored.
//
// # Safety
// `grid` must come from [`s2_grid_new`] and not be used afterwards.
void s2_grid_free(struct S2Grid *grid);

// Number of latitude rows, or 0 for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
size_t s2_grid_nlat(const struct S2Grid *grid);

// Number of longitude columns, or 0 for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
size_t s2_grid_nlon(const struct S2Grid *grid);

// Writes the `nlat * nlon` per-point quadrature weights.
//
// # Safety
// `grid` must be a live handle; `out` must hold `len` doubles.
enum S2Status s2_grid_point_weights(const struct S2Grid *grid, double *out, size_t len);

// Builds the geodesic-disk neighborhood map for `theta_cutoff` radians.
//
// # Safety
// `grid` must be a live handle; `out` must be a valid pointer.
enum S2Status s2_map_new(const struct S2Grid *grid, double theta_cutoff, struct S2Map **out);

// Loads a map saved by [`s2_map_save`] or the `s2attn nbr` command.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum S2Status s2_map_load(const char *path, struct S2Map **out);

// Saves a map in the binary neighborhood format.
//
// # Safety
// `map` must be a live handle; `path` a NUL-terminated string.
enum S2Status s2_map_save(const struct S2Map *map, const char *path);

// Releases a map. Null is ignored.
//
// # Safety
// `map` must come from this library and not be used afterwards.
void s2_map_free(struct S2Map *map);

// Total number of (query, key) pairs, or 0 for a null handle.
//
// # Safety
// `map` must be null or a live handle.
size_t s2_map_num_edges(const struct S2Map *map);

// Cutoff angle in radians, or NaN for a null handle.
//
// # Safety
// `map` must be null or a live handle.
double s2_map_theta_cutoff(const struct S2Map *map);

// Global spherical attention. `out` receives `batch * heads * value_dim`
// planes.
//
// # Safety
// Buffers must hold the number of doubles implied by `dims` and the grid.
enum S2Status s2_attention_global(const struct S2Grid *grid,
                                  struct S2AttentionDims dims,
                                  const double *q,
                                  const double *k,
                                  const double *v,
                                  double *out);

// Neighborhood attention restricted to the map's geodesic disks.
//
// # Safety
// As [`s2_attention_global`]; `map` must be a live handle built for `grid`.
enum S2Status s2_attention_local(const struct S2Grid *grid,
                                 const struct S2Map *map,
                                 struct S2AttentionDims dims,
                                 const double *q,
                                 const double *k,
                                 const double *v,
                                 double *out);

// Gradients of neighborhood attention given the output gradient `dy`
// (shaped like the output). `dq`/`dk` are shaped like q/k, `dv` like v.
//
// # Safety
// As [`s2_attention_local`]; all gradient buffers must be sized accordingly.
enum S2Status s2_attention_local_backward(const struct S2Grid *grid,
                                          const struct S2Map *map,
                                          struct S2AttentionDims dims,
                                          const double *q,
                                          const double *k,
                                          const double *v,
                                          const double *dy,
                                          double *dq,
                                          double *dk,
                                          double *dv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* S2ATTN_H */
