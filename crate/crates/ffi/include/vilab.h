#ifndef VILAB_H
#define VILAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define VILAB_OK 0

#define VILAB_ERR_NULL 1

#define VILAB_ERR_INVALID 2

#define VILAB_ERR_GRID 3

#define VILAB_ERR_INFEASIBLE 4

#define VILAB_ERR_NUMERIC 5

#define VILAB_ERR_PANIC 6

#define VILAB_GRID_INTERVAL 0

#define VILAB_GRID_DISK 1

#define VILAB_GRID_HALF_DISK_THIN 2

#define VILAB_GRID_CIRCLE 3

#define VILAB_ENERGY_OBSTACLE 0

#define VILAB_ENERGY_THIN_OBSTACLE 1

#define VILAB_ENERGY_SPHERE_OBSTACLE 2

#define VILAB_ENERGY_SPHERE_THIN 3

typedef struct VilabField VilabField;

typedef struct VilabGrid VilabGrid;

typedef struct VilabTrajectory VilabTrajectory;

/**
 * Energy selector. `lambda` is read by the sphere obstacle energy, `m` by
 * the sphere thin-obstacle energy (`λ = (2m)²`).
 */
typedef struct VilabEnergy {
  int32_t variant;
  double lambda;
  uint32_t m;
} VilabEnergy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t vilab_last_error(char *buf, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
int32_t vilab_grid_new(int32_t kind, size_t n, struct VilabGrid **out);

/**
 * # Safety
 * `grid` must be null or a handle from [`vilab_grid_new`] not yet freed.
 */
void vilab_grid_free(struct VilabGrid *grid);

/**
 * # Safety
 * `grid` must be a live handle and `out` writable.
 */
int32_t vilab_grid_n_nodes(const struct VilabGrid *grid, size_t *out);

/**
 * Node coordinates as interleaved `x, y` pairs; `len` counts doubles.
 *
 * # Safety
 * `grid` must be a live handle and `out` must hold `len` doubles.
 */
int32_t vilab_grid_coords(const struct VilabGrid *grid, double *out, size_t len);

/**
 * # Safety
 * `grid` must be a live handle, `values` must hold `len` doubles and `out`
 * must be writable.
 */
int32_t vilab_field_new(const struct VilabGrid *grid,
                        const double *values,
                        size_t len,
                        struct VilabField **out);

/**
 * # Safety
 * `field` must be null or a live field handle.
 */
void vilab_field_free(struct VilabField *field);

/**
 * # Safety
 * `field` must be a live handle and `out` writable.
 */
int32_t vilab_field_len(const struct VilabField *field, size_t *out);

/**
 * # Safety
 * `field` must be a live handle and `out` must hold `len` doubles.
 */
int32_t vilab_field_values(const struct VilabField *field, double *out, size_t len);

/**
 * Energy of `u` for the selected functional.
 *
 * # Safety
 * All pointers must be live handles or writable.
 */
int32_t vilab_energy(const struct VilabEnergy *energy,
                     const struct VilabGrid *grid,
                     const struct VilabField *u,
                     double *out);

/**
 * Stationary obstacle (`thin = 0`) or thin-obstacle (`thin ≠ 0`) solution
 * with boundary data `data`.
 *
 * # Safety
 * All pointers must be live handles or writable.
 */
int32_t vilab_solve_stationary(const struct VilabGrid *grid,
                               const struct VilabField *data,
                               int32_t thin,
                               double tol,
                               struct VilabField **out);

/**
 * Implicit-Euler flow from `u0`. Ball energies need boundary data `data`
 * (ignored and may be null on the circle); `u0` is projected onto the
 * admissible set first.
 *
 * # Safety
 * All pointers must be live handles or writable, except `data` as noted.
 */
int32_t vilab_flow_run(const struct VilabEnergy *energy,
                       const struct VilabGrid *grid,
                       const struct VilabField *data,
                       const struct VilabField *u0,
                       double dt,
                       double t_end,
                       struct VilabTrajectory **out);

/**
 * # Safety
 * `traj` must be null or a live trajectory handle.
 */
void vilab_trajectory_free(struct VilabTrajectory *traj);

/**
 * # Safety
 * `traj` must be a live handle and `out` writable.
 */
int32_t vilab_trajectory_len(const struct VilabTrajectory *traj, size_t *out);

/**
 * # Safety
 * `traj` must be a live handle and `out` must hold `len` doubles.
 */
int32_t vilab_trajectory_times(const struct VilabTrajectory *traj, double *out, size_t len);

/**
 * # Safety
 * `traj` must be a live handle and `out` must hold `len` doubles.
 */
int32_t vilab_trajectory_energies(const struct VilabTrajectory *traj, double *out, size_t len);

/**
 * Constrained gradient norms `‖∇F(u_k)‖_K` along the trajectory.
 *
 * # Safety
 * `traj` must be a live handle and `out` must hold `len` doubles.
 */
int32_t vilab_trajectory_k_norms(const struct VilabTrajectory *traj, double *out, size_t len);

/**
 * Copies state `index` into a new field handle.
 *
 * # Safety
 * `traj` must be a live handle and `out` writable.
 */
int32_t vilab_trajectory_state(const struct VilabTrajectory *traj,
                               size_t index,
                               struct VilabField **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VILAB_H */
