#ifndef HRTMDG_H
#define HRTMDG_H

/* Generated by cbindgen from the hrtmdg-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a fallible call.
 */
typedef enum HrtmdgStatus {
  HRTMDG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  HRTMDG_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was rejected before any work started (bad degree,
   * non-positive wavenumber, unknown case name, malformed mesh, ...).
   */
  HRTMDG_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The discrete system could not be solved (resonant wavenumber,
   * singular factorization, iteration stall).
   */
  HRTMDG_STATUS_SOLVE_FAILED = 3,
  /**
   * A file could not be read.
   */
  HRTMDG_STATUS_IO_FAILED = 4,
} HrtmdgStatus;

/**
 * Triangulated unit-square domain. Opaque; create with
 * [`hrtmdg_mesh_create_structured`] or [`hrtmdg_mesh_read`], release with
 * [`hrtmdg_mesh_free`].
 */
typedef struct HrtmdgMesh HrtmdgMesh;

/**
 * Discrete fields of one solve together with the diagnostics computed
 * against the manufactured case. Opaque; create with [`hrtmdg_solve`],
 * release with [`hrtmdg_solution_free`].
 */
typedef struct HrtmdgSolution HrtmdgSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hrtmdg_version(void);

/**
 * Message of the most recent failure on the calling thread, or an empty
 * string if nothing has failed yet. The pointer stays valid until the next
 * failing call on the same thread.
 */
const char *hrtmdg_last_error(void);

/**
 * Builds the structured criss-cross triangulation of the unit square with
 * `n` subdivisions per side (2 n^2 triangles).
 *
 * # Safety
 * `out` must be a valid pointer to a mesh-handle slot.
 */
enum HrtmdgStatus hrtmdg_mesh_create_structured(uint32_t n, struct HrtmdgMesh **out);

/**
 * Reads a mesh from the plain-text vertex/cell format.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer to
 * a mesh-handle slot.
 */
enum HrtmdgStatus hrtmdg_mesh_read(const char *path, struct HrtmdgMesh **out);

/**
 * Releases a mesh handle. Passing null is a no-op.
 *
 * # Safety
 * `mesh` must be null or a pointer previously returned by a mesh
 * constructor that has not already been freed.
 */
void hrtmdg_mesh_free(struct HrtmdgMesh *mesh);

/**
 * Number of triangles, or 0 for a null handle.
 *
 * # Safety
 * `mesh` must be null or a live mesh handle.
 */
uint64_t hrtmdg_mesh_cells(const struct HrtmdgMesh *mesh);

/**
 * Number of interior edges (the edges that carry multiplier unknowns), or 0
 * for a null handle.
 *
 * # Safety
 * `mesh` must be null or a live mesh handle.
 */
uint64_t hrtmdg_mesh_interior_edges(const struct HrtmdgMesh *mesh);

/**
 * Longest edge length, or 0 for a null handle.
 *
 * # Safety
 * `mesh` must be null or a live mesh handle.
 */
double hrtmdg_mesh_size(const struct HrtmdgMesh *mesh);

/**
 * Maps reference coordinates of one triangle to physical coordinates.
 *
 * # Safety
 * `mesh` must be a live mesh handle; `x` and `y` must be valid pointers.
 */
enum HrtmdgStatus hrtmdg_mesh_map_point(const struct HrtmdgMesh *mesh,
                                        uint64_t cell,
                                        double xhat,
                                        double yhat,
                                        double *x,
                                        double *y);

/**
 * Solves one manufactured case on the given mesh.
 *
 * `k` is the polynomial degree (0 to 3), `kappa` the positive wavenumber,
 * and `case_name` one of the manufactured cases (`plane_wave`,
 * `plane_wave:<angle>`, `sine_product`, `polynomial:<degree>`). The handle
 * written to `out` carries the discrete fields and the error and
 * conservation diagnostics of the solve.
 *
 * # Safety
 * `mesh` must be a live mesh handle, `case_name` a NUL-terminated UTF-8
 * string, and `out` a valid pointer to a solution-handle slot.
 */
enum HrtmdgStatus hrtmdg_solve(const struct HrtmdgMesh *mesh,
                               uint32_t k,
                               double kappa,
                               const char *case_name,
                               struct HrtmdgSolution **out);

/**
 * Releases a solution handle. Passing null is a no-op.
 *
 * # Safety
 * `sol` must be null or a pointer previously returned by [`hrtmdg_solve`]
 * that has not already been freed.
 */
void hrtmdg_solution_free(struct HrtmdgSolution *sol);

/**
 * Broken L2 errors of the scalar and flux fields against the exact
 * manufactured solution.
 *
 * # Safety
 * `sol` must be a live solution handle; `err_u` and `err_sigma` must be
 * valid pointers.
 */
enum HrtmdgStatus hrtmdg_solution_errors(const struct HrtmdgSolution *sol,
                                         double *err_u,
                                         double *err_sigma);

/**
 * Largest per-element mass-balance residual and largest interface
 * normal-flux jump moment; both vanish to roundoff on a healthy solve.
 *
 * # Safety
 * `sol` must be a live solution handle; `conservation_max` and
 * `flux_jump_max` must be valid pointers.
 */
enum HrtmdgStatus hrtmdg_solution_diagnostics(const struct HrtmdgSolution *sol,
                                              double *conservation_max,
                                              double *flux_jump_max);

/**
 * Number of multiplier unknowns of the condensed system, or 0 for a null
 * handle.
 *
 * # Safety
 * `sol` must be null or a live solution handle.
 */
uint64_t hrtmdg_solution_multiplier_dofs(const struct HrtmdgSolution *sol);

/**
 * Evaluates the discrete fields at reference coordinates inside one
 * triangle. Writes six doubles to `values`: Re u, Im u, Re sigma_x,
 * Im sigma_x, Re sigma_y, Im sigma_y.
 *
 * # Safety
 * `sol` must be a live solution handle and `values` must point to at least
 * six writable doubles.
 */
enum HrtmdgStatus hrtmdg_solution_eval(const struct HrtmdgSolution *sol,
                                       uint64_t cell,
                                       double xhat,
                                       double yhat,
                                       double *values);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HRTMDG_H */
