#ifndef SYNERGRIP_H
#define SYNERGRIP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_POINTER = 1,
  SG_STATUS_INVALID_ARGUMENT = 2,
  SG_STATUS_IO = 3,
  SG_STATUS_PARSE = 4,
  SG_STATUS_INVALID_MODEL = 5,
  SG_STATUS_REJECTED_SAMPLE = 6,
  SG_STATUS_PANIC = 7,
} SgStatus;

typedef enum SgGraspType {
  SG_GRASP_TYPE_TRIPOD = 0,
  SG_GRASP_TYPE_PINCH = 1,
  SG_GRASP_TYPE_LATERAL_TRIPOD = 2,
} SgGraspType;

typedef enum SgPhase {
  SG_PHASE_GRASP = 0,
  SG_PHASE_RELEASE = 1,
} SgPhase;

// Opaque controller handle.
typedef struct SgController SgController;

// Rigid transform: row-major rotation matrix and translation in metres.
typedef struct SgPose {
  double rotation[9];
  double translation[3];
} SgPose;

// One fingertip sample in the fingertip frame, mN. +z points out of the pad.
typedef struct SgForce {
  size_t fingertip_id;
  double fx;
  double fy;
  double fz;
} SgForce;

// Result of one tick. Joint angles are read with `sg_controller_joints`.
typedef struct SgCommand {
  double t;
  double grasp_size_m;
  enum SgPhase phase;
  bool released;
  double t_min_mn;
  double t_max_mn;
} SgCommand;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sg_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *sg_last_error(void);

// Controller on the bundled hand with default parameters.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum SgStatus sg_controller_new_default(enum SgGraspType grasp_type, struct SgController **out);

// Controller from files. `decoder_path` and `params_path` may be NULL for
// the bundled synergy and default parameters. `params_path` is a JSON object
// with controller parameter fields.
//
// # Safety
// Non-NULL strings must be NUL-terminated; `out` must be writable.
enum SgStatus sg_controller_new_from_files(const char *hand_path,
                                           const char *decoder_path,
                                           const char *params_path,
                                           enum SgGraspType grasp_type,
                                           struct SgController **out);

// Free a handle. NULL is ignored.
//
// # Safety
// `ctrl` must come from a constructor above and not be used afterwards.
void sg_controller_free(struct SgController *ctrl);

// Number of fingertips the controller expects per tick.
//
// # Safety
// `ctrl` must be a live handle or NULL (returns 0).
size_t sg_controller_finger_count(const struct SgController *ctrl);

// Number of joint angles in a command.
//
// # Safety
// `ctrl` must be a live handle or NULL (returns 0).
size_t sg_controller_joint_count(const struct SgController *ctrl);

// Run one control period. `forces` holds one sample per fingertip, ordered
// by fingertip id, all taken at time `t`. On `SG_STATUS_REJECTED_SAMPLE` the
// controller keeps its previous command and `out` still describes it.
//
// # Safety
// Pointers must be valid; `forces` must point to `n_forces` elements.
enum SgStatus sg_controller_tick(struct SgController *ctrl,
                                 double t,
                                 const struct SgPose *hand_pose,
                                 const struct SgForce *forces,
                                 size_t n_forces,
                                 struct SgCommand *out);

// Copy the current joint command into `out` (`len` must be at least the joint count).
//
// # Safety
// `out` must point to `len` writable doubles.
enum SgStatus sg_controller_joints(const struct SgController *ctrl, double *out, size_t len);

// Re-arm for a new grasp: open hand, GRASP phase, empty filters.
//
// # Safety
// `ctrl` must be a live handle.
enum SgStatus sg_controller_reset(struct SgController *ctrl);

// Split a fingertip-frame force into normal and tangential magnitudes (mN).
//
// # Safety
// `normal` and `tangential` must be writable.
enum SgStatus sg_decompose(double fx, double fy, double fz, double *normal, double *tangential);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYNERGRIP_H */
