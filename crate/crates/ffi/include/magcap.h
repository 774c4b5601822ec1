#ifndef MAGCAP_H
#define MAGCAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MagcapStatus {
  MAGCAP_STATUS_OK = 0,
  MAGCAP_STATUS_NULL_POINTER = 1,
  MAGCAP_STATUS_INVALID_ARGUMENT = 2,
  // Field point too close to a dipole.
  MAGCAP_STATUS_SINGULARITY = 3,
  // A direction, plane or field configuration is degenerate.
  MAGCAP_STATUS_DEGENERATE = 4,
  MAGCAP_STATUS_IO = 5,
  MAGCAP_STATUS_PARSE = 6,
  MAGCAP_STATUS_INDEX_OUT_OF_RANGE = 7,
  // A Rust panic was caught at the boundary.
  MAGCAP_STATUS_PANIC = 8,
} MagcapStatus;

typedef enum MagcapMode {
  MAGCAP_MODE_DMA = 0,
  MAGCAP_MODE_CRMA = 1,
  MAGCAP_MODE_RRMA = 2,
} MagcapMode;

typedef enum MagcapFailure {
  MAGCAP_FAILURE_NONE = 0,
  MAGCAP_FAILURE_STALL = 1,
  MAGCAP_FAILURE_VOLVULUS = 2,
  MAGCAP_FAILURE_TIMEOUT = 3,
} MagcapFailure;

// Tube the capsule is propelled through.
typedef struct MagcapEnvironment MagcapEnvironment;

// Sampled force profile over one actuator revolution.
typedef struct MagcapForceProfile MagcapForceProfile;

// Result of one closed-loop propulsion run.
typedef struct MagcapRun MagcapRun;

// Sensor grid used for simulation and localization.
typedef struct MagcapSensorArray MagcapSensorArray;

// Actuator placement relative to the capsule. Angles in radians.
typedef struct MagcapGeometry {
  double d;
  double alpha;
  double beta;
  double omega_dc[3];
} MagcapGeometry;

typedef struct MagcapForceSample {
  double theta_ax;
  double force[3];
  double f_p;
  double f_l;
  double f_r;
} MagcapForceSample;

typedef struct MagcapPose {
  double position[3];
  double moment_direction[3];
  double residual_rms;
  uint32_t iterations;
  bool converged;
} MagcapPose;

typedef struct MagcapRunSummary {
  bool success;
  enum MagcapFailure failure;
  double avg_speed;
  double time_elapsed;
  double distance;
  double final_twist;
  double max_abs_twist;
} MagcapRunSummary;

typedef struct MagcapTraceRow {
  double t;
  double arc_length;
  double twist;
  double theta_ax_deg;
  double f_p;
  double f_l;
  double f_r;
} MagcapTraceRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *magcap_version(void);

// Message for the last failed call on this thread, or NULL after a
// successful call. Valid until the next call into the library.
const char *magcap_last_error(void);

// Dipole moments (A·m²) of the default actuator and capsule magnets.
//
// # Safety
// Both pointers must be valid for writes.
enum MagcapStatus magcap_default_moments(double *actuator, double *capsule);

// Flux density (T) at offset `r` from a dipole.
//
// # Safety
// `r`, `direction` and `out` must point to three doubles.
enum MagcapStatus magcap_dipole_field(const double *r,
                                      double moment,
                                      const double *direction,
                                      double *out);

// Force (N) on the capsule dipole at offset `r` from the actuator dipole.
//
// # Safety
// All pointers must point to three doubles.
enum MagcapStatus magcap_dipole_force(const double *r,
                                      double actuator_moment,
                                      const double *actuator_dir,
                                      double capsule_moment,
                                      const double *capsule_dir,
                                      double *out);

// # Safety
// `out` must be valid for writes.
enum MagcapStatus magcap_geometry_default(struct MagcapGeometry *out);

// Actuator position for a capsule at `capsule_position`.
//
// # Safety
// `geometry` must be valid; `capsule_position` and `out` point to three doubles.
enum MagcapStatus magcap_actuator_position(const double *capsule_position,
                                           const struct MagcapGeometry *geometry,
                                           double *out);

// Samples the force over one actuator revolution with the capsule axis
// along the desired heading.
//
// # Safety
// `geometry` must be valid and `out` valid for writes.
enum MagcapStatus magcap_force_profile_new(const struct MagcapGeometry *geometry,
                                           double actuator_moment,
                                           double capsule_moment,
                                           size_t samples,
                                           struct MagcapForceProfile **out);

// Number of samples, or 0 for NULL.
//
// # Safety
// `profile` must be NULL or a live handle.
size_t magcap_force_profile_len(const struct MagcapForceProfile *profile);

// # Safety
// `profile` must be a live handle and `out` valid for writes.
enum MagcapStatus magcap_force_profile_get(const struct MagcapForceProfile *profile,
                                           size_t index,
                                           struct MagcapForceSample *out);

// # Safety
// `profile` must be NULL or a handle not yet freed.
void magcap_force_profile_free(struct MagcapForceProfile *profile);

// Net wall friction per cycle (N) for a rotating mode. Zero means no
// accumulated twist.
//
// # Safety
// `geometry` must be valid and `out` valid for writes.
enum MagcapStatus magcap_net_twist(const struct MagcapGeometry *geometry,
                                   double actuator_moment,
                                   double capsule_moment,
                                   enum MagcapMode mode,
                                   double theta_ar,
                                   double mu_wall,
                                   size_t samples,
                                   double *out);

// Mean wall normal force (N) over a reciprocation half sweep.
//
// # Safety
// `geometry` must be valid and `out` valid for writes.
enum MagcapStatus magcap_mean_normal_force(const struct MagcapGeometry *geometry,
                                           double actuator_moment,
                                           double capsule_moment,
                                           double theta_ar,
                                           double *out);

// The 8×10 sensor grid with per-axis noise `noise_sigma` (T).
//
// # Safety
// `out` must be valid for writes.
enum MagcapStatus magcap_sensor_array_new(double noise_sigma, struct MagcapSensorArray **out);

// # Safety
// `array` must be NULL or a live handle.
size_t magcap_sensor_array_len(const struct MagcapSensorArray *array);

// # Safety
// `array` must be a live handle and `out` point to three doubles.
enum MagcapStatus magcap_sensor_array_position(const struct MagcapSensorArray *array,
                                               size_t index,
                                               double *out);

// # Safety
// `array` must be NULL or a handle not yet freed.
void magcap_sensor_array_free(struct MagcapSensorArray *array);

// Noisy readings of a capsule dipole, written sensor by sensor as
// `bx, by, bz` into `out`, which holds `3 * len` doubles.
//
// # Safety
// `array` must be live, the vectors point to three doubles and `out` to
// `out_len` doubles.
enum MagcapStatus magcap_simulate_reading(const struct MagcapSensorArray *array,
                                          const double *capsule_position,
                                          double moment,
                                          const double *direction,
                                          uint64_t seed,
                                          double *out,
                                          size_t out_len);

// Fits a capsule pose of known moment magnitude to `3 * len` readings.
//
// # Safety
// `array` must be live, `values` hold `values_len` doubles, the guesses
// point to three doubles and `out` be valid for writes.
enum MagcapStatus magcap_localize(const struct MagcapSensorArray *array,
                                  const double *values,
                                  size_t values_len,
                                  double moment,
                                  const double *guess_position,
                                  const double *guess_direction,
                                  struct MagcapPose *out);

// The built-in straight tube.
//
// # Safety
// `out` must be valid for writes.
enum MagcapStatus magcap_environment_default(struct MagcapEnvironment **out);

// Loads a tube description from a TOML file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for writes.
enum MagcapStatus magcap_environment_load(const char *path, struct MagcapEnvironment **out);

// Centerline length (m), or 0 for NULL.
//
// # Safety
// `env` must be NULL or a live handle.
double magcap_environment_length(const struct MagcapEnvironment *env);

// # Safety
// `env` must be NULL or a handle not yet freed.
void magcap_environment_free(struct MagcapEnvironment *env);

// Runs closed-loop propulsion with default settings. With `localizer`
// false the controller uses the true capsule pose.
//
// # Safety
// `env` must be live and `out` valid for writes.
enum MagcapStatus magcap_run_new(const struct MagcapEnvironment *env,
                                 enum MagcapMode mode,
                                 double theta_ar,
                                 uint64_t seed,
                                 bool localizer,
                                 struct MagcapRun **out);

// # Safety
// `run` must be live and `out` valid for writes.
enum MagcapStatus magcap_run_summary(const struct MagcapRun *run, struct MagcapRunSummary *out);

// Number of recorded trace rows, or 0 for NULL.
//
// # Safety
// `run` must be NULL or a live handle.
size_t magcap_run_trace_len(const struct MagcapRun *run);

// # Safety
// `run` must be live and `out` valid for writes.
enum MagcapStatus magcap_run_trace_get(const struct MagcapRun *run,
                                       size_t index,
                                       struct MagcapTraceRow *out);

// # Safety
// `run` must be NULL or a handle not yet freed.
void magcap_run_free(struct MagcapRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAGCAP_H */
