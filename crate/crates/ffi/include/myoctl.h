/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef MYOCTL_H
#define MYOCTL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  MYO_STATUS_OK = 0,
  MYO_STATUS_NULL_POINTER = 1,
  MYO_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed input: bad JSON, TOML or CSV.
   */
  MYO_STATUS_PARSE = 3,
  /**
   * A parameter is out of range; the message names the field.
   */
  MYO_STATUS_VALIDATION = 4,
  /**
   * Command not allowed in the current phase.
   */
  MYO_STATUS_STATE = 5,
  MYO_STATUS_CALIBRATION = 6,
  MYO_STATUS_IO = 7,
  /**
   * The source is exhausted; no more ticks can run.
   */
  MYO_STATUS_FINISHED = 8,
  /**
   * Output buffer too small; the required size was reported.
   */
  MYO_STATUS_BUFFER_TOO_SMALL = 9,
  MYO_STATUS_PANIC = 10,
} MyoStatus;

typedef enum {
  MYO_PHASE_IDLE = 0,
  MYO_PHASE_CALIBRATING_REST = 1,
  MYO_PHASE_CALIBRATING_MVC = 2,
  MYO_PHASE_READY = 3,
  MYO_PHASE_RUNNING = 4,
  MYO_PHASE_FINISHED = 5,
} MyoPhase;

typedef enum {
  MYO_STRATEGY_ON_OFF = 0,
  MYO_STRATEGY_PROPORTIONAL = 1,
} MyoStrategy;

/**
 * Opaque engine handle.
 */
typedef struct MyoEngine MyoEngine;

/**
 * One recorded tick.
 */
typedef struct {
  uint64_t t_ms;
  double volts;
  uint16_t raw;
  double emg_percent;
  double x_percent;
  double reference;
  double position;
} MyoFrame;

typedef struct {
  MyoStrategy strategy;
  double th;
  double th1;
  double th2;
  double delta;
  double hysteresis_gap;
  bool literal_eq2;
} MyoControlConfig;

typedef struct {
  uint64_t reference_transition_count;
  double aperture_ripple_rms;
  uint64_t time_open_ms;
  uint64_t hold_failures;
  double mean_emg_during_hold;
} MyoMetrics;

typedef struct {
  double r;
  double last_x;
} MyoDeadbandState;

typedef struct {
  double position;
  double velocity;
  double reference;
} MyoHandState;

/**
 * Plant parameters. A `close_max_rate` of 0 or less means "same as
 * `max_rate`".
 */
typedef struct {
  double max_rate;
  double close_max_rate;
  double time_constant;
} MyoPlantParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *myo_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *myo_version(void);

/**
 * Creates a simulated-patient engine from a TOML config file. Relative
 * paths inside resolve against the file's directory.
 */
MyoStatus myo_engine_new_sim(const char *config_path, MyoEngine **out);

/**
 * As [`myo_engine_new_sim`] but from TOML text.
 */
MyoStatus myo_engine_new_sim_toml(const char *config_toml, MyoEngine **out);

/**
 * Creates an engine that re-runs a recorded session: parameters come from
 * the record header and its commands are rescheduled at their recorded
 * times.
 */
MyoStatus myo_engine_new_replay(const char *record_path, MyoEngine **out);

/**
 * Releases an engine. NULL is ignored.
 */
void myo_engine_free(MyoEngine *engine);

/**
 * Streams the record to `path` from now on (events logged so far are
 * written first).
 */
MyoStatus myo_engine_record_to(MyoEngine *engine, const char *path);

/**
 * Runs up to `n` ticks. `ticks_run` (may be NULL) receives the number
 * actually run. Returns `Finished` once the source is exhausted.
 */
MyoStatus myo_engine_step(MyoEngine *engine, uint64_t n, uint64_t *ticks_run);

/**
 * Applies a wire-format command (JSON object with a `type` field).
 *
 * The JSON reply (`ack` or `error`) is written NUL-terminated into `reply`
 * when `reply_len` allows; `reply_needed` (may be NULL) receives the
 * size including the NUL. A refused command returns its error status with
 * the reply still written.
 */
MyoStatus myo_engine_command(MyoEngine *engine,
                             const char *json,
                             char *reply,
                             size_t reply_len,
                             size_t *reply_needed);

/**
 * Most recent tick. Returns `State` before the first tick.
 */
MyoStatus myo_engine_last_frame(MyoEngine *engine, MyoFrame *out);

MyoStatus myo_engine_phase(MyoEngine *engine, MyoPhase *out);

MyoStatus myo_engine_config(MyoEngine *engine, MyoControlConfig *out);

/**
 * Writes the in-memory session record as CSV.
 */
MyoStatus myo_engine_export_csv(MyoEngine *engine, const char *path);

/**
 * Checks a control configuration; on failure the message names the field.
 */
MyoStatus myo_config_validate(const MyoControlConfig *config);

/**
 * Default control configuration.
 */
MyoControlConfig myo_config_default(void);

/**
 * Stability metrics of a recorded session. `holds_toml` may be NULL (no
 * holds) or TOML text with `[[hold]]` or `[[segment]]` tables.
 */
MyoStatus myo_analyze_csv(const char *record_path,
                          const char *holds_toml,
                          double hold_failure_fraction,
                          MyoMetrics *out);

/**
 * 12-bit ADC count for a voltage in [0, 5].
 */
uint16_t myo_quantize(double volts);

/**
 * Percent of the rest..MVC range for an ADC count.
 */
MyoStatus myo_normalize(uint16_t raw, uint16_t rest_raw, uint16_t mvc_raw, double *out);

/**
 * On-off reference: 1 when `emg > th`, else 0.
 */
double myo_onoff(double emg, double th);

/**
 * On-off with a hysteresis band of width `gap` centred on `th`.
 */
double myo_onoff_hysteresis(double emg, double th, double gap, double prev);

/**
 * Driven point in percent for the proportional strategy.
 */
double myo_proportional_map(double emg, double th1, double th2, bool literal);

MyoDeadbandState myo_deadband_step(MyoDeadbandState state, double x, double delta);

/**
 * Follower output in percent mapped onto the [0, 1] aperture reference.
 */
double myo_rescale(double r, double delta);

/**
 * Advances the hand model by `dt_ms` toward `reference`.
 */
MyoStatus myo_plant_step(MyoHandState state,
                         double reference,
                         double dt_ms,
                         const MyoPlantParams *params,
                         MyoHandState *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MYOCTL_H */
