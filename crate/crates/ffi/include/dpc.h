#ifndef DPC_H
#define DPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum DpcStatus {
  DPC_STATUS_OK = 0,
  DPC_STATUS_NULL_POINTER = 1,
  DPC_STATUS_INVALID_ARGUMENT = 2,
  DPC_STATUS_IO = 3,
  DPC_STATUS_CONFIG = 4,
  DPC_STATUS_WEIGHTS = 5,
  DPC_STATUS_SHAPE = 6,
  DPC_STATUS_BUFFER_TOO_SMALL = 7,
  DPC_STATUS_SIGNAL = 8,
  DPC_STATUS_PANIC = 9,
} DpcStatus;

/**
 * Shared, immutable inference engine.
 */
typedef struct DpcEngine DpcEngine;

/**
 * Per-stream state bound to one engine.
 */
typedef struct DpcStream DpcStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *dpc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dpc_version(void);

/**
 * Creates an engine from a JSON run configuration (null selects the
 * defaults) and a weight container file.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum DpcStatus dpc_engine_new(const char *config_json,
                              const char *weights_path,
                              struct DpcEngine **out);

/**
 * Creates an engine from a named preset such as `dualpath-2x4`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum DpcStatus dpc_engine_new_preset(const char *preset,
                                     const char *weights_path,
                                     struct DpcEngine **out);

/**
 * Releases an engine. Streams created from it stay valid.
 *
 * # Safety
 * `engine` must come from `dpc_engine_new*` and not be freed twice.
 */
void dpc_engine_free(struct DpcEngine *engine);

/**
 * Samples per STFT hop, the natural streaming chunk.
 *
 * # Safety
 * `engine` must be a live handle or null (returns 0).
 */
size_t dpc_engine_hop(const struct DpcEngine *engine);

/**
 * Whole-signal enhancement; writes `len` samples to `out`.
 *
 * # Safety
 * `mic`, `reference` and `out` must each hold `len` floats.
 */
enum DpcStatus dpc_engine_enhance(const struct DpcEngine *engine,
                                  const float *mic,
                                  const float *reference,
                                  size_t len,
                                  float *out);

/**
 * Opens a stream on `engine`.
 *
 * # Safety
 * `engine` must be live; `out` must be writable.
 */
enum DpcStatus dpc_stream_new(const struct DpcEngine *engine, struct DpcStream **out);

/**
 * Output capacity that always suffices for a `len`-sample push or for
 * the flush.
 *
 * # Safety
 * `stream` must be a live handle or null (returns 0).
 */
size_t dpc_stream_output_bound(const struct DpcStream *stream, size_t len);

/**
 * Feeds `len` samples of each signal; writes every finished output sample
 * to `out` and its count to `out_len`. Fails without consuming input if
 * `out_cap` is below [`dpc_stream_output_bound`].
 *
 * # Safety
 * `mic`/`reference` hold `len` floats, `out` holds `out_cap` floats.
 */
enum DpcStatus dpc_stream_process(struct DpcStream *stream,
                                  const float *mic,
                                  const float *reference,
                                  size_t len,
                                  float *out,
                                  size_t out_cap,
                                  size_t *out_len);

/**
 * Drains the stream so that total output equals total input, then
 * resets it for reuse.
 *
 * # Safety
 * `out` holds `out_cap` floats; `out_len` is writable.
 */
enum DpcStatus dpc_stream_flush(struct DpcStream *stream,
                                float *out,
                                size_t out_cap,
                                size_t *out_len);

/**
 * Discards all buffered audio and recurrent state.
 *
 * # Safety
 * `stream` must be live.
 */
enum DpcStatus dpc_stream_reset(struct DpcStream *stream);

/**
 * # Safety
 * `stream` must come from [`dpc_stream_new`] and not be freed twice.
 */
void dpc_stream_free(struct DpcStream *stream);

/**
 * Complexity report of a configuration as a JSON string; release it with
 * [`dpc_string_free`]. Null `config_json` selects the defaults.
 *
 * # Safety
 * `config_json` is NUL-terminated or null; `out` is writable.
 */
enum DpcStatus dpc_profile_json(const char *config_json, char **out);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void dpc_string_free(char *s);

/**
 * Scale-invariant SNR of `est` against `reference` in dB.
 *
 * # Safety
 * Both arrays hold `len` floats; `out` is writable.
 */
enum DpcStatus dpc_si_snr(const float *est, const float *reference, size_t len, double *out);

/**
 * Echo return loss enhancement of `output` relative to `mic` in dB.
 *
 * # Safety
 * Both arrays hold `len` floats; `out` is writable.
 */
enum DpcStatus dpc_erle(const float *mic, const float *output, size_t len, double *out);

/**
 * STOI of 16 kHz `est` against `reference`.
 *
 * # Safety
 * Both arrays hold `len` floats; `out` is writable.
 */
enum DpcStatus dpc_stoi(const float *est, const float *reference, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPC_H */
