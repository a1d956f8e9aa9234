#ifndef WAYPART_H
#define WAYPART_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WpStatus {
  WP_STATUS_OK = 0,
  WP_STATUS_NULL_ARGUMENT = 1,
  WP_STATUS_INVALID_UTF8 = 2,
  WP_STATUS_INVALID_ARGUMENT = 3,
  WP_STATUS_IO = 4,
  WP_STATUS_SCHEMA = 5,
  WP_STATUS_CONFIG = 6,
  WP_STATUS_ADMISSION_REJECTED = 7,
  WP_STATUS_NOT_PLACED = 8,
  WP_STATUS_ALREADY_PLACED = 9,
  WP_STATUS_ALLOCATION = 10,
  WP_STATUS_SIMULATION = 11,
  WP_STATUS_PANIC = 12,
} WpStatus;

typedef enum WpReuse {
  WP_REUSE_STREAM = 0,
  WP_REUSE_REUSE = 1,
} WpReuse;

/**
 * Opaque allocator handle.
 */
typedef struct WpAllocator WpAllocator;

/**
 * Probe payload for one phase.
 */
typedef struct WpPhase {
  /**
   * Optional, may be null.
   */
  const char *phase_id;
  uint64_t footprint_bytes;
  enum WpReuse reuse;
  double predicted_ns;
  double alpha;
  uint32_t max_ways;
} WpPhase;

typedef struct WpDecision {
  uint32_t pid;
  uint32_t socket;
  uint32_t clos;
  uint64_t bitmask;
  uint32_t req_ways;
  uint32_t allocated_ways;
  bool satisfied;
  bool changed;
} WpDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *wp_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void wp_string_free(char *s);

/**
 * Creates an allocator. `config_toml` may be null for defaults; otherwise it
 * is a versioned config document.
 *
 * # Safety
 * `config_toml` must be null or NUL-terminated; `out` must be writable.
 */
enum WpStatus wp_allocator_new(const char *config_toml, struct WpAllocator **out);

/**
 * # Safety
 * `a` must be null or a handle from [`wp_allocator_new`], not yet freed.
 */
void wp_allocator_free(struct WpAllocator *a);

/**
 * Initial placement of a process. `out` may be null.
 *
 * # Safety
 * `a` must be a live handle and `phase` must point to a valid [`WpPhase`].
 */
enum WpStatus wp_allocator_admit(struct WpAllocator *a,
                                 double now_ns,
                                 uint32_t pid,
                                 double alpha,
                                 uint32_t max_ways,
                                 const struct WpPhase *phase,
                                 struct WpDecision *out);

/**
 * Re-apportions a placed process entering a new phase. `out` may be null.
 *
 * # Safety
 * `a` must be a live handle and `phase` must point to a valid [`WpPhase`].
 */
enum WpStatus wp_allocator_phase_change(struct WpAllocator *a,
                                        double now_ns,
                                        uint32_t pid,
                                        const struct WpPhase *phase,
                                        struct WpDecision *out);

/**
 * # Safety
 * `a` must be a live handle.
 */
enum WpStatus wp_allocator_release(struct WpAllocator *a, double now_ns, uint32_t pid);

/**
 * Current way mask and socket of a placed process.
 *
 * # Safety
 * `a` must be a live handle; `bits` and `socket` must be writable.
 */
enum WpStatus wp_allocator_bitmask(struct WpAllocator *a,
                                   uint32_t pid,
                                   uint64_t *bits,
                                   uint32_t *socket);

/**
 * Allocation log as versioned CSV. Free the result with [`wp_string_free`].
 *
 * # Safety
 * `a` must be a live handle; `out` must be writable.
 */
enum WpStatus wp_allocator_log_csv(struct WpAllocator *a, char **out);

/**
 * Simulates a mix file under `policy` ("comcas", "unpartitioned",
 * "maxways", "reactive") and returns the run summary as TOML. The interval
 * applies to the reactive policy; pass 0 for the default.
 *
 * # Safety
 * `path` and `policy` must be NUL-terminated; `out` must be writable.
 */
enum WpStatus wp_simulate_mix_file(const char *path,
                                   const char *policy,
                                   double interval_ms,
                                   char **out);

/**
 * Analyzes a loop-nest file and returns its probe attributes as TOML.
 * `config_toml` may be null.
 *
 * # Safety
 * `path` must be NUL-terminated, `config_toml` null or NUL-terminated, and
 * `out` writable.
 */
enum WpStatus wp_analyze_nest_file(const char *path, const char *config_toml, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WAYPART_H */
