#ifndef AUTHENTREE_H
#define AUTHENTREE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AtStatus {
  AT_STATUS_OK = 0,
  AT_STATUS_NULL_ARGUMENT = 1,
  AT_STATUS_INVALID_UTF8 = 2,
  AT_STATUS_CONFIG = 3,
  AT_STATUS_PROTOCOL = 4,
  AT_STATUS_OUT_OF_RANGE = 5,
  AT_STATUS_PANIC = 6,
} AtStatus;

typedef enum AtVerdict {
  AT_VERDICT_PASS = 0,
  AT_VERDICT_FAIL = 1,
  AT_VERDICT_ANOMALOUS = 2,
} AtVerdict;

/**
 * Outcome of one authentication session.
 */
typedef struct AtReport AtReport;

/**
 * Parsed and validated scenario.
 */
typedef struct AtScenario AtScenario;

typedef struct AtChipletSummary {
  uint64_t id;
  bool is_integrator;
  enum AtVerdict verdict;
  /**
   * Whether fault localization produced a diagnosis for this chiplet.
   */
  bool diagnosed;
} AtChipletSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL.
 *
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *at_last_error(void);

/**
 * Parses a scenario from NUL-terminated JSON.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum AtStatus at_scenario_from_json(const char *json, struct AtScenario **out);

/**
 * Seed stored in the scenario, or `fallback` when it has none.
 *
 * # Safety
 * `scenario` must be NULL or a live handle from [`at_scenario_from_json`].
 */
uint64_t at_scenario_seed(const struct AtScenario *scenario, uint64_t fallback);

/**
 * # Safety
 * `scenario` must be NULL or a handle not yet freed.
 */
void at_scenario_free(struct AtScenario *scenario);

/**
 * Runs one authentication session.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a writable pointer.
 */
enum AtStatus at_authenticate(const struct AtScenario *scenario,
                              uint64_t seed,
                              struct AtReport **out);

/**
 * # Safety
 * `report` must be NULL or a handle not yet freed.
 */
void at_report_free(struct AtReport *report);

/**
 * # Safety
 * `report` must be a live handle.
 */
bool at_report_all_authenticated(const struct AtReport *report);

/**
 * # Safety
 * `report` must be a live handle.
 */
uint64_t at_report_critical_path_cycles(const struct AtReport *report);

/**
 * # Safety
 * `report` must be a live handle.
 */
size_t at_report_chiplet_count(const struct AtReport *report);

/**
 * Fills `out` with the chiplet at `index`, in id order.
 *
 * # Safety
 * `report` must be a live handle and `out` a writable pointer.
 */
enum AtStatus at_report_chiplet(const struct AtReport *report,
                                size_t index,
                                struct AtChipletSummary *out);

/**
 * Serializes the full report as pretty JSON. Free the result with
 * [`at_string_free`].
 *
 * # Safety
 * `report` must be a live handle and `out` a writable pointer.
 */
enum AtStatus at_report_to_json(const struct AtReport *report, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void at_string_free(char *s);

/**
 * SHA-256 of `len` bytes at `data` into the 32 bytes at `out`.
 *
 * # Safety
 * `data` must be readable for `len` bytes (or may be NULL when `len` is 0)
 * and `out` writable for 32 bytes.
 */
enum AtStatus at_sha256(const uint8_t *data, size_t len, uint8_t *out);

/**
 * Number of differing bits between two `len`-byte buffers.
 *
 * # Safety
 * `a` and `b` must each be readable for `len` bytes.
 */
enum AtStatus at_hamming_distance(const uint8_t *a, const uint8_t *b, size_t len, uint32_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTHENTREE_H */
