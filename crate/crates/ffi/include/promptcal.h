/* C ABI for the promptcal prompt-calibration library. */

#ifndef PROMPTCAL_H
#define PROMPTCAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PcStatus {
  PcStatusOk = 0,
  /**
   * A required pointer argument was NULL.
   */
  PcStatusNullArgument = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PcStatusInvalidUtf8 = 2,
  /**
   * Contract construction or validation failed.
   */
  PcStatusContractError = 3,
  /**
   * Metric preconditions were violated (bad gold label or policy).
   */
  PcStatusMetricError = 4,
  /**
   * File could not be read or written.
   */
  PcStatusIoError = 5,
  /**
   * Artifact schema or JSON was malformed.
   */
  PcStatusFormatError = 6,
  /**
   * Stored fingerprint did not match the recomputed fixed layers.
   */
  PcStatusIntegrityError = 7,
  /**
   * Statistics preconditions were violated (empty matrix).
   */
  PcStatusEvalError = 8,
} PcStatus;

/**
 * Opaque task contract handle.
 */
typedef struct PcContract PcContract;

/**
 * Opaque scoring-policy handle.
 */
typedef struct PcPolicy PcPolicy;

/**
 * Opaque compiled-program handle.
 */
typedef struct PcProgram PcProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message of the current thread, or NULL when no error has been
 * recorded. Free with `pc_string_free`.
 */
char *pc_last_error_message(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `ptr` must be NULL or a pointer previously returned by this library and
 * not yet freed.
 */
void pc_string_free(char *ptr);

/**
 * Library version as a string. Free with `pc_string_free`.
 */
char *pc_version(void);

/**
 * Parse and validate a contract document (see the contract file schema).
 *
 * # Safety
 * `json` must be a valid NUL-terminated string; `out` must be a valid
 * pointer.
 */
enum PcStatus pc_contract_from_json(const char *json, struct PcContract **out);

/**
 * Serialize a contract to its JSON document. Free with `pc_string_free`.
 *
 * # Safety
 * `contract` must be a live handle from this library.
 */
char *pc_contract_to_json(const struct PcContract *contract);

/**
 * A new contract sharing the fixed layers with `contract` and carrying
 * `harness` as its mutable layer.
 *
 * # Safety
 * `contract` must be a live handle; `harness` a valid string; `out` valid.
 */
enum PcStatus pc_contract_with_harness(const struct PcContract *contract,
                                       const char *harness,
                                       struct PcContract **out);

/**
 * The interface fingerprint (hex SHA-256 of the fixed layers). Free with
 * `pc_string_free`.
 *
 * # Safety
 * `contract` must be a live handle from this library.
 */
char *pc_contract_fingerprint(const struct PcContract *contract);

/**
 * The current harness text. Free with `pc_string_free`.
 *
 * # Safety
 * `contract` must be a live handle from this library.
 */
char *pc_contract_harness(const struct PcContract *contract);

/**
 * Release a contract handle.
 *
 * # Safety
 * `contract` must be NULL or a live handle, not yet freed.
 */
void pc_contract_free(struct PcContract *contract);

/**
 * The shipped default policy (fp_score 0.4, checks cap 0.6, positive label
 * "include").
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PcStatus pc_policy_default(struct PcPolicy **out);

/**
 * A policy with custom fp_score and checks cap; other constants keep their
 * defaults. Rejects orderings that violate the policy invariants.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PcStatus pc_policy_new(double fp_score, double checks_cap, struct PcPolicy **out);

/**
 * Release a policy handle.
 *
 * # Safety
 * `policy` must be NULL or a live handle, not yet freed.
 */
void pc_policy_free(struct PcPolicy *policy);

/**
 * Normalize a label token (trim, lowercase, fold participle forms). Free
 * the result with `pc_string_free`.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string.
 */
char *pc_normalize_label(const char *text);

/**
 * Strict audit-trace validation: 2-5 bounded bullet lines, 30 words max.
 *
 * # Safety
 * `checks` must be a valid string; `out` a valid pointer.
 */
enum PcStatus pc_checks_format_ok(const char *checks, bool *out);

/**
 * Minimal audit-trace validation: at least three words of checks.
 *
 * # Safety
 * `checks` must be a valid string; `out` a valid pointer.
 */
enum PcStatus pc_has_supporting_checks(const char *checks, bool *out);

/**
 * Score one prediction with the compact asymmetric metric. On success
 * `out_score` holds the score and, when non-NULL, `out_feedback` holds the
 * feedback text (free with `pc_string_free`).
 *
 * # Safety
 * String arguments must be valid; `policy` a live handle; `out_score` valid.
 */
enum PcStatus pc_compact_metric(const char *gold_label,
                                const char *predicted_label,
                                const char *checks,
                                const struct PcPolicy *policy,
                                double *out_score,
                                char **out_feedback);

/**
 * Label-level asymmetric utility `(TP + TN + fp_score * FP) / N`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PcStatus pc_utility_from_confusion(uint64_t tp,
                                        uint64_t fp,
                                        uint64_t tn,
                                        uint64_t fn_,
                                        double fp_score,
                                        double *out);

/**
 * Full derived statistics of a confusion matrix as a JSON object (absent
 * statistics are null). Free with `pc_string_free`.
 *
 * # Safety
 * `out_json` must be a valid pointer.
 */
enum PcStatus pc_run_metrics_json(uint64_t tp,
                                  uint64_t fp,
                                  uint64_t tn,
                                  uint64_t fn_,
                                  double fp_score,
                                  char **out_json);

/**
 * Render the (system, user) message texts for one screening example. Both
 * outputs are freed with `pc_string_free`.
 *
 * # Safety
 * `contract` must be a live handle; strings valid; out pointers valid.
 */
enum PcStatus pc_render_messages(const struct PcContract *contract,
                                 const char *criteria,
                                 const char *title,
                                 const char *abstract_text,
                                 char **out_system,
                                 char **out_user);

/**
 * Parse a marker-delimited model response. `out_parse_ok` is false when the
 * decision marker is absent (the metric scores that as invalid). Both
 * strings are freed with `pc_string_free`.
 *
 * # Safety
 * `contract` must be a live handle; `response` valid; out pointers valid.
 */
enum PcStatus pc_parse_fields(const char *response,
                              const struct PcContract *contract,
                              char **out_checks,
                              char **out_label,
                              bool *out_parse_ok);

/**
 * Load a compiled-program artifact, re-validating the contract fingerprint.
 *
 * # Safety
 * `path` must be a valid string; `out` a valid pointer.
 */
enum PcStatus pc_program_load(const char *path, struct PcProgram **out);

/**
 * Save a program canonically; when non-NULL, `out_digest` receives the hex
 * content digest (free with `pc_string_free`).
 *
 * # Safety
 * `program` must be a live handle; `path` valid.
 */
enum PcStatus pc_program_save(const struct PcProgram *program, const char *path, char **out_digest);

/**
 * A contract handle cloned out of a program (free separately).
 *
 * # Safety
 * `program` must be a live handle; `out` a valid pointer.
 */
enum PcStatus pc_program_contract(const struct PcProgram *program, struct PcContract **out);

/**
 * Release a program handle.
 *
 * # Safety
 * `program` must be NULL or a live handle, not yet freed.
 */
void pc_program_free(struct PcProgram *program);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROMPTCAL_H */
