#ifndef ALIGNSEG_H
#define ALIGNSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AlignsegStatus {
  ALIGNSEG_STATUS_OK = 0,
  ALIGNSEG_STATUS_NULL_POINTER = 1,
  ALIGNSEG_STATUS_INVALID_UTF8 = 2,
  ALIGNSEG_STATUS_IO = 3,
  ALIGNSEG_STATUS_INVALID_DATA = 4,
  ALIGNSEG_STATUS_NUMERIC = 5,
  ALIGNSEG_STATUS_PANIC = 6,
} AlignsegStatus;

// Opaque handle to a trained model.
typedef struct AlignsegModel AlignsegModel;

// Boundary, token and exact-match scores, all in [0, 1].
typedef struct AlignsegScores {
  double boundary_precision;
  double boundary_recall;
  double boundary_f;
  double token_precision;
  double token_recall;
  double token_f;
  double exact_match;
} AlignsegScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a model file written by `alignseg train`.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum AlignsegStatus alignseg_model_load(const char *path, struct AlignsegModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`alignseg_model_load`] and not be freed twice.
void alignseg_model_free(struct AlignsegModel *model);

// Force-decodes one sentence pair and writes the segmented target line
// (units joined, words separated by single spaces) to `out`.
//
// Spaces in `target` are ignored. Symbols unknown to the model are
// decoded as the unknown token.
//
// # Safety
// `model` must be a live handle, `source` and `target` nul-terminated
// strings, `out` a valid pointer.
enum AlignsegStatus alignseg_segment(const struct AlignsegModel *model,
                                     const char *source,
                                     const char *target,
                                     char **out);

// Scores newline-separated segmented lines against a reference with the
// same units. Units are Unicode characters; spaces mark word breaks.
//
// # Safety
// `predicted` and `gold` must be nul-terminated strings, `out` a valid pointer.
enum AlignsegStatus alignseg_evaluate(const char *predicted,
                                      const char *gold,
                                      struct AlignsegScores *out);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void alignseg_string_free(char *s);

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next library call on the same thread.
const char *alignseg_last_error(void);

// Library version, e.g. `0.1.0`.
const char *alignseg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALIGNSEG_H */
