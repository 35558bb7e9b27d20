/* SPDX-License-Identifier: MIT OR Apache-2.0 */

#ifndef LOOKAHEAD_H
#define LOOKAHEAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LkStatus {
  LK_STATUS_OK = 0,
  LK_STATUS_NULL_POINTER = 1,
  LK_STATUS_INVALID_ARGUMENT = 2,
  LK_STATUS_PARSE = 3,
  LK_STATUS_ILLEGAL_MOVE = 4,
  LK_STATUS_IO = 5,
  LK_STATUS_MODEL = 6,
  LK_STATUS_BUFFER_TOO_SMALL = 7,
  LK_STATUS_PANIC = 99,
} LkStatus;

/**
 * A chess position.
 */
typedef struct LkBoard LkBoard;

/**
 * A loaded transformer.
 */
typedef struct LkModel LkModel;

typedef struct LkModelInfo {
  uint32_t n_layers;
  uint32_t n_heads;
  uint32_t d_resid;
  uint64_t parameters;
} LkModelInfo;

/**
 * Change in the best move's log odds. `delta > 0` means the intervention
 * lowered its probability.
 */
typedef struct LkEffect {
  double delta;
  double clean_prob;
  double patched_prob;
  bool clamped;
} LkEffect;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *lk_version(void);

/**
 * Copies the calling thread's last error message into `buf`.
 */
enum LkStatus lk_last_error(char *buf, size_t len, size_t *needed);

enum LkStatus lk_board_from_fen(const char *fen, struct LkBoard **out);

void lk_board_free(struct LkBoard *board);

enum LkStatus lk_board_fen(const struct LkBoard *board, char *buf, size_t len, size_t *needed);

/**
 * Plays a legal UCI move in place.
 */
enum LkStatus lk_board_play(struct LkBoard *board, const char *uci);

enum LkStatus lk_board_legal_move_count(const struct LkBoard *board, size_t *out);

enum LkStatus lk_perft(const struct LkBoard *board, uint32_t depth, uint64_t *out);

/**
 * Loads a weight archive directory or its manifest file.
 */
enum LkStatus lk_model_load(const char *path, struct LkModel **out);

/**
 * The small synthetic model with a known planted circuit.
 */
enum LkStatus lk_model_planted(uint64_t seed, struct LkModel **out);

void lk_model_free(struct LkModel *model);

enum LkStatus lk_model_info(const struct LkModel *model, struct LkModelInfo *out);

enum LkStatus lk_model_fingerprint(const struct LkModel *model,
                                   char *buf,
                                   size_t len,
                                   size_t *needed);

/**
 * Policy probability of a legal UCI move.
 */
enum LkStatus lk_move_prob(const struct LkModel *model,
                           const struct LkBoard *board,
                           const char *uci,
                           double *out);

/**
 * The model's top move in UCI.
 */
enum LkStatus lk_best_move(const struct LkModel *model,
                           const struct LkBoard *board,
                           char *buf,
                           size_t len,
                           size_t *needed);

/**
 * Patches one residual site from the corrupted run into the clean run.
 */
enum LkStatus lk_patch_residual(const struct LkModel *model,
                                const struct LkBoard *clean,
                                const struct LkBoard *corrupted,
                                const char *best,
                                uint32_t layer,
                                uint32_t square_index,
                                struct LkEffect *out);

/**
 * Patches one head's output from the corrupted run into the clean run.
 */
enum LkStatus lk_patch_head(const struct LkModel *model,
                            const struct LkBoard *clean,
                            const struct LkBoard *corrupted,
                            const char *best,
                            uint32_t layer,
                            uint32_t head,
                            struct LkEffect *out);

/**
 * Zeroes one post-softmax attention weight.
 */
enum LkStatus lk_ablate_entry(const struct LkModel *model,
                              const struct LkBoard *board,
                              const char *best,
                              uint32_t layer,
                              uint32_t head,
                              uint32_t query,
                              uint32_t key,
                              struct LkEffect *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOOKAHEAD_H */
