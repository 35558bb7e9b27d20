/* SPDX-License-Identifier: MIT OR Apache-2.0 */
#include <stdio.h>
#include <string.h>
#include "lookahead.h"

#define CHECK(x) do { if (!(x)) { fprintf(stderr, "failed: %s\n", #x); return 1; } } while (0)

int main(void) {
    LkBoard *b = NULL;
    CHECK(lk_board_from_fen("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1", &b) == LK_STATUS_OK);
    uint64_t n = 0;
    CHECK(lk_perft(b, 4, &n) == LK_STATUS_OK && n == 197281);
    lk_board_free(b);

    LkModel *m = NULL;
    CHECK(lk_model_planted(7, &m) == LK_STATUS_OK);
    LkBoard *clean = NULL, *corrupted = NULL;
    CHECK(lk_board_from_fen("7k/8/2p5/8/1N6/8/8/R5K1 w - - 0 1", &clean) == LK_STATUS_OK);
    CHECK(lk_board_from_fen("7k/8/8/8/1N6/8/8/R5K1 w - - 0 1", &corrupted) == LK_STATUS_OK);
    LkEffect e;
    CHECK(lk_patch_head(m, clean, corrupted, "a1a4", 1, 1, &e) == LK_STATUS_OK && e.delta > 0.5);
    CHECK(lk_patch_head(m, clean, clean, "a1a4", 1, 1, &e) == LK_STATUS_OK && e.delta == 0.0);
    CHECK(lk_patch_head(m, clean, corrupted, "a1h1", 1, 1, &e) == LK_STATUS_ILLEGAL_MOVE);
    char msg[256];
    CHECK(lk_last_error(msg, sizeof msg, NULL) == LK_STATUS_OK && strstr(msg, "a1h1") != NULL);
    lk_board_free(clean);
    lk_board_free(corrupted);
    lk_model_free(m);
    printf("ok\n");
    return 0;
}
