// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ffi::{CStr, CString};
use std::ptr;

use lookahead_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        assert_eq!(lk_last_error(buf.as_mut_ptr(), buf.len(), ptr::null_mut()), LkStatus::Ok);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

unsafe fn board(fen: &str) -> *mut LkBoard {
    let mut b = ptr::null_mut();
    assert_eq!(lk_board_from_fen(c(fen).as_ptr(), &mut b), LkStatus::Ok);
    b
}

#[test]
fn perft_and_moves() {
    unsafe {
        let b = board("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1");
        let mut n = 0u64;
        assert_eq!(lk_perft(b, 3, &mut n), LkStatus::Ok);
        assert_eq!(n, 8902);
        assert_eq!(lk_board_play(b, c("e2e4").as_ptr()), LkStatus::Ok);
        let mut count = 0usize;
        assert_eq!(lk_board_legal_move_count(b, &mut count), LkStatus::Ok);
        assert_eq!(count, 20);
        assert_eq!(lk_board_play(b, c("e2e4").as_ptr()), LkStatus::IllegalMove);
        assert!(last_error().contains("e2e4"));

        let mut needed = 0usize;
        assert_eq!(lk_board_fen(b, ptr::null_mut(), 0, &mut needed), LkStatus::BufferTooSmall);
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(lk_board_fen(b, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), LkStatus::Ok);
        let fen = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert!(fen.starts_with("rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq"), "{fen}");
        lk_board_free(b);
    }
}

#[test]
fn bad_arguments() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(lk_board_from_fen(c("not a fen").as_ptr(), &mut b), LkStatus::Parse);
        assert!(b.is_null());
        assert_eq!(lk_board_from_fen(ptr::null(), &mut b), LkStatus::NullPointer);
        assert_eq!(lk_perft(ptr::null(), 1, &mut 0), LkStatus::NullPointer);
        assert!(last_error().contains("board"));
        let mut m = ptr::null_mut();
        assert_eq!(lk_model_load(c("/nonexistent/model").as_ptr(), &mut m), LkStatus::Io);
        lk_board_free(ptr::null_mut());
        lk_model_free(ptr::null_mut());
        assert!(!CStr::from_ptr(lk_version()).to_str().unwrap().is_empty());
    }
}

#[test]
fn planted_interventions() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(lk_model_planted(7, &mut m), LkStatus::Ok);
        let mut info = LkModelInfo::default();
        assert_eq!(lk_model_info(m, &mut info), LkStatus::Ok);
        assert_eq!((info.n_layers, info.n_heads), (3, 4));

        let clean = board("7k/8/2p5/8/1N6/8/8/R5K1 w - - 0 1");
        let corrupted = board("7k/8/8/8/1N6/8/8/R5K1 w - - 0 1");
        let mut buf = vec![0 as std::ffi::c_char; 8];
        assert_eq!(lk_best_move(m, clean, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), LkStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "a1a4");
        let mut p = 0.0;
        assert_eq!(lk_move_prob(m, clean, c("a1a4").as_ptr(), &mut p), LkStatus::Ok);
        assert!(p > 0.5);

        let best = c("a1a4");
        let (c6, a4, a1) = (42, 24, 0);
        let mut e = LkEffect::default();
        assert_eq!(lk_patch_residual(m, clean, clean, best.as_ptr(), 0, c6, &mut e), LkStatus::Ok);
        assert_eq!(e.delta, 0.0);
        assert_eq!(lk_patch_residual(m, clean, corrupted, best.as_ptr(), 0, c6, &mut e), LkStatus::Ok);
        assert!(e.delta > 0.5);
        assert_eq!(lk_patch_residual(m, clean, corrupted, best.as_ptr(), 0, a1, &mut e), LkStatus::Ok);
        assert!(e.delta.abs() <= 0.5);
        assert_eq!(lk_patch_head(m, clean, corrupted, best.as_ptr(), 1, 1, &mut e), LkStatus::Ok);
        assert!(e.delta > 0.5);
        assert_eq!(lk_ablate_entry(m, clean, best.as_ptr(), 1, 1, a4, c6, &mut e), LkStatus::Ok);
        assert!(e.delta > 0.5);
        assert_eq!(lk_ablate_entry(m, clean, best.as_ptr(), 1, 1, a4, 64, &mut e), LkStatus::InvalidArgument);
        assert_eq!(lk_patch_head(m, clean, corrupted, best.as_ptr(), 9, 0, &mut e), LkStatus::InvalidArgument);

        lk_board_free(clean);
        lk_board_free(corrupted);
        lk_model_free(m);
    }
}
