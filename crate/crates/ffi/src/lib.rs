// SPDX-License-Identifier: MIT OR Apache-2.0

//! C ABI over the `lookahead` crate.
//!
//! Every function returns an [`LkStatus`]; results go through out-pointers.
//! Handles are opaque and must be released with the matching `*_free`.
//! Layers, heads and squares are 0-based; squares index the model frame
//! (a1 = 0, h8 = 63, board mirrored when black is to move). The message of
//! the last failure on the calling thread is available from
//! [`lk_last_error`]. Panics are caught and reported as `LK_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lookahead::chess::{Board, Square};
use lookahead::interventions::{ablate_attention_entries, Effect, PatchContext};
use lookahead::model::synthetic::default_planted_model;
use lookahead::model::{Model, PolicyModel};
use lookahead::Error;

#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    IllegalMove = 4,
    Io = 5,
    Model = 6,
    BufferTooSmall = 7,
    Panic = 99,
}

/// A loaded transformer.
pub struct LkModel {
    inner: Model,
}

/// A chess position.
pub struct LkBoard {
    inner: Board,
}

#[repr(C)]
#[derive(Clone, Copy, Default, Debug)]
pub struct LkModelInfo {
    pub n_layers: u32,
    pub n_heads: u32,
    pub d_resid: u32,
    pub parameters: u64,
}

/// Change in the best move's log odds. `delta > 0` means the intervention
/// lowered its probability.
#[repr(C)]
#[derive(Clone, Copy, Default, Debug)]
pub struct LkEffect {
    pub delta: f64,
    pub clean_prob: f64,
    pub patched_prob: f64,
    pub clamped: bool,
}

impl From<Effect> for LkEffect {
    fn from(e: Effect) -> Self {
        LkEffect { delta: e.delta, clean_prob: e.clean_prob, patched_prob: e.patched_prob, clamped: e.clamped }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> LkStatus {
    match e {
        Error::Fen { .. } | Error::SquareName(_) | Error::Uci(_) => LkStatus::Parse,
        Error::IllegalMove { .. } | Error::Terminal => LkStatus::IllegalMove,
        Error::Io(_) | Error::MissingInput(_) => LkStatus::Io,
        Error::Site(_) | Error::Hook(_) => LkStatus::InvalidArgument,
        _ => LkStatus::Model,
    }
}

struct Fail(LkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LkStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            LkStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(LkStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(LkStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(LkStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(LkStatus::Parse, format!("{what} is not UTF-8")))
}

/// Copies `s` with a terminating NUL. `needed` (optional) receives the
/// full size including the NUL.
unsafe fn write_str(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Fail> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return Err(Fail(LkStatus::BufferTooSmall, format!("need {} bytes", s.len() + 1)));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

fn square(i: u32) -> Result<Square, Fail> {
    Square::new(i as u8).filter(|_| i < 64).ok_or_else(|| Fail(LkStatus::InvalidArgument, format!("square index {i} out of range")))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`.
#[no_mangle]
pub unsafe extern "C" fn lk_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> LkStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match write_str(&msg, buf, len, needed) {
        Ok(()) => LkStatus::Ok,
        Err(Fail(s, _)) => s,
    }
}

#[no_mangle]
pub unsafe extern "C" fn lk_board_from_fen(fen: *const c_char, out: *mut *mut LkBoard) -> LkStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let b = Board::from_fen(text(fen, "fen")?)?;
        *out = Box::into_raw(Box::new(LkBoard { inner: b }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lk_board_free(board: *mut LkBoard) {
    if !board.is_null() {
        drop(Box::from_raw(board));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lk_board_fen(board: *const LkBoard, buf: *mut c_char, len: usize, needed: *mut usize) -> LkStatus {
    guard(|| write_str(&deref(board, "board")?.inner.fen(), buf, len, needed))
}

/// Plays a legal UCI move in place.
#[no_mangle]
pub unsafe extern "C" fn lk_board_play(board: *mut LkBoard, uci: *const c_char) -> LkStatus {
    guard(|| {
        let b = deref_mut(board, "board")?;
        let mv = b.inner.parse_uci(text(uci, "uci")?)?;
        b.inner = b.inner.apply_move(mv)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lk_board_legal_move_count(board: *const LkBoard, out: *mut usize) -> LkStatus {
    guard(|| {
        let n = deref(board, "board")?.inner.legal_moves().len();
        *deref_mut(out, "out")? = n;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lk_perft(board: *const LkBoard, depth: u32, out: *mut u64) -> LkStatus {
    guard(|| {
        if depth > 7 {
            return Err(Fail(LkStatus::InvalidArgument, "perft depth above 7".into()));
        }
        let n = deref(board, "board")?.inner.perft(depth);
        *deref_mut(out, "out")? = n;
        Ok(())
    })
}

/// Loads a weight archive directory or its manifest file.
#[no_mangle]
pub unsafe extern "C" fn lk_model_load(path: *const c_char, out: *mut *mut LkModel) -> LkStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let m = Model::load(Path::new(text(path, "path")?))?;
        *out = Box::into_raw(Box::new(LkModel { inner: m }));
        Ok(())
    })
}

/// The small synthetic model with a known planted circuit.
#[no_mangle]
pub unsafe extern "C" fn lk_model_planted(seed: u64, out: *mut *mut LkModel) -> LkStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let (m, _) = default_planted_model(seed)?;
        *out = Box::into_raw(Box::new(LkModel { inner: m }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lk_model_free(model: *mut LkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lk_model_info(model: *const LkModel, out: *mut LkModelInfo) -> LkStatus {
    guard(|| {
        let m = &deref(model, "model")?.inner;
        let s = m.spec();
        *deref_mut(out, "out")? = LkModelInfo {
            n_layers: s.n_layers as u32,
            n_heads: s.n_heads as u32,
            d_resid: s.d_resid as u32,
            parameters: m.parameter_count() as u64,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lk_model_fingerprint(model: *const LkModel, buf: *mut c_char, len: usize, needed: *mut usize) -> LkStatus {
    guard(|| write_str(deref(model, "model")?.inner.fingerprint(), buf, len, needed))
}

/// Policy probability of a legal UCI move.
#[no_mangle]
pub unsafe extern "C" fn lk_move_prob(model: *const LkModel, board: *const LkBoard, uci: *const c_char, out: *mut f64) -> LkStatus {
    guard(|| {
        let (m, b) = (&deref(model, "model")?.inner, &deref(board, "board")?.inner);
        let mv = b.parse_uci(text(uci, "uci")?)?;
        let p = m.evaluate(b)?.dist.prob(mv);
        *deref_mut(out, "out")? = p;
        Ok(())
    })
}

/// The model's top move in UCI.
#[no_mangle]
pub unsafe extern "C" fn lk_best_move(
    model: *const LkModel,
    board: *const LkBoard,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> LkStatus {
    guard(|| {
        let (m, b) = (&deref(model, "model")?.inner, &deref(board, "board")?.inner);
        let mv = m.evaluate(b)?.dist.best().ok_or(Error::Terminal)?;
        write_str(&mv.uci(), buf, len, needed)
    })
}

unsafe fn patch_context<'m>(
    model: *const LkModel,
    clean: *const LkBoard,
    corrupted: *const LkBoard,
    best: *const c_char,
) -> Result<PatchContext<'m>, Fail> {
    let m = &deref(model, "model")?.inner;
    let c = &deref(clean, "clean")?.inner;
    let k = &deref(corrupted, "corrupted")?.inner;
    let mv = c.parse_uci(text(best, "best")?)?;
    Ok(PatchContext::new(m, "ffi", c, k, mv)?)
}

/// Patches one residual site from the corrupted run into the clean run.
#[no_mangle]
pub unsafe extern "C" fn lk_patch_residual(
    model: *const LkModel,
    clean: *const LkBoard,
    corrupted: *const LkBoard,
    best: *const c_char,
    layer: u32,
    square_index: u32,
    out: *mut LkEffect,
) -> LkStatus {
    guard(|| {
        let ctx = patch_context(model, clean, corrupted, best)?;
        let r = ctx.patch_residual(layer as usize, square(square_index)?)?;
        *deref_mut(out, "out")? = r.effect.into();
        Ok(())
    })
}

/// Patches one head's output from the corrupted run into the clean run.
#[no_mangle]
pub unsafe extern "C" fn lk_patch_head(
    model: *const LkModel,
    clean: *const LkBoard,
    corrupted: *const LkBoard,
    best: *const c_char,
    layer: u32,
    head: u32,
    out: *mut LkEffect,
) -> LkStatus {
    guard(|| {
        let ctx = patch_context(model, clean, corrupted, best)?;
        let r = ctx.patch_head(layer as usize, head as usize)?;
        *deref_mut(out, "out")? = r.effect.into();
        Ok(())
    })
}

/// Zeroes one post-softmax attention weight.
#[no_mangle]
pub unsafe extern "C" fn lk_ablate_entry(
    model: *const LkModel,
    board: *const LkBoard,
    best: *const c_char,
    layer: u32,
    head: u32,
    query: u32,
    key: u32,
    out: *mut LkEffect,
) -> LkStatus {
    guard(|| {
        let (m, b) = (&deref(model, "model")?.inner, &deref(board, "board")?.inner);
        let mv = b.parse_uci(text(best, "best")?)?;
        let e = ablate_attention_entries(m, b, &[(layer as usize, head as usize, square(query)?, square(key)?)], mv)?;
        *deref_mut(out, "out")? = e.into();
        Ok(())
    })
}
