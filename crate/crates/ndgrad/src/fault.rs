//! Test-only fault switches.

use std::sync::atomic::{AtomicBool, Ordering};

static CONV_SIGN_FLIP: AtomicBool = AtomicBool::new(false);

/// Negates the input gradient produced by conv2d's backward pass.
pub fn set_conv_sign_flip(on: bool) {
    CONV_SIGN_FLIP.store(on, Ordering::SeqCst);
}

pub(crate) fn conv_sign_flip() -> bool {
    CONV_SIGN_FLIP.load(Ordering::SeqCst)
}
