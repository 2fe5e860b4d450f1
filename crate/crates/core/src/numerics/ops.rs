//! Thread-local arithmetic-operation counter.
//!
//! Kernels in this module tree report the number of scalar multiply/add
//! operations they perform. Used to check that prediction cost scales with
//! the pool size the way the retrieval analysis says it should.

use std::cell::Cell;

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub(crate) fn add(n: usize) {
    OPS.with(|c| c.set(c.get().wrapping_add(n as u64)));
}

pub fn reset() {
    OPS.with(|c| c.set(0));
}

pub fn read() -> u64 {
    OPS.with(|c| c.get())
}

/// Runs `f` and returns its result with the number of operations it counted.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = read();
    let out = f();
    (out, read().wrapping_sub(before))
}
