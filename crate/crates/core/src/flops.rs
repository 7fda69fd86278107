//! Runtime floating-point operation counter.
//!
//! Kernels report the work they actually execute through [`record`]; the
//! count is only accumulated inside [`measure`]. Counting rules:
//!
//! | operation                 | FLOPs                                   |
//! |---------------------------|-----------------------------------------|
//! | conv1d                    | `2·C_in·C_out·k·T_out` (+`C_out·T_out` bias) |
//! | matmul / dense            | `2·M·K·N` (+`M` per row for a bias)      |
//! | elementwise, broadcast    | 1 per output element                    |
//! | softmax                   | 1 per element                           |
//! | mean / sum over an axis   | 1 per input element                     |
//! | max pool                  | `k` per output element                  |
//! | batch norm                | 2 per element                           |
//! | concat, narrow, reshape   | 0                                       |
//!
//! One multiply-add counts as 2 FLOPs.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

pub(crate) fn record(n: u64) {
    COUNTER.with(|c| {
        if let Some(total) = c.get() {
            c.set(Some(total + n));
        }
    });
}

/// Run `f` and return its result with the FLOPs executed on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let previous = COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let counted = COUNTER.with(|c| c.replace(previous)).unwrap_or(0);
    if let Some(outer) = previous {
        COUNTER.with(|c| c.set(Some(outer + counted)));
    }
    (out, counted)
}
