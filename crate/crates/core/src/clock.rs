//! Process-wide microsecond clock.
//!
//! Readings are anchored to the wall clock once and then advanced with a
//! monotonic clock, so timestamps taken on different tasks of one process
//! are directly comparable and never go backwards.

use std::sync::OnceLock;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

static ANCHOR: OnceLock<(Instant, u64)> = OnceLock::new();

/// Microseconds since the Unix epoch.
pub fn now_us() -> u64 {
    let (instant, epoch_us) = ANCHOR.get_or_init(|| {
        let epoch = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as u64)
            .unwrap_or_default();
        (Instant::now(), epoch)
    });
    epoch_us + instant.elapsed().as_micros() as u64
}
