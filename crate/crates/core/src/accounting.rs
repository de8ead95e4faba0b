//! Logical allocation accounting.
//!
//! Every [`Tensor`](crate::Tensor) registers its element count on creation and
//! releases it on drop. Counters are thread-local, so independent benchmark
//! workers and concurrently running tests never observe each other. The numbers
//! are element counts of live tensors, not OS bytes, and are therefore identical
//! across repeats of the same computation.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

#[inline]
pub(crate) fn register(elements: usize) {
    LIVE.with(|live| {
        let now = live.get() + elements;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

#[inline]
pub(crate) fn release(elements: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(elements)));
}

/// Elements currently held by live tensors on this thread.
pub fn live_elements() -> usize {
    LIVE.with(Cell::get)
}

/// High-water mark since the last [`reset_peak`] on this thread.
pub fn peak_elements() -> usize {
    PEAK.with(Cell::get)
}

/// Lowers the high-water mark to the current live count.
pub fn reset_peak() {
    let live = live_elements();
    PEAK.with(|peak| peak.set(live));
}

/// Measures the peak number of elements allocated on top of what was live when
/// the probe started.
#[derive(Debug)]
pub struct MemoryProbe {
    baseline: usize,
}

impl MemoryProbe {
    pub fn start() -> Self {
        reset_peak();
        Self {
            baseline: live_elements(),
        }
    }

    pub fn baseline(&self) -> usize {
        self.baseline
    }

    pub fn peak_above_baseline(&self) -> usize {
        peak_elements().saturating_sub(self.baseline)
    }

    pub fn live_above_baseline(&self) -> usize {
        live_elements().saturating_sub(self.baseline)
    }
}
