use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::ids::Tick;

/// Shared logical clock. Cloning shares the underlying counter.
#[derive(Debug, Clone, Default)]
pub struct LogicalClock(Arc<AtomicU64>);

impl LogicalClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Tick {
        self.0.load(Ordering::SeqCst)
    }

    /// Moves the clock forward. Going backwards is ignored.
    pub fn advance_to(&self, tick: Tick) {
        self.0.fetch_max(tick, Ordering::SeqCst);
    }

    pub fn tick(&self) -> Tick {
        self.0.fetch_add(1, Ordering::SeqCst) + 1
    }
}
