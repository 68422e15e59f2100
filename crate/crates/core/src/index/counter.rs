use std::collections::HashMap;
use std::num::NonZeroU32;
use std::sync::Mutex;

use super::dei::Dei;
use super::invocation::InvocationSignature;

/// Occurrence counters keyed by (enclosing index, invocation signature).
/// One instance lives for one test execution and is shared by every task
/// in it.
#[derive(Debug, Default)]
pub struct CounterState {
    counts: Mutex<HashMap<(Dei, InvocationSignature), u32>>,
}

impl CounterState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns 1 on the first call for a key and one more on each later
    /// call. Atomic with respect to concurrent callers.
    pub fn counter_next(&self, path: &Dei, invocation: &InvocationSignature) -> NonZeroU32 {
        let mut counts = self.counts.lock().unwrap_or_else(|e| e.into_inner());
        let c = counts.entry((path.clone(), invocation.clone())).or_insert(0);
        *c += 1;
        NonZeroU32::new(*c).expect("count starts at one")
    }

    pub fn reset(&self) {
        self.counts.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }
}
