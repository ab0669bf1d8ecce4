use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Block-transfer counters shared by every file handle of one context.
#[derive(Debug, Default)]
pub struct IoStats {
    blocks_read: AtomicU64,
    blocks_written: AtomicU64,
    records_fetched: AtomicU64,
    random_seeks: AtomicU64,
}

/// Plain copy of the counters at one point in time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoSnapshot {
    pub blocks_read: u64,
    pub blocks_written: u64,
    pub records_fetched: u64,
    pub random_seeks: u64,
}

impl IoSnapshot {
    pub fn transfers(&self) -> u64 {
        self.blocks_read + self.blocks_written
    }

    /// Counter growth from `earlier` to `self`.
    pub fn since(&self, earlier: &IoSnapshot) -> IoSnapshot {
        IoSnapshot {
            blocks_read: self.blocks_read - earlier.blocks_read,
            blocks_written: self.blocks_written - earlier.blocks_written,
            records_fetched: self.records_fetched - earlier.records_fetched,
            random_seeks: self.random_seeks - earlier.random_seeks,
        }
    }
}

impl IoStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add_read(&self, n: u64) {
        self.blocks_read.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_written(&self, n: u64) {
        self.blocks_written.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_fetched(&self, n: u64) {
        self.records_fetched.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_seek(&self) {
        self.random_seeks.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> IoSnapshot {
        IoSnapshot {
            blocks_read: self.blocks_read.load(Ordering::Relaxed),
            blocks_written: self.blocks_written.load(Ordering::Relaxed),
            records_fetched: self.records_fetched.load(Ordering::Relaxed),
            random_seeks: self.random_seeks.load(Ordering::Relaxed),
        }
    }

    /// Zeroes all counters; call only between measured phases.
    pub fn reset(&self) {
        self.blocks_read.store(0, Ordering::Relaxed);
        self.blocks_written.store(0, Ordering::Relaxed);
        self.records_fetched.store(0, Ordering::Relaxed);
        self.random_seeks.store(0, Ordering::Relaxed);
    }
}
