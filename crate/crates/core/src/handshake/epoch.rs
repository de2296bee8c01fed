use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

pub const SECS_PER_HOUR: u64 = 3600;
pub const SECS_PER_DAY: u64 = 86_400;

/// Source of wall-clock time in whole Unix seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Manually driven clock for tests and simulations.
#[derive(Debug, Default)]
pub struct MockClock(AtomicU64);

impl MockClock {
    pub fn new(now: u64) -> Self {
        MockClock(AtomicU64::new(now))
    }

    pub fn set(&self, now: u64) {
        self.0.store(now, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for MockClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Unix time divided by 3600, bound into every handshake MAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Epoch {
    pub hours: u64,
}

impl Epoch {
    pub fn from_unix(secs: u64) -> Self {
        Epoch { hours: secs / SECS_PER_HOUR }
    }

    pub fn to_bytes(self) -> [u8; 8] {
        self.hours.to_be_bytes()
    }

    /// The epochs a received handshake MAC may be bound to: this hour and
    /// the previous one.
    pub fn accepted_window(self) -> [Epoch; 2] {
        [self, Epoch { hours: self.hours.saturating_sub(1) }]
    }
}
