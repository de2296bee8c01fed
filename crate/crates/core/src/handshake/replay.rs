use std::collections::HashMap;

use super::epoch::Epoch;
use crate::crypto::{MasterKey, TAG_LEN};

/// Cache of redeemed master keys and UniformDH MAC tags.
///
/// An entry stays visible while the current epoch hour is at most one hour
/// past the hour it was inserted in. Handshake MACs are only accepted for the
/// current and previous hour, so any handshake old enough to have been
/// evicted no longer verifies anyway.
#[derive(Debug, Default)]
pub struct ReplayCache {
    entries: HashMap<[u8; 32], u64>,
}

impl ReplayCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn master_key(master: &MasterKey) -> [u8; 32] {
        *master.as_bytes()
    }

    /// Tags are zero-extended to the common 32-byte entry width.
    pub fn tag_key(tag: &[u8; TAG_LEN]) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[..TAG_LEN].copy_from_slice(tag);
        key
    }

    pub fn insert(&mut self, key: [u8; 32], now: Epoch) {
        self.evict(now);
        self.entries.insert(key, now.hours);
    }

    pub fn contains(&self, key: &[u8; 32], now: Epoch) -> bool {
        self.entries
            .get(key)
            .is_some_and(|&inserted| !is_stale(inserted, now))
    }

    pub fn evict(&mut self, now: Epoch) {
        self.entries.retain(|_, inserted| !is_stale(*inserted, now));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn is_stale(inserted: u64, now: Epoch) -> bool {
    now.hours.saturating_sub(inserted) > 1
}
