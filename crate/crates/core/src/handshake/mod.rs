//! Client authentication: session-ticket redemption and MAC-authenticated
//! UniformDH, plus the replay cache that keeps both from being replayed.
//!
//! Both handshakes have the shape `material || padding || MAC(material ||
//! padding || E)` where `E` is the current epoch hour. There is no length
//! field: the receiver scans every candidate boundary until the trailing 16
//! bytes verify. Until that happens a server says nothing at all.

mod epoch;
mod replay;
mod ticket;
pub mod uniformdh;

pub use epoch::{Clock, Epoch, MockClock, SystemClock, SECS_PER_DAY, SECS_PER_HOUR};
pub use replay::ReplayCache;
pub use ticket::{SessionTicket, TicketKeyPair, TicketKeyStore, TICKET_LEN, TICKET_LIFETIME_SECS};
pub(crate) use ticket::write_private;
pub use uniformdh::{UniformDhKeypair, PUBLIC_KEY_LEN};

use crate::crypto::{fill_random, handshake_mac_key, Mac128, MasterKey, TAG_LEN};
use crate::error::{Error, Result};

/// Upper bound on handshake padding.
pub const MAX_HANDSHAKE_PADDING: usize = 1388;

pub const MIN_TICKET_HANDSHAKE: usize = TICKET_LEN + TAG_LEN;
pub const MAX_TICKET_HANDSHAKE: usize = TICKET_LEN + MAX_HANDSHAKE_PADDING + TAG_LEN;
pub const MIN_UNIFORMDH_HANDSHAKE: usize = PUBLIC_KEY_LEN + TAG_LEN;
pub const MAX_UNIFORMDH_HANDSHAKE: usize = PUBLIC_KEY_LEN + MAX_HANDSHAKE_PADDING + TAG_LEN;

/// Result of feeding buffered bytes to a handshake scanner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scan<T> {
    /// The handshake ends after `consumed` bytes.
    Accepted { value: T, consumed: usize },
    NeedMoreData,
    /// Permanently rejected; the connection must stay silent.
    Reject,
}

fn build(material: &[u8], mac_key: &[u8], pad_len: usize, epoch: Epoch) -> Result<Vec<u8>> {
    if pad_len > MAX_HANDSHAKE_PADDING {
        return Err(Error::PaddingOutOfRange(pad_len));
    }
    let mut out = Vec::with_capacity(material.len() + pad_len + TAG_LEN);
    out.extend_from_slice(material);
    out.resize(material.len() + pad_len, 0);
    fill_random(&mut out[material.len()..]);
    let mut mac = Mac128::new(mac_key);
    mac.update(&out);
    mac.update(&epoch.to_bytes());
    out.extend_from_slice(&mac.finalize());
    Ok(out)
}

/// `ticket || P || MAC_k(ticket || P || E)` with `k` derived from `master`.
pub fn build_ticket_handshake(
    master: &MasterKey,
    ticket: &SessionTicket,
    pad_len: usize,
    epoch: Epoch,
) -> Result<Vec<u8>> {
    build(ticket.as_bytes(), &handshake_mac_key(master), pad_len, epoch)
}

/// `X || P || MAC_kB(X || P || E)`; the server's reply has the same shape.
pub fn build_uniformdh_handshake(
    bridge_key: &[u8],
    own: &UniformDhKeypair,
    pad_len: usize,
    epoch: Epoch,
) -> Result<Vec<u8>> {
    build(own.public_wire(), bridge_key, pad_len, epoch)
}

/// Finds the first boundary whose trailing tag verifies.
///
/// `running` always holds the MAC state over `buffered[..next_len - 16]`, so
/// each candidate costs one state clone and finalization per epoch.
#[derive(Clone)]
struct BoundaryScanner {
    running: Mac128,
    next_len: usize,
    max_len: usize,
}

impl BoundaryScanner {
    fn new(key: &[u8], prefix: &[u8], max_len: usize) -> Self {
        let mut running = Mac128::new(key);
        running.update(prefix);
        BoundaryScanner { running, next_len: prefix.len() + TAG_LEN, max_len }
    }

    /// Returns the matching length, or `None` after testing all available
    /// candidates.
    fn advance(&mut self, buffered: &[u8], epoch: Epoch) -> Option<usize> {
        let window = epoch.accepted_window();
        let limit = buffered.len().min(self.max_len);
        while self.next_len <= limit {
            let tag = &buffered[self.next_len - TAG_LEN..self.next_len];
            for e in window {
                let mut candidate = self.running.clone();
                candidate.update(&e.to_bytes());
                if candidate.verify(tag) {
                    return Some(self.next_len);
                }
            }
            self.running.update(&tag[..1]);
            self.next_len += 1;
        }
        None
    }

    fn exhausted(&self) -> bool {
        self.next_len > self.max_len
    }
}

enum TicketScanState {
    Waiting,
    Decrypted { master: MasterKey, scanner: BoundaryScanner },
    Undecryptable,
    Rejected,
}

/// Server-side incremental scanner for ticket-redemption handshakes.
pub struct TicketScanner {
    state: TicketScanState,
}

impl Default for TicketScanner {
    fn default() -> Self {
        Self::new()
    }
}

impl TicketScanner {
    pub fn new() -> Self {
        TicketScanner { state: TicketScanState::Waiting }
    }

    /// `buffered` must be every byte received on the connection so far.
    /// `now` is read once by the caller and used for both ticket expiry and
    /// the epoch window.
    ///
    /// The redeemed master key is checked against `replay` but not inserted;
    /// that happens once the client acknowledges its new ticket.
    pub fn scan(
        &mut self,
        buffered: &[u8],
        store: &TicketKeyStore,
        replay: &ReplayCache,
        now: u64,
    ) -> Scan<MasterKey> {
        let epoch = Epoch::from_unix(now);
        loop {
            match &mut self.state {
                TicketScanState::Rejected => return Scan::Reject,
                _ if buffered.len() < MIN_TICKET_HANDSHAKE => return Scan::NeedMoreData,
                TicketScanState::Waiting => {
                    self.state = match store.redeem_ticket(&buffered[..TICKET_LEN], now) {
                        Some(master) => {
                            let key = handshake_mac_key(&master);
                            let scanner =
                                BoundaryScanner::new(&key, &buffered[..TICKET_LEN], MAX_TICKET_HANDSHAKE);
                            TicketScanState::Decrypted { master, scanner }
                        }
                        None => TicketScanState::Undecryptable,
                    };
                }
                TicketScanState::Undecryptable => {
                    if buffered.len() > MAX_TICKET_HANDSHAKE {
                        self.state = TicketScanState::Rejected;
                        continue;
                    }
                    return Scan::NeedMoreData;
                }
                TicketScanState::Decrypted { master, scanner } => {
                    if let Some(consumed) = scanner.advance(buffered, epoch) {
                        let replayed = replay.contains(&ReplayCache::master_key(master), epoch);
                        if replayed {
                            self.state = TicketScanState::Rejected;
                            return Scan::Reject;
                        }
                        let value = master.clone();
                        self.state = TicketScanState::Rejected;
                        return Scan::Accepted { value, consumed };
                    }
                    if scanner.exhausted() {
                        self.state = TicketScanState::Rejected;
                        return Scan::Reject;
                    }
                    return Scan::NeedMoreData;
                }
            }
        }
    }
}

/// An authenticated UniformDH public value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniformDhAccept {
    pub peer_public: [u8; PUBLIC_KEY_LEN],
    pub tag: [u8; TAG_LEN],
}

/// Incremental scanner for UniformDH handshakes (either direction).
pub struct UniformDhScanner {
    key: Vec<u8>,
    scanner: Option<BoundaryScanner>,
    done: bool,
}

impl UniformDhScanner {
    pub fn new(bridge_key: &[u8]) -> Self {
        UniformDhScanner { key: bridge_key.to_vec(), scanner: None, done: false }
    }

    /// With `replay` present (the server side), a tag seen within the last
    /// hour is rejected and a fresh tag is recorded on acceptance.
    pub fn scan(
        &mut self,
        buffered: &[u8],
        replay: Option<&mut ReplayCache>,
        now: u64,
    ) -> Scan<UniformDhAccept> {
        if self.done {
            return Scan::Reject;
        }
        if buffered.len() < MIN_UNIFORMDH_HANDSHAKE {
            return Scan::NeedMoreData;
        }
        let epoch = Epoch::from_unix(now);
        let key = &self.key;
        let scanner = self.scanner.get_or_insert_with(|| {
            BoundaryScanner::new(key, &buffered[..PUBLIC_KEY_LEN], MAX_UNIFORMDH_HANDSHAKE)
        });
        match scanner.advance(buffered, epoch) {
            Some(consumed) => {
                self.done = true;
                let mut peer_public = [0u8; PUBLIC_KEY_LEN];
                peer_public.copy_from_slice(&buffered[..PUBLIC_KEY_LEN]);
                let mut tag = [0u8; TAG_LEN];
                tag.copy_from_slice(&buffered[consumed - TAG_LEN..consumed]);
                if uniformdh::decode_public(&peer_public).is_err() {
                    return Scan::Reject;
                }
                if let Some(cache) = replay {
                    let entry = ReplayCache::tag_key(&tag);
                    if cache.contains(&entry, epoch) {
                        return Scan::Reject;
                    }
                    cache.insert(entry, epoch);
                }
                Scan::Accepted { value: UniformDhAccept { peer_public, tag }, consumed }
            }
            None if scanner.exhausted() => {
                self.done = true;
                Scan::Reject
            }
            None => Scan::NeedMoreData,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NOW: u64 = 1_700_000_000;

    fn epoch_at(t: u64) -> Epoch {
        Epoch::from_unix(t)
    }

    fn ticket_fixture() -> (TicketKeyStore, MasterKey, SessionTicket) {
        let store = TicketKeyStore::new(NOW);
        let master = MasterKey::generate();
        let ticket = store.issue_ticket(&master, NOW);
        (store, master, ticket)
    }

    #[test]
    fn ticket_handshake_lengths() {
        let (_, master, ticket) = ticket_fixture();
        let e = epoch_at(NOW);
        assert_eq!(build_ticket_handshake(&master, &ticket, 0, e).unwrap().len(), 96);
        assert_eq!(build_ticket_handshake(&master, &ticket, 1388, e).unwrap().len(), 1484);
        assert_eq!(
            build_ticket_handshake(&master, &ticket, 1389, e),
            Err(Error::PaddingOutOfRange(1389))
        );
    }

    #[test]
    fn ticket_scan_accepts_at_stream_end() {
        let (store, master, ticket) = ticket_fixture();
        let replay = ReplayCache::new();
        for pad in [0, 1, 700, 1388] {
            let hs = build_ticket_handshake(&master, &ticket, pad, epoch_at(NOW)).unwrap();
            let mut scanner = TicketScanner::new();
            assert_eq!(
                scanner.scan(&hs, &store, &replay, NOW),
                Scan::Accepted { value: master.clone(), consumed: hs.len() }
            );
        }
    }

    #[test]
    fn ticket_scan_byte_by_byte() {
        let (store, master, ticket) = ticket_fixture();
        let replay = ReplayCache::new();
        let hs = build_ticket_handshake(&master, &ticket, 333, epoch_at(NOW)).unwrap();
        let mut scanner = TicketScanner::new();
        for end in 1..hs.len() {
            assert_eq!(scanner.scan(&hs[..end], &store, &replay, NOW), Scan::NeedMoreData);
        }
        assert_eq!(
            scanner.scan(&hs, &store, &replay, NOW),
            Scan::Accepted { value: master, consumed: hs.len() }
        );
    }

    #[test]
    fn ticket_scan_stops_at_boundary_with_trailing_data() {
        let (store, master, ticket) = ticket_fixture();
        let mut hs = build_ticket_handshake(&master, &ticket, 10, epoch_at(NOW)).unwrap();
        let len = hs.len();
        hs.extend_from_slice(&[0xAA; 500]);
        let got = TicketScanner::new().scan(&hs, &store, &ReplayCache::new(), NOW);
        assert_eq!(got, Scan::Accepted { value: master, consumed: len });
    }

    #[test]
    fn ticket_scan_epoch_skew_window() {
        let (store, master, ticket) = ticket_fixture();
        let replay = ReplayCache::new();
        let built_at = NOW - NOW % 3600;
        let hs = build_ticket_handshake(&master, &ticket, 50, epoch_at(built_at)).unwrap();
        for (scan_at, ok) in [(built_at, true), (built_at + 3600, true), (built_at + 7200, false)] {
            let got = TicketScanner::new().scan(&hs, &store, &replay, scan_at);
            assert_eq!(matches!(got, Scan::Accepted { .. }), ok, "scan at +{}", scan_at - built_at);
        }
    }

    #[test]
    fn ticket_scan_rejects_cached_master() {
        let (store, master, ticket) = ticket_fixture();
        let mut replay = ReplayCache::new();
        replay.insert(ReplayCache::master_key(&master), epoch_at(NOW));
        let hs = build_ticket_handshake(&master, &ticket, 5, epoch_at(NOW)).unwrap();
        assert_eq!(TicketScanner::new().scan(&hs, &store, &replay, NOW), Scan::Reject);
    }

    #[test]
    fn garbage_is_rejected_only_past_the_bound() {
        let store = TicketKeyStore::new(NOW);
        let replay = ReplayCache::new();
        let junk = crate::crypto::secure_random(MAX_UNIFORMDH_HANDSHAKE + 1);
        let mut ts = TicketScanner::new();
        assert_eq!(ts.scan(&junk[..MAX_TICKET_HANDSHAKE], &store, &replay, NOW), Scan::NeedMoreData);
        assert_eq!(ts.scan(&junk[..MAX_TICKET_HANDSHAKE + 1], &store, &replay, NOW), Scan::Reject);

        let mut us = UniformDhScanner::new(&[1; 20]);
        assert_eq!(us.scan(&junk[..MAX_UNIFORMDH_HANDSHAKE], None, NOW), Scan::Reject);
        assert_eq!(us.scan(&junk, None, NOW), Scan::Reject);
    }

    #[test]
    fn uniformdh_handshake_roundtrip_and_replay() {
        let key = [0x42u8; 20];
        let kp = UniformDhKeypair::generate(&mut rand::rng());
        let hs = build_uniformdh_handshake(&key, &kp, 0, epoch_at(NOW)).unwrap();
        assert_eq!(hs.len(), 208);

        let mut replay = ReplayCache::new();
        let got = UniformDhScanner::new(&key).scan(&hs, Some(&mut replay), NOW);
        match got {
            Scan::Accepted { value, consumed } => {
                assert_eq!(consumed, 208);
                assert_eq!(&value.peer_public, kp.public_wire());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(UniformDhScanner::new(&key).scan(&hs, Some(&mut replay), NOW), Scan::Reject);
        assert_eq!(UniformDhScanner::new(&[0x43; 20]).scan(&hs, None, NOW), Scan::NeedMoreData);
    }

    #[test]
    fn uniformdh_truncated_waits_forever() {
        let key = [7u8; 20];
        let kp = UniformDhKeypair::generate(&mut rand::rng());
        let hs = build_uniformdh_handshake(&key, &kp, 0, epoch_at(NOW)).unwrap();
        let mut scanner = UniformDhScanner::new(&key);
        for _ in 0..3 {
            assert_eq!(scanner.scan(&hs[..207], None, NOW), Scan::NeedMoreData);
        }
    }

    #[test]
    fn same_bridge_key_gives_distinct_handshakes() {
        let key = [9u8; 20];
        let mut rng = rand::rng();
        let a = UniformDhKeypair::generate(&mut rng);
        let b = UniformDhKeypair::generate(&mut rng);
        let e = epoch_at(NOW);
        assert_ne!(
            build_uniformdh_handshake(&key, &a, 10, e).unwrap(),
            build_uniformdh_handshake(&key, &b, 10, e).unwrap()
        );
    }
}
