//! Session tickets and the server's rotating ticket keys.
//!
//! Ticket layout (80 bytes):
//!
//! ```text
//! +--------+--------------------------------------------+---------+
//! | iv 16B | AES-256-CTR(master 32B || issued 8B || 0 8B) | tag 16B |
//! +--------+--------------------------------------------+---------+
//! ```
//!
//! `issued` is Unix seconds, big-endian. The tag is HMAC-SHA256-128 over
//! `iv || ciphertext` under the store's MAC key.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use zeroize::{Zeroize, ZeroizeOnDrop};

use super::epoch::SECS_PER_DAY;
use crate::crypto::{
    fill_random, mac128, verify_mac128, MasterKey, StreamCipher, KEY_LEN, NONCE_LEN, TAG_LEN,
};
use crate::error::{Error, Result};

pub const TICKET_LEN: usize = 80;
const PLAINTEXT_LEN: usize = 48;

/// Ticket keys rotate, and tickets expire, after this many seconds.
pub const TICKET_LIFETIME_SECS: u64 = 7 * SECS_PER_DAY;

#[derive(Clone, PartialEq, Eq)]
pub struct SessionTicket(pub [u8; TICKET_LEN]);

impl SessionTicket {
    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(SessionTicket)
    }

    pub fn as_bytes(&self) -> &[u8; TICKET_LEN] {
        &self.0
    }
}

impl fmt::Debug for SessionTicket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionTicket({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct TicketKeyPair {
    pub enc_key: [u8; KEY_LEN],
    pub mac_key: [u8; KEY_LEN],
    #[zeroize(skip)]
    pub created_at: u64,
}

impl TicketKeyPair {
    pub fn generate(created_at: u64) -> Self {
        let mut enc_key = [0u8; KEY_LEN];
        let mut mac_key = [0u8; KEY_LEN];
        fill_random(&mut enc_key);
        fill_random(&mut mac_key);
        TicketKeyPair { enc_key, mac_key, created_at }
    }

    fn open(&self, blob: &[u8; TICKET_LEN]) -> Option<(MasterKey, u64)> {
        let (body, tag) = blob.split_at(TICKET_LEN - TAG_LEN);
        if !verify_mac128(&self.mac_key, body, tag) {
            return None;
        }
        let mut iv = [0u8; NONCE_LEN];
        iv.copy_from_slice(&body[..NONCE_LEN]);
        let mut plain = [0u8; PLAINTEXT_LEN];
        plain.copy_from_slice(&body[NONCE_LEN..]);
        StreamCipher::new(&self.enc_key, &iv).apply(&mut plain);

        let master = MasterKey::from_slice(&plain[..32]).ok();
        let issued = u64::from_be_bytes(plain[32..40].try_into().unwrap());
        let padding_ok = plain[40..].iter().all(|&b| b == 0);
        plain.zeroize();
        match master {
            Some(master) if padding_ok => Some((master, issued)),
            _ => None,
        }
    }
}

impl fmt::Debug for TicketKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TicketKeyPair")
            .field("created_at", &self.created_at)
            .finish_non_exhaustive()
    }
}

/// The server's ticket keys: one current pair that issues and verifies, and
/// optionally the superseded pair that only verifies.
#[derive(Debug, Clone)]
pub struct TicketKeyStore {
    pub current: TicketKeyPair,
    pub superseded: Option<TicketKeyPair>,
    pub rotation_period: u64,
}

impl TicketKeyStore {
    pub fn new(now: u64) -> Self {
        TicketKeyStore {
            current: TicketKeyPair::generate(now),
            superseded: None,
            rotation_period: TICKET_LIFETIME_SECS,
        }
    }

    /// Encrypts `master` and the issue time `now` under the current keys.
    pub fn issue_ticket(&self, master: &MasterKey, now: u64) -> SessionTicket {
        let mut iv = [0u8; NONCE_LEN];
        fill_random(&mut iv);

        let mut blob = [0u8; TICKET_LEN];
        blob[..NONCE_LEN].copy_from_slice(&iv);
        let body = &mut blob[NONCE_LEN..NONCE_LEN + PLAINTEXT_LEN];
        body[..32].copy_from_slice(master.as_bytes());
        body[32..40].copy_from_slice(&now.to_be_bytes());
        StreamCipher::new(&self.current.enc_key, &iv).apply(body);

        let tag = mac128(&self.current.mac_key, &blob[..TICKET_LEN - TAG_LEN]);
        blob[TICKET_LEN - TAG_LEN..].copy_from_slice(&tag);
        SessionTicket(blob)
    }

    /// Returns the embedded master key iff the ticket verifies under the
    /// current or superseded keys and is younger than seven days.
    ///
    /// Every failure mode yields `None`; callers must not tell them apart on
    /// the wire.
    pub fn redeem_ticket(&self, blob: &[u8], now: u64) -> Option<MasterKey> {
        let blob: &[u8; TICKET_LEN] = blob.try_into().ok()?;
        let (master, issued) = std::iter::once(&self.current)
            .chain(self.superseded.as_ref())
            .find_map(|keys| keys.open(blob))?;
        (now.saturating_sub(issued) < TICKET_LIFETIME_SECS).then_some(master)
    }

    /// Rotates the keys once the current pair is a full period old.
    ///
    /// The new pair's creation time is aligned to the period grid so
    /// rotations stay on exact boundaries even when this runs late. Returns
    /// whether a rotation happened.
    pub fn rotate_if_due(&mut self, now: u64) -> bool {
        let age = now.saturating_sub(self.current.created_at);
        if age < self.rotation_period {
            return false;
        }
        let periods = age / self.rotation_period;
        let created = self.current.created_at + periods * self.rotation_period;
        let fresh = TicketKeyPair::generate(created);
        self.superseded = Some(std::mem::replace(&mut self.current, fresh));
        true
    }

    /// Serialized form, see [`TicketKeyStore::load`].
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 * 72 + 9);
        out.extend_from_slice(&self.rotation_period.to_be_bytes());
        write_pair(&mut out, &self.current);
        match &self.superseded {
            Some(pair) => {
                out.push(1);
                write_pair(&mut out, pair);
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::TicketStore("corrupt ticket key file".into());
        if bytes.len() < 8 + 72 + 1 {
            return Err(bad());
        }
        let rotation_period = u64::from_be_bytes(bytes[..8].try_into().unwrap());
        let current = read_pair(&bytes[8..80]);
        let superseded = match (bytes[80], bytes.len()) {
            (0, 81) => None,
            (1, 153) => Some(read_pair(&bytes[81..153])),
            _ => return Err(bad()),
        };
        if rotation_period == 0 {
            return Err(bad());
        }
        Ok(TicketKeyStore { current, superseded, rotation_period })
    }

    /// Loads the key file written by [`TicketKeyStore::save`].
    ///
    /// File layout, all integers big-endian:
    ///
    /// ```text
    /// rotation_period u64 | current pair | has_superseded u8 | [superseded pair]
    /// pair = enc_key 32B | mac_key 32B | created_at u64
    /// ```
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Writes the key file atomically with owner-only permissions.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_private(path, &self.to_bytes())
    }
}

fn write_pair(out: &mut Vec<u8>, pair: &TicketKeyPair) {
    out.extend_from_slice(&pair.enc_key);
    out.extend_from_slice(&pair.mac_key);
    out.extend_from_slice(&pair.created_at.to_be_bytes());
}

fn read_pair(bytes: &[u8]) -> TicketKeyPair {
    TicketKeyPair {
        enc_key: bytes[..32].try_into().unwrap(),
        mac_key: bytes[32..64].try_into().unwrap(),
        created_at: u64::from_be_bytes(bytes[64..72].try_into().unwrap()),
    }
}

/// Replaces `path` with `data` via a temporary sibling file created 0600.
pub(crate) fn write_private(path: &Path, data: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut file = opts.open(&tmp)?;
        file.write_all(data)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: u64 = 1_700_000_000;
    const DAY: u64 = SECS_PER_DAY;

    #[test]
    fn issue_then_redeem_roundtrips() {
        let store = TicketKeyStore::new(T0);
        let master = MasterKey::generate();
        let ticket = store.issue_ticket(&master, T0);
        assert_eq!(ticket.as_bytes().len(), TICKET_LEN);
        assert_eq!(store.redeem_ticket(ticket.as_bytes(), T0), Some(master));
    }

    #[test]
    fn reissued_tickets_differ_in_iv_and_body() {
        let store = TicketKeyStore::new(T0);
        let master = MasterKey::generate();
        for _ in 0..100 {
            let a = store.issue_ticket(&master, T0);
            let b = store.issue_ticket(&master, T0);
            let differing = a.0.iter().zip(b.0.iter()).filter(|(x, y)| x != y).count();
            assert!(differing >= 17, "only {differing} bytes differ");
        }
    }

    #[test]
    fn expiry_boundary() {
        let store = TicketKeyStore::new(T0);
        let master = MasterKey::generate();
        let t = store.issue_ticket(&master, T0);
        assert!(store.redeem_ticket(t.as_bytes(), T0 + 7 * DAY - 1).is_some());
        assert!(store.redeem_ticket(t.as_bytes(), T0 + 7 * DAY).is_none());
        assert!(store.redeem_ticket(t.as_bytes(), T0 + 7 * DAY + 1).is_none());
    }

    #[test]
    fn random_and_truncated_blobs_are_rejected() {
        let store = TicketKeyStore::new(T0);
        for _ in 0..200 {
            let junk = crate::crypto::secure_random(TICKET_LEN);
            assert!(store.redeem_ticket(&junk, T0).is_none());
        }
        let t = store.issue_ticket(&MasterKey::generate(), T0);
        assert!(store.redeem_ticket(&t.0[..79], T0).is_none());
        let mut flipped = t.0;
        flipped[40] ^= 0x10;
        assert!(store.redeem_ticket(&flipped, T0).is_none());
    }

    #[test]
    fn rotation_is_closed_at_seven_days() {
        let mut store = TicketKeyStore::new(T0);
        assert!(!store.rotate_if_due(T0 + 6 * DAY + 23 * 3600));
        assert!(store.superseded.is_none());
        let before = store.current.clone();
        assert!(store.rotate_if_due(T0 + 7 * DAY));
        assert_eq!(store.superseded.as_ref(), Some(&before));
        assert_eq!(store.current.created_at, T0 + 7 * DAY);
        assert!(!store.rotate_if_due(T0 + 7 * DAY + 1));
    }

    #[test]
    fn late_rotation_stays_on_the_grid() {
        let mut store = TicketKeyStore::new(T0);
        assert!(store.rotate_if_due(T0 + 15 * DAY));
        assert_eq!(store.current.created_at, T0 + 14 * DAY);
    }

    #[test]
    fn superseded_keys_redeem_until_expiry_then_vanish() {
        let mut store = TicketKeyStore::new(T0);
        let master = MasterKey::generate();
        let issued = T0 + 3 * DAY;
        let t = store.issue_ticket(&master, issued);

        store.rotate_if_due(T0 + 7 * DAY);
        let late = issued + 6 * DAY + 23 * 3600;
        assert_eq!(store.redeem_ticket(t.as_bytes(), late), Some(master.clone()));

        store.rotate_if_due(T0 + 14 * DAY);
        assert!(store.redeem_ticket(t.as_bytes(), T0 + 14 * DAY).is_none());
    }

    #[test]
    fn store_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys");
        let mut store = TicketKeyStore::new(T0);
        store.rotate_if_due(T0 + 8 * DAY);
        store.save(&path).unwrap();
        let loaded = TicketKeyStore::load(&path).unwrap();
        assert_eq!(loaded.current, store.current);
        assert_eq!(loaded.superseded, store.superseded);
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = fs::metadata(&path).unwrap().permissions().mode();
            assert_eq!(mode & 0o777, 0o600);
        }
        assert!(TicketKeyStore::from_bytes(&[0u8; 10]).is_err());
    }
}
