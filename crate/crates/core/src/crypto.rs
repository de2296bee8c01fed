//! Cryptographic primitives and the per-session key schedule.
//!
//! Everything here is deterministic except [`secure_random`] and
//! [`MasterKey::generate`]. All MACs are HMAC-SHA256 truncated to 128 bits,
//! all encryption is AES-256 in counter mode with a full 16-byte initial
//! counter block.

use std::fmt;

use aes::cipher::{KeyIvInit, StreamCipher as _};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::rngs::OsRng;
use rand::TryRngCore;
use sha2::Sha256;
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::error::{Error, Result};

type HmacSha256 = Hmac<Sha256>;
type Aes256Ctr = ctr::Ctr128BE<aes::Aes256>;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 16;

const SESSION_KEY_LABEL: &[u8] = b"ScrambleSuitKeys";
const HANDSHAKE_KEY_LABEL: &[u8] = b"ScrambleSuitHandshake";
const SESSION_OKM_LEN: usize = 160;

/// The 32-byte shared secret every session key is derived from.
#[derive(Clone, PartialEq, Eq, Hash, Zeroize, ZeroizeOnDrop)]
pub struct MasterKey([u8; KEY_LEN]);

impl MasterKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        MasterKey(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; KEY_LEN] = bytes.try_into().map_err(|_| Error::InvalidKeyLength {
            expected: KEY_LEN,
            actual: bytes.len(),
        })?;
        Ok(MasterKey(arr))
    }

    /// Fresh key from the operating system's CSPRNG.
    pub fn generate() -> Self {
        let mut bytes = [0u8; KEY_LEN];
        fill_random(&mut bytes);
        MasterKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

/// Which end of a connection a key set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Client,
    Server,
}

impl Role {
    pub fn peer(self) -> Role {
        match self {
            Role::Client => Role::Server,
            Role::Server => Role::Client,
        }
    }
}

/// Directional keys for one session.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct SessionKeySet {
    pub send_enc_key: [u8; KEY_LEN],
    pub send_ctr_nonce: [u8; NONCE_LEN],
    pub recv_enc_key: [u8; KEY_LEN],
    pub recv_ctr_nonce: [u8; NONCE_LEN],
    pub send_mac_key: [u8; KEY_LEN],
    pub recv_mac_key: [u8; KEY_LEN],
}

impl fmt::Debug for SessionKeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SessionKeySet(..)")
    }
}

fn hkdf_expand(master: &MasterKey, label: &[u8], out: &mut [u8]) {
    // An absent salt is the RFC 5869 all-zero salt, identical to an empty one.
    let hk = Hkdf::<Sha256>::new(None, master.as_bytes());
    hk.expand(label, out)
        .expect("requested length is far below the HKDF-SHA256 limit");
}

/// Derives the directional key set for `role` from `master`.
///
/// The 160 output bytes are laid out as: C→S key, C→S counter block,
/// S→C key, S→C counter block, C→S MAC key, S→C MAC key.
pub fn derive_session_keys(master: &MasterKey, role: Role) -> SessionKeySet {
    let mut okm = [0u8; SESSION_OKM_LEN];
    hkdf_expand(master, SESSION_KEY_LABEL, &mut okm);

    let mut c2s_enc = [0u8; KEY_LEN];
    let mut c2s_nonce = [0u8; NONCE_LEN];
    let mut s2c_enc = [0u8; KEY_LEN];
    let mut s2c_nonce = [0u8; NONCE_LEN];
    let mut c2s_mac = [0u8; KEY_LEN];
    let mut s2c_mac = [0u8; KEY_LEN];
    c2s_enc.copy_from_slice(&okm[0..32]);
    c2s_nonce.copy_from_slice(&okm[32..48]);
    s2c_enc.copy_from_slice(&okm[48..80]);
    s2c_nonce.copy_from_slice(&okm[80..96]);
    c2s_mac.copy_from_slice(&okm[96..128]);
    s2c_mac.copy_from_slice(&okm[128..160]);
    okm.zeroize();

    let keys = match role {
        Role::Client => SessionKeySet {
            send_enc_key: c2s_enc,
            send_ctr_nonce: c2s_nonce,
            recv_enc_key: s2c_enc,
            recv_ctr_nonce: s2c_nonce,
            send_mac_key: c2s_mac,
            recv_mac_key: s2c_mac,
        },
        Role::Server => SessionKeySet {
            send_enc_key: s2c_enc,
            send_ctr_nonce: s2c_nonce,
            recv_enc_key: c2s_enc,
            recv_ctr_nonce: c2s_nonce,
            send_mac_key: s2c_mac,
            recv_mac_key: c2s_mac,
        },
    };
    c2s_enc.zeroize();
    s2c_enc.zeroize();
    c2s_mac.zeroize();
    s2c_mac.zeroize();
    keys
}

/// Key for the MAC trailing a ticket-redemption handshake.
pub fn handshake_mac_key(master: &MasterKey) -> [u8; KEY_LEN] {
    let mut key = [0u8; KEY_LEN];
    hkdf_expand(master, HANDSHAKE_KEY_LABEL, &mut key);
    key
}

/// Incremental HMAC-SHA256-128.
///
/// Cloning snapshots the running state, which the handshake scanners use to
/// test every candidate message boundary without rehashing the prefix.
#[derive(Clone)]
pub struct Mac128(HmacSha256);

impl Mac128 {
    pub fn new(key: &[u8]) -> Self {
        Mac128(HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length"))
    }

    pub fn update(&mut self, data: &[u8]) {
        self.0.update(data);
    }

    pub fn finalize(self) -> [u8; TAG_LEN] {
        let full = self.0.finalize().into_bytes();
        let mut tag = [0u8; TAG_LEN];
        tag.copy_from_slice(&full[..TAG_LEN]);
        tag
    }

    /// Constant-time comparison against a truncated tag.
    pub fn verify(self, tag: &[u8]) -> bool {
        tag.len() == TAG_LEN && self.0.verify_truncated_left(tag).is_ok()
    }
}

impl fmt::Debug for Mac128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Mac128(..)")
    }
}

/// Full, untruncated HMAC-SHA256.
pub fn hmac_sha256(key: &[u8], data: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

/// HMAC-SHA256 truncated to its first 16 bytes.
pub fn mac128(key: &[u8], data: &[u8]) -> [u8; TAG_LEN] {
    let mut mac = Mac128::new(key);
    mac.update(data);
    mac.finalize()
}

pub fn verify_mac128(key: &[u8], data: &[u8], tag: &[u8]) -> bool {
    let mut mac = Mac128::new(key);
    mac.update(data);
    mac.verify(tag)
}

/// AES-256-CTR keystream for one direction of one session.
///
/// The counter never resets; encryption and decryption are the same call.
#[derive(Clone)]
pub struct StreamCipher(Aes256Ctr);

impl StreamCipher {
    pub fn new(key: &[u8; KEY_LEN], nonce: &[u8; NONCE_LEN]) -> Self {
        StreamCipher(Aes256Ctr::new(key.into(), nonce.into()))
    }

    pub fn apply(&mut self, data: &mut [u8]) {
        self.0.apply_keystream(data);
    }
}

impl fmt::Debug for StreamCipher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("StreamCipher(..)")
    }
}

/// One-shot counter-mode transform with a fresh cipher state.
pub fn stream_cipher(key: &[u8; KEY_LEN], nonce: &[u8; NONCE_LEN], data: &[u8]) -> Vec<u8> {
    let mut out = data.to_vec();
    StreamCipher::new(key, nonce).apply(&mut out);
    out
}

/// Fills `buf` from the OS CSPRNG. An unavailable entropy source is fatal.
pub fn fill_random(buf: &mut [u8]) {
    OsRng
        .try_fill_bytes(buf)
        .expect("operating system entropy source failed");
}

pub fn secure_random(n: usize) -> Vec<u8> {
    let mut buf = vec![0u8; n];
    fill_random(&mut buf);
    buf
}
