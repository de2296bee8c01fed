//! Diffie-Hellman over the RFC 3526 1536-bit MODP group with public values
//! that look like uniformly random bytes on the wire.
//!
//! Private exponents are even, so `(p - X)^y == X^y (mod p)`. Each side sends
//! `X` or `p - X` at random, which hides that `X` is a quadratic residue.

use std::fmt;
use std::sync::OnceLock;

use num_bigint::BigUint;
use rand::{CryptoRng, Rng};
use sha2::{Digest, Sha256};

use crate::crypto::MasterKey;
use crate::error::{Error, Result};

pub const PUBLIC_KEY_LEN: usize = 192;

const MODP_1536_HEX: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1\
29024E088A67CC74020BBEA63B139B22514A08798E3404DD\
EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245\
E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D\
C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F\
83655D23DCA3AD961C62F356208552BB9ED529077096966D\
670C354E4ABC9804F1746C08CA237327FFFFFFFFFFFFFFFF";

pub fn modulus() -> &'static BigUint {
    static P: OnceLock<BigUint> = OnceLock::new();
    P.get_or_init(|| BigUint::parse_bytes(MODP_1536_HEX.as_bytes(), 16).expect("valid modulus"))
}

pub const GENERATOR: u32 = 2;

/// Left-zero-padded, fixed-width big-endian encoding.
pub fn encode_element(value: &BigUint) -> [u8; PUBLIC_KEY_LEN] {
    let bytes = value.to_bytes_be();
    debug_assert!(bytes.len() <= PUBLIC_KEY_LEN);
    let mut out = [0u8; PUBLIC_KEY_LEN];
    out[PUBLIC_KEY_LEN - bytes.len()..].copy_from_slice(&bytes);
    out
}

/// Parses a peer's public value, rejecting 0 and anything `>= p`.
pub fn decode_public(wire: &[u8]) -> Result<BigUint> {
    if wire.len() != PUBLIC_KEY_LEN {
        return Err(Error::InvalidKeyLength { expected: PUBLIC_KEY_LEN, actual: wire.len() });
    }
    let value = BigUint::from_bytes_be(wire);
    if value == BigUint::ZERO || &value >= modulus() {
        return Err(Error::MalformedMessage("public value outside the group"));
    }
    Ok(value)
}

#[derive(Clone)]
pub struct UniformDhKeypair {
    private_x: BigUint,
    public_wire: [u8; PUBLIC_KEY_LEN],
}

impl UniformDhKeypair {
    pub fn generate<R: CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let send_complement = rng.random::<bool>();
        Self::generate_with_choice(rng, send_complement)
    }

    /// Like [`generate`](Self::generate) but with the `X` / `p - X` choice
    /// fixed by the caller.
    pub fn generate_with_choice<R: CryptoRng + ?Sized>(rng: &mut R, send_complement: bool) -> Self {
        let mut raw = [0u8; PUBLIC_KEY_LEN];
        rng.fill_bytes(&mut raw);
        raw[PUBLIC_KEY_LEN - 1] &= 0xFE;
        Self::from_private(BigUint::from_bytes_be(&raw), send_complement)
    }

    pub fn from_private(private_x: BigUint, send_complement: bool) -> Self {
        let p = modulus();
        let public = BigUint::from(GENERATOR).modpow(&private_x, p);
        let wire_value = if send_complement { p - &public } else { public };
        UniformDhKeypair { private_x, public_wire: encode_element(&wire_value) }
    }

    pub fn private_x(&self) -> &BigUint {
        &self.private_x
    }

    pub fn public_wire(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.public_wire
    }

    /// Raw shared group element `peer^x mod p`.
    pub fn shared_element(&self, peer_wire: &[u8]) -> Result<BigUint> {
        let peer = decode_public(peer_wire)?;
        Ok(peer.modpow(&self.private_x, modulus()))
    }

    /// Master key: SHA-256 of the 192-byte encoding of the shared element.
    pub fn shared(&self, peer_wire: &[u8]) -> Result<MasterKey> {
        let element = self.shared_element(peer_wire)?;
        let digest = Sha256::digest(encode_element(&element));
        Ok(MasterKey::from_bytes(digest.into()))
    }
}

impl fmt::Debug for UniformDhKeypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UniformDhKeypair").finish_non_exhaustive()
    }
}
