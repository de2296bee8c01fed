//! Bridge descriptor lines: `scramblesuit HOST:PORT password=BASE32`.

use std::fmt;
use std::str::FromStr;

use data_encoding::{BASE32, BASE32_NOPAD};

use crate::crypto::fill_random;
use crate::error::{Error, Result};

/// Length of freshly generated bridge secrets.
pub const BRIDGE_SECRET_LEN: usize = 20;

/// The long-lived secret `k_B` keying the UniformDH handshake MAC.
#[derive(Clone, PartialEq, Eq)]
pub struct BridgeSecret(Vec<u8>);

impl BridgeSecret {
    pub fn new(bytes: Vec<u8>) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Descriptor("empty secret".into()));
        }
        Ok(BridgeSecret(bytes))
    }

    pub fn generate() -> Self {
        let mut bytes = vec![0u8; BRIDGE_SECRET_LEN];
        fill_random(&mut bytes);
        BridgeSecret(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Upper-case Base32, unpadded.
    pub fn to_base32(&self) -> String {
        BASE32_NOPAD.encode(&self.0)
    }

    /// Case-insensitive; `=` padding is optional but must be correct if present.
    pub fn from_base32(text: &str) -> Result<Self> {
        if let Some(bad) = text
            .chars()
            .find(|c| !(c.is_ascii_alphabetic() || ('2'..='7').contains(c) || *c == '='))
        {
            return Err(Error::Descriptor(format!("character {bad:?} is not valid Base32")));
        }
        let upper = text.to_ascii_uppercase();
        let decoded = if upper.contains('=') {
            BASE32.decode(upper.as_bytes())
        } else {
            BASE32_NOPAD.decode(upper.as_bytes())
        };
        let bytes = decoded.map_err(|e| Error::Descriptor(format!("malformed Base32 secret: {e}")))?;
        Self::new(bytes)
    }
}

impl fmt::Debug for BridgeSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BridgeSecret({} bytes)", self.0.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeDescriptor {
    pub host: String,
    pub port: u16,
    pub secret: BridgeSecret,
}

impl BridgeDescriptor {
    /// `host:port`, with IPv6 literals bracketed.
    pub fn address(&self) -> String {
        if self.host.contains(':') {
            format!("[{}]:{}", self.host, self.port)
        } else {
            format!("{}:{}", self.host, self.port)
        }
    }
}

impl fmt::Display for BridgeDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scramblesuit {} password={}", self.address(), self.secret.to_base32())
    }
}

impl FromStr for BridgeDescriptor {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        parse_descriptor(line)
    }
}

fn descriptor_err(msg: impl Into<String>) -> Error {
    Error::Descriptor(msg.into())
}

/// Parses a descriptor line. A leading `Bridge` keyword is tolerated.
pub fn parse_descriptor(line: &str) -> Result<BridgeDescriptor> {
    let mut fields = line.split_whitespace().peekable();
    if fields.peek().is_some_and(|f| f.eq_ignore_ascii_case("bridge")) {
        fields.next();
    }
    match fields.next() {
        Some(t) if t.eq_ignore_ascii_case("scramblesuit") => {}
        Some(t) => return Err(descriptor_err(format!("unknown transport {t:?}"))),
        None => return Err(descriptor_err("empty descriptor")),
    }
    let addr = fields.next().ok_or_else(|| descriptor_err("missing HOST:PORT"))?;
    let secret_field = fields.next().ok_or_else(|| descriptor_err("missing password="))?;
    if let Some(extra) = fields.next() {
        return Err(descriptor_err(format!("unexpected trailing field {extra:?}")));
    }

    let (host, port) = addr
        .rsplit_once(':')
        .ok_or_else(|| descriptor_err(format!("{addr:?} is not HOST:PORT")))?;
    let host = host.strip_prefix('[').and_then(|h| h.strip_suffix(']')).unwrap_or(host);
    if host.is_empty() {
        return Err(descriptor_err("empty host"));
    }
    let port: u16 = port
        .parse()
        .ok()
        .filter(|&p| p != 0)
        .ok_or_else(|| descriptor_err(format!("invalid port {port:?}")))?;

    let (key, value) = secret_field
        .split_once('=')
        .ok_or_else(|| descriptor_err("expected password=SECRET"))?;
    if !key.eq_ignore_ascii_case("password") {
        return Err(descriptor_err(format!("expected password=, found {key}=")));
    }
    let secret = BridgeSecret::from_base32(value)?;
    Ok(BridgeDescriptor { host: host.to_string(), port, secret })
}
