//! Encrypted, authenticated, variable-length protocol messages.
//!
//! Wire layout of one message:
//!
//! ```text
//! +---------+-------------+---------------+----------+---------+---------+
//! | tag 16B | total_len 2 | payload_len 2 | flags 1B | payload | padding |
//! +---------+-------------+---------------+----------+---------+---------+
//!           \____________________ encrypted (AES-256-CTR) _______________/
//! ```
//!
//! The tag is HMAC-SHA256-128 over the encrypted part (encrypt-then-MAC).
//! `total_len` counts payload plus padding, not the 21-byte header. Lengths
//! are big-endian.

use std::fmt;

use crate::crypto::{Mac128, SessionKeySet, StreamCipher, KEY_LEN, TAG_LEN};
use crate::error::{Error, Result};

pub const HEADER_LEN: usize = TAG_LEN + 5;
pub const MAX_BODY_LEN: usize = 1460;
/// `next master key (32) || ticket (80)`.
pub const NEW_TICKET_PAYLOAD_LEN: usize = 32 + crate::handshake::TICKET_LEN;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Flags(u8);

impl Flags {
    pub const PAYLOAD: Flags = Flags(0x01);
    pub const NEW_TICKET: Flags = Flags(0x02);
    pub const TICKET_ACK: Flags = Flags(0x04);
    const DEFINED: u8 = 0x07;

    pub fn from_bits(bits: u8) -> Option<Flags> {
        (bits != 0 && bits & !Self::DEFINED == 0).then_some(Flags(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;
    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

impl std::ops::BitOrAssign for Flags {
    fn bitor_assign(&mut self, rhs: Flags) {
        self.0 |= rhs.0;
    }
}

impl fmt::Debug for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.contains(Flags::PAYLOAD) {
            names.push("PAYLOAD");
        }
        if self.contains(Flags::NEW_TICKET) {
            names.push("NEW_TICKET");
        }
        if self.contains(Flags::TICKET_ACK) {
            names.push("TICKET_ACK");
        }
        write!(f, "Flags({})", names.join("|"))
    }
}

/// One message before encryption. Padding travels as zero bytes and is
/// discarded by the receiver, so only its length is kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub flags: Flags,
    pub payload: Vec<u8>,
    pub padding_len: usize,
}

impl ProtocolMessage {
    pub fn new(flags: Flags, payload: Vec<u8>, padding_len: usize) -> Self {
        ProtocolMessage { flags, payload, padding_len }
    }

    pub fn total_len(&self) -> usize {
        self.payload.len() + self.padding_len
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.total_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_len() > MAX_BODY_LEN {
            return Err(Error::OversizeMessage(self.total_len()));
        }
        if Flags::from_bits(self.flags.0).is_none() {
            return Err(Error::MalformedMessage("invalid flags"));
        }
        if self.flags.contains(Flags::NEW_TICKET) && self.payload.len() != NEW_TICKET_PAYLOAD_LEN {
            return Err(Error::MalformedMessage("ticket message must carry 112 payload bytes"));
        }
        Ok(())
    }
}

/// Sending half: encrypts and authenticates outgoing messages.
pub struct FrameEncoder {
    cipher: StreamCipher,
    mac_key: [u8; KEY_LEN],
}

impl FrameEncoder {
    pub fn new(keys: &SessionKeySet) -> Self {
        FrameEncoder {
            cipher: StreamCipher::new(&keys.send_enc_key, &keys.send_ctr_nonce),
            mac_key: keys.send_mac_key,
        }
    }

    pub fn encode(&mut self, msg: &ProtocolMessage) -> Result<Vec<u8>> {
        msg.validate()?;
        let total = msg.total_len();
        let mut out = vec![0u8; HEADER_LEN + total];
        {
            let body = &mut out[TAG_LEN..];
            body[0..2].copy_from_slice(&(total as u16).to_be_bytes());
            body[2..4].copy_from_slice(&(msg.payload.len() as u16).to_be_bytes());
            body[4] = msg.flags.0;
            body[5..5 + msg.payload.len()].copy_from_slice(&msg.payload);
            self.cipher.apply(body);
        }
        let mut mac = Mac128::new(&self.mac_key);
        mac.update(&out[TAG_LEN..]);
        out[..TAG_LEN].copy_from_slice(&mac.finalize());
        Ok(out)
    }
}

/// Receiving half: reassembles messages from an ordered byte stream.
///
/// The receive cipher only advances once a whole message has verified. Any
/// failure poisons the decoder for good.
pub struct FrameDecoder {
    cipher: StreamCipher,
    mac_key: [u8; KEY_LEN],
    buf: Vec<u8>,
    pos: usize,
    poisoned: bool,
}

impl FrameDecoder {
    pub fn new(keys: &SessionKeySet) -> Self {
        FrameDecoder {
            cipher: StreamCipher::new(&keys.recv_enc_key, &keys.recv_ctr_nonce),
            mac_key: keys.recv_mac_key,
            buf: Vec::new(),
            pos: 0,
            poisoned: false,
        }
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn feed(&mut self, chunk: &[u8]) {
        if self.poisoned {
            return;
        }
        if self.pos > 0 && self.pos * 2 >= self.buf.len() {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(chunk);
    }

    fn poison(&mut self, err: Error) -> Error {
        self.poisoned = true;
        self.buf = Vec::new();
        self.pos = 0;
        err
    }

    /// Next complete message, `Ok(None)` if more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<ProtocolMessage>> {
        if self.poisoned {
            return Err(Error::Poisoned);
        }
        let avail = &self.buf[self.pos..];
        if avail.len() < HEADER_LEN {
            return Ok(None);
        }

        let mut header = [0u8; 5];
        header.copy_from_slice(&avail[TAG_LEN..HEADER_LEN]);
        self.cipher.clone().apply(&mut header);
        let total = u16::from_be_bytes([header[0], header[1]]) as usize;
        let payload_len = u16::from_be_bytes([header[2], header[3]]) as usize;
        if total > MAX_BODY_LEN || payload_len > total {
            return Err(self.poison(Error::MalformedMessage("inconsistent length fields")));
        }
        if avail.len() < HEADER_LEN + total {
            return Ok(None);
        }

        let frame = &avail[..HEADER_LEN + total];
        let mut mac = Mac128::new(&self.mac_key);
        mac.update(&frame[TAG_LEN..]);
        if !mac.verify(&frame[..TAG_LEN]) {
            return Err(self.poison(Error::BadMac));
        }
        let mut body = frame[TAG_LEN..].to_vec();
        self.pos += HEADER_LEN + total;
        self.cipher.apply(&mut body);

        let Some(flags) = Flags::from_bits(body[4]) else {
            return Err(self.poison(Error::MalformedMessage("invalid flags")));
        };
        let payload = body[5..5 + payload_len].to_vec();
        let msg = ProtocolMessage { flags, payload, padding_len: total - payload_len };
        if let Err(err) = msg.validate() {
            return Err(self.poison(err));
        }
        Ok(Some(msg))
    }

    /// Feeds `chunk` and drains every message it completes.
    pub fn decode_stream(&mut self, chunk: &[u8]) -> Result<Vec<ProtocolMessage>> {
        self.feed(chunk);
        let mut out = Vec::new();
        while let Some(msg) = self.next_message()? {
            out.push(msg);
        }
        Ok(out)
    }
}

/// Both halves of one connection's framing state.
pub struct FrameCodec {
    pub encoder: FrameEncoder,
    pub decoder: FrameDecoder,
}

impl FrameCodec {
    pub fn new(keys: &SessionKeySet) -> Self {
        FrameCodec { encoder: FrameEncoder::new(keys), decoder: FrameDecoder::new(keys) }
    }

    pub fn encode(&mut self, msg: &ProtocolMessage) -> Result<Vec<u8>> {
        self.encoder.encode(msg)
    }

    pub fn decode_stream(&mut self, chunk: &[u8]) -> Result<Vec<ProtocolMessage>> {
        self.decoder.decode_stream(chunk)
    }

    pub fn split(self) -> (FrameEncoder, FrameDecoder) {
        (self.encoder, self.decoder)
    }
}

/// Packs `payload` into PAYLOAD messages whose body lengths follow
/// `target_lengths`, splitting or padding as needed.
///
/// Targets left over once the payload is exhausted become padding-only
/// messages; payload left over once the targets are exhausted goes out in
/// maximum-size messages.
pub fn make_data_messages(payload: &[u8], target_lengths: &[usize]) -> Vec<ProtocolMessage> {
    let mut out = Vec::with_capacity(target_lengths.len());
    let mut rest = payload;
    for &target in target_lengths {
        let target = target.clamp(1, MAX_BODY_LEN);
        let take = target.min(rest.len());
        let (head, tail) = rest.split_at(take);
        out.push(ProtocolMessage::new(Flags::PAYLOAD, head.to_vec(), target - take));
        rest = tail;
    }
    for chunk in rest.chunks(MAX_BODY_LEN) {
        out.push(ProtocolMessage::new(Flags::PAYLOAD, chunk.to_vec(), 0));
    }
    out
}
