//! Per-connection protocol state machines.
//!
//! [`ClientSession`] and [`ServerSession`] are sans-I/O: they consume bytes
//! read from the network and the local application, and return bytes to
//! deliver plus [`WireWrite`]s to send. The caller owns sockets and timers and
//! must sleep for each write's `delay` before sending it.
//!
//! Message sequence for a ticket redemption:
//!
//! ```text
//! client                                server
//!   ticket || P || MAC  ------------->
//!   [data]              ------------->
//!                       <-------------  NEW_TICKET(k', T')
//!   TICKET_ACK [|PAYLOAD] ----------->
//!   data                <------------>  data
//! ```
//!
//! UniformDH inserts the server's `Y || P || MAC` reply before `NEW_TICKET`,
//! and the client holds back data until it has derived the session keys.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::crypto::{derive_session_keys, MasterKey, Role};
use crate::descriptor::BridgeSecret;
use crate::error::{Error, Result};
use crate::framing::{
    make_data_messages, FrameCodec, Flags, ProtocolMessage, NEW_TICKET_PAYLOAD_LEN,
};
use crate::handshake::{
    build_ticket_handshake, build_uniformdh_handshake, write_private, Clock, Epoch, ReplayCache,
    Scan, SessionTicket, TicketKeyStore, TicketScanner, UniformDhKeypair, UniformDhScanner,
    TICKET_LEN, TICKET_LIFETIME_SECS,
};
use crate::morphing::Morpher;

/// One delayed batch of wire bytes. Each frame is written separately.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WireWrite {
    pub delay: Duration,
    pub frames: Vec<Vec<u8>>,
}

impl WireWrite {
    pub fn len(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn concat(&self) -> Vec<u8> {
        self.frames.concat()
    }
}

/// Result of one [`Session::pump`] call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pumped {
    /// Application bytes to deliver locally.
    pub app: Vec<u8>,
    pub wire: Vec<WireWrite>,
}

impl Pumped {
    pub fn wire_bytes(&self) -> Vec<u8> {
        self.wire.iter().flat_map(|w| w.concat()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitHandshake,
    AwaitNewTicket,
    Established,
    /// Integrity or authentication failure; nothing is ever emitted again.
    Poisoned,
}

/// Common driver interface of both endpoints.
pub trait Session {
    /// Feeds received wire bytes and outbound application bytes.
    fn pump(&mut self, wire_in: &[u8], app_in: &[u8]) -> Pumped;

    fn phase(&self) -> Phase;

    /// Connection teardown.
    fn close(&mut self) {}

    fn is_poisoned(&self) -> bool {
        self.phase() == Phase::Poisoned
    }
}

/// A redeemable ticket together with the master key it embeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredTicket {
    pub master: MasterKey,
    pub ticket: SessionTicket,
    pub issued_at: u64,
}

impl StoredTicket {
    pub fn is_fresh(&self, now: u64) -> bool {
        now.saturating_sub(self.issued_at) < TICKET_LIFETIME_SECS
    }
}

/// Client-side tickets, at most one per bridge.
///
/// File layout: a sequence of records, integers big-endian:
///
/// ```text
/// id_len u16 | bridge id (UTF-8) | master 32B | ticket 80B | issued_at u64
/// ```
#[derive(Debug, Default)]
pub struct ClientTicketStore {
    path: Option<PathBuf>,
    entries: BTreeMap<String, StoredTicket>,
}

impl ClientTicketStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the store at `path`; a missing file is an empty store.
    pub fn open(path: &Path) -> Result<Self> {
        let entries = match fs::read(path) {
            Ok(bytes) => Self::decode(&bytes)?,
            Err(e) if e.kind() == ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(ClientTicketStore { path: Some(path.to_path_buf()), entries })
    }

    fn decode(mut bytes: &[u8]) -> Result<BTreeMap<String, StoredTicket>> {
        let bad = || Error::TicketStore("corrupt client ticket file".into());
        let mut out = BTreeMap::new();
        while !bytes.is_empty() {
            if bytes.len() < 2 {
                return Err(bad());
            }
            let id_len = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
            let rec_len = 2 + id_len + 32 + TICKET_LEN + 8;
            if bytes.len() < rec_len {
                return Err(bad());
            }
            let id = std::str::from_utf8(&bytes[2..2 + id_len]).map_err(|_| bad())?;
            let rest = &bytes[2 + id_len..rec_len];
            let master = MasterKey::from_slice(&rest[..32])?;
            let ticket = SessionTicket::from_slice(&rest[32..32 + TICKET_LEN]).ok_or_else(bad)?;
            let issued_at = u64::from_be_bytes(rest[32 + TICKET_LEN..].try_into().unwrap());
            out.insert(id.to_string(), StoredTicket { master, ticket, issued_at });
            bytes = &bytes[rec_len..];
        }
        Ok(out)
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (id, t) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_be_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(t.master.as_bytes());
            out.extend_from_slice(t.ticket.as_bytes());
            out.extend_from_slice(&t.issued_at.to_be_bytes());
        }
        out
    }

    fn persist(&self) -> Result<()> {
        match &self.path {
            Some(path) => write_private(path, &self.encode()),
            None => Ok(()),
        }
    }

    /// Removes and returns the bridge's ticket; a ticket is never used twice.
    /// Expired tickets are discarded.
    pub fn take(&mut self, bridge_id: &str, now: u64) -> Result<Option<StoredTicket>> {
        let taken = self.entries.remove(bridge_id);
        if taken.is_some() {
            self.persist()?;
        }
        Ok(taken.filter(|t| t.is_fresh(now)))
    }

    pub fn put(&mut self, bridge_id: &str, ticket: StoredTicket) -> Result<()> {
        self.entries.insert(bridge_id.to_string(), ticket);
        self.persist()
    }

    pub fn get(&self, bridge_id: &str) -> Option<&StoredTicket> {
        self.entries.get(bridge_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// What a client may authenticate with.
#[derive(Debug, Clone, Default)]
pub struct ClientCredentials {
    pub bridge_secret: Option<BridgeSecret>,
    pub ticket: Option<StoredTicket>,
}

fn encode_all(codec: &mut FrameCodec, msgs: &[ProtocolMessage]) -> Vec<Vec<u8>> {
    msgs.iter()
        .map(|m| codec.encode(m).expect("session builds only valid messages"))
        .collect()
}

pub struct ClientSession {
    phase: Phase,
    morpher: Morpher,
    clock: Arc<dyn Clock>,
    dh: Option<(UniformDhKeypair, UniformDhScanner)>,
    inbound: Vec<u8>,
    codec: Option<FrameCodec>,
    held_app: Vec<u8>,
    ack_due: bool,
    new_ticket: Option<StoredTicket>,
}

impl ClientSession {
    /// Starts a connection: ticket redemption when a ticket is available,
    /// UniformDH otherwise. Returns the session and its handshake write.
    pub fn connect(
        creds: ClientCredentials,
        mut morpher: Morpher,
        clock: Arc<dyn Clock>,
    ) -> Result<(Self, WireWrite)> {
        let now = clock.now();
        let epoch = Epoch::from_unix(now);
        let padding = morpher.handshake_padding();
        let (phase, dh, codec, handshake) = match (creds.ticket, creds.bridge_secret) {
            (Some(stored), _) => {
                let hs = build_ticket_handshake(&stored.master, &stored.ticket, padding, epoch)?;
                let codec = FrameCodec::new(&derive_session_keys(&stored.master, Role::Client));
                (Phase::AwaitNewTicket, None, Some(codec), hs)
            }
            (None, Some(secret)) => {
                let kp = UniformDhKeypair::generate(&mut rand::rng());
                let hs = build_uniformdh_handshake(secret.as_bytes(), &kp, padding, epoch)?;
                let scanner = UniformDhScanner::new(secret.as_bytes());
                (Phase::AwaitHandshake, Some((kp, scanner)), None, hs)
            }
            (None, None) => {
                return Err(Error::Config("need a bridge secret or a session ticket".into()))
            }
        };
        let write = WireWrite { delay: morpher.next_delay(), frames: vec![handshake] };
        let session = ClientSession {
            phase,
            morpher,
            clock,
            dh,
            inbound: Vec::new(),
            codec,
            held_app: Vec::new(),
            ack_due: false,
            new_ticket: None,
        };
        Ok((session, write))
    }

    /// Ticket received from the server, once the acknowledgement has been
    /// produced. Taking it leaves `None` behind.
    pub fn take_new_ticket(&mut self) -> Option<StoredTicket> {
        if self.ack_due {
            return None;
        }
        self.new_ticket.take()
    }

    pub fn morpher(&self) -> &Morpher {
        &self.morpher
    }

    fn poison(&mut self) {
        self.phase = Phase::Poisoned;
        self.codec = None;
        self.dh = None;
        self.inbound = Vec::new();
        self.held_app = Vec::new();
    }

    fn absorb(&mut self, wire_in: &[u8], app_out: &mut Vec<u8>) {
        let mut wire_in = wire_in;
        let leftover;
        if self.phase == Phase::AwaitHandshake {
            self.inbound.extend_from_slice(wire_in);
            let (kp, scanner) = self.dh.as_mut().expect("UniformDH state while awaiting handshake");
            match scanner.scan(&self.inbound, None, self.clock.now()) {
                Scan::NeedMoreData => return,
                Scan::Reject => return self.poison(),
                Scan::Accepted { value, consumed } => {
                    let Ok(master) = kp.shared(&value.peer_public) else {
                        return self.poison();
                    };
                    self.codec = Some(FrameCodec::new(&derive_session_keys(&master, Role::Client)));
                    self.phase = Phase::AwaitNewTicket;
                    self.dh = None;
                    leftover = self.inbound.split_off(consumed);
                    self.inbound = Vec::new();
                    wire_in = &leftover;
                }
            }
        }
        let Some(codec) = self.codec.as_mut() else { return };
        codec.decoder.feed(wire_in);
        loop {
            match codec.decoder.next_message() {
                Ok(None) => break,
                Err(_) => return self.poison(),
                Ok(Some(msg)) => {
                    if msg.flags.contains(Flags::TICKET_ACK) {
                        return self.poison();
                    }
                    if msg.flags.contains(Flags::NEW_TICKET) {
                        let master = MasterKey::from_slice(&msg.payload[..32]);
                        let ticket = SessionTicket::from_slice(&msg.payload[32..]);
                        let (Ok(master), Some(ticket)) = (master, ticket) else {
                            return self.poison();
                        };
                        self.new_ticket =
                            Some(StoredTicket { master, ticket, issued_at: self.clock.now() });
                        self.ack_due = true;
                        self.phase = Phase::Established;
                    }
                    if msg.flags.contains(Flags::PAYLOAD) {
                        app_out.extend_from_slice(&msg.payload);
                    }
                }
            }
        }
    }

    fn emit(&mut self, app_in: &[u8]) -> Option<WireWrite> {
        let Some(codec) = self.codec.as_mut() else {
            self.held_app.extend_from_slice(app_in);
            return None;
        };
        let mut data = std::mem::take(&mut self.held_app);
        data.extend_from_slice(app_in);
        if data.is_empty() && !self.ack_due {
            return None;
        }
        let mut msgs = make_data_messages(&data, &self.morpher.morph_lengths(data.len()));
        if self.ack_due {
            self.ack_due = false;
            match msgs.first_mut() {
                Some(first) => first.flags |= Flags::TICKET_ACK,
                None => {
                    let padding = self.morpher.sample_length();
                    msgs.push(ProtocolMessage::new(Flags::TICKET_ACK, Vec::new(), padding));
                }
            }
        }
        let frames = encode_all(codec, &msgs);
        Some(WireWrite { delay: self.morpher.next_delay(), frames })
    }
}

impl Session for ClientSession {
    fn pump(&mut self, wire_in: &[u8], app_in: &[u8]) -> Pumped {
        let mut out = Pumped::default();
        if self.phase == Phase::Poisoned {
            return out;
        }
        if !wire_in.is_empty() {
            self.absorb(wire_in, &mut out.app);
        }
        if self.phase == Phase::Poisoned {
            return Pumped::default();
        }
        out.wire.extend(self.emit(app_in));
        out
    }

    fn phase(&self) -> Phase {
        self.phase
    }
}

/// State shared by every connection a server accepts.
pub struct ServerContext {
    bridge_secret: BridgeSecret,
    ticket_keys: Mutex<TicketKeyStore>,
    replay: Mutex<ReplayCache>,
    clock: Arc<dyn Clock>,
    key_file: Option<PathBuf>,
}

impl ServerContext {
    pub fn new(bridge_secret: BridgeSecret, clock: Arc<dyn Clock>) -> Self {
        let keys = TicketKeyStore::new(clock.now());
        Self::with_keys(bridge_secret, keys, clock)
    }

    pub fn with_keys(bridge_secret: BridgeSecret, keys: TicketKeyStore, clock: Arc<dyn Clock>) -> Self {
        ServerContext {
            bridge_secret,
            ticket_keys: Mutex::new(keys),
            replay: Mutex::new(ReplayCache::new()),
            clock,
            key_file: None,
        }
    }

    /// Loads ticket keys from `key_file`, creating it if absent. Rotations are
    /// written back to the same file.
    pub fn persistent(bridge_secret: BridgeSecret, key_file: &Path, clock: Arc<dyn Clock>) -> Result<Self> {
        let keys = match TicketKeyStore::load(key_file) {
            Ok(keys) => keys,
            Err(Error::Io(_)) if !key_file.exists() => {
                let keys = TicketKeyStore::new(clock.now());
                keys.save(key_file)?;
                keys
            }
            Err(e) => return Err(e),
        };
        let mut ctx = Self::with_keys(bridge_secret, keys, clock);
        ctx.key_file = Some(key_file.to_path_buf());
        ctx.rotate_if_due();
        Ok(ctx)
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn bridge_secret(&self) -> &BridgeSecret {
        &self.bridge_secret
    }

    pub fn ticket_keys(&self) -> std::sync::MutexGuard<'_, TicketKeyStore> {
        self.ticket_keys.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn replay_cache(&self) -> std::sync::MutexGuard<'_, ReplayCache> {
        self.replay.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn rotate_if_due(&self) {
        let mut keys = self.ticket_keys();
        if keys.rotate_if_due(self.clock.now()) {
            if let Some(path) = &self.key_file {
                if let Err(err) = keys.save(path) {
                    // Keys stay valid in memory; only restart continuity suffers.
                    eprintln!("failed to persist rotated ticket keys: {err}");
                }
            }
        }
    }

    fn arm_replay(&self, master: &MasterKey) {
        let epoch = Epoch::from_unix(self.clock.now());
        self.replay_cache().insert(ReplayCache::master_key(master), epoch);
    }
}

pub struct ServerSession {
    ctx: Arc<ServerContext>,
    phase: Phase,
    morpher: Morpher,
    inbound: Vec<u8>,
    ticket_scanner: TicketScanner,
    dh_scanner: UniformDhScanner,
    codec: Option<FrameCodec>,
    redeemed: Option<MasterKey>,
    replay_armed: bool,
    held_app: Vec<u8>,
}

impl ServerSession {
    pub fn new(ctx: Arc<ServerContext>, morpher: Morpher) -> Self {
        let dh_scanner = UniformDhScanner::new(ctx.bridge_secret.as_bytes());
        ServerSession {
            ctx,
            phase: Phase::AwaitHandshake,
            morpher,
            inbound: Vec::new(),
            ticket_scanner: TicketScanner::new(),
            dh_scanner,
            codec: None,
            redeemed: None,
            replay_armed: false,
            held_app: Vec::new(),
        }
    }

    pub fn is_authenticated(&self) -> bool {
        matches!(self.phase, Phase::AwaitNewTicket | Phase::Established)
    }

    pub fn replay_armed(&self) -> bool {
        self.replay_armed
    }

    pub fn morpher(&self) -> &Morpher {
        &self.morpher
    }

    fn poison(&mut self) {
        self.phase = Phase::Poisoned;
        self.codec = None;
        self.inbound = Vec::new();
        self.held_app = Vec::new();
    }

    /// Runs both scanners over everything received so far. On success
    /// returns the handshake reply frames (empty for tickets) and the
    /// number of bytes the handshake occupied.
    fn try_authenticate(&mut self) -> Option<(MasterKey, Vec<Vec<u8>>, usize)> {
        self.ctx.rotate_if_due();
        let now = self.ctx.clock.now();
        let ticket = {
            let keys = self.ctx.ticket_keys();
            let replay = self.ctx.replay_cache();
            self.ticket_scanner.scan(&self.inbound, &keys, &replay, now)
        };
        if let Scan::Accepted { value, consumed } = ticket {
            self.redeemed = Some(value.clone());
            return Some((value, Vec::new(), consumed));
        }
        let dh = {
            let mut replay = self.ctx.replay_cache();
            self.dh_scanner.scan(&self.inbound, Some(&mut replay), now)
        };
        match (ticket, dh) {
            (_, Scan::Accepted { value, consumed }) => {
                let kp = UniformDhKeypair::generate(&mut rand::rng());
                let master = kp.shared(&value.peer_public).ok()?;
                let padding = self.morpher.handshake_padding();
                let reply = build_uniformdh_handshake(
                    self.ctx.bridge_secret.as_bytes(),
                    &kp,
                    padding,
                    Epoch::from_unix(now),
                )
                .ok()?;
                Some((master, vec![reply], consumed))
            }
            (Scan::Reject, Scan::Reject) => {
                self.poison();
                None
            }
            _ => None,
        }
    }

    fn new_ticket_message(&mut self) -> ProtocolMessage {
        let now = self.ctx.clock.now();
        let next = MasterKey::generate();
        let ticket = self.ctx.ticket_keys().issue_ticket(&next, now);
        let mut payload = Vec::with_capacity(NEW_TICKET_PAYLOAD_LEN);
        payload.extend_from_slice(next.as_bytes());
        payload.extend_from_slice(ticket.as_bytes());
        let padding = self.morpher.sample_length().saturating_sub(NEW_TICKET_PAYLOAD_LEN);
        ProtocolMessage::new(Flags::NEW_TICKET, payload, padding)
    }

    fn absorb(&mut self, wire_in: &[u8], app_out: &mut Vec<u8>, wire_out: &mut Vec<WireWrite>) {
        let mut wire_in = wire_in;
        let leftover;
        if self.phase == Phase::AwaitHandshake {
            self.inbound.extend_from_slice(wire_in);
            let Some((master, mut frames, consumed)) = self.try_authenticate() else {
                return;
            };
            let mut codec = FrameCodec::new(&derive_session_keys(&master, Role::Server));
            let ticket_msg = self.new_ticket_message();
            frames.push(codec.encode(&ticket_msg).expect("valid ticket message"));
            wire_out.push(WireWrite { delay: self.morpher.next_delay(), frames });
            self.codec = Some(codec);
            self.phase = Phase::AwaitNewTicket;
            leftover = self.inbound.split_off(consumed);
            self.inbound = Vec::new();
            wire_in = &leftover;
        }
        let Some(codec) = self.codec.as_mut() else { return };
        codec.decoder.feed(wire_in);
        loop {
            match codec.decoder.next_message() {
                Ok(None) => break,
                Err(_) => return self.poison(),
                Ok(Some(msg)) => {
                    if msg.flags.contains(Flags::NEW_TICKET) {
                        return self.poison();
                    }
                    if msg.flags.contains(Flags::TICKET_ACK) && self.phase == Phase::AwaitNewTicket {
                        self.phase = Phase::Established;
                        if let Some(master) = &self.redeemed {
                            self.ctx.arm_replay(master);
                            self.replay_armed = true;
                        }
                    }
                    if msg.flags.contains(Flags::PAYLOAD) {
                        app_out.extend_from_slice(&msg.payload);
                    }
                }
            }
        }
    }

    fn emit(&mut self, app_in: &[u8]) -> Option<WireWrite> {
        let Some(codec) = self.codec.as_mut() else {
            self.held_app.extend_from_slice(app_in);
            return None;
        };
        let mut data = std::mem::take(&mut self.held_app);
        data.extend_from_slice(app_in);
        if data.is_empty() {
            return None;
        }
        let msgs = make_data_messages(&data, &self.morpher.morph_lengths(data.len()));
        let frames = encode_all(codec, &msgs);
        Some(WireWrite { delay: self.morpher.next_delay(), frames })
    }
}

impl Session for ServerSession {
    fn pump(&mut self, wire_in: &[u8], app_in: &[u8]) -> Pumped {
        let mut out = Pumped::default();
        if self.phase == Phase::Poisoned {
            return out;
        }
        if !wire_in.is_empty() {
            self.absorb(wire_in, &mut out.app, &mut out.wire);
        }
        if self.phase == Phase::Poisoned {
            return Pumped::default();
        }
        out.wire.extend(self.emit(app_in));
        out
    }

    fn phase(&self) -> Phase {
        self.phase
    }

    /// A redeemed ticket whose acknowledgement never arrived is cached now.
    fn close(&mut self) {
        if !self.replay_armed {
            if let Some(master) = &self.redeemed {
                self.ctx.arm_replay(master);
                self.replay_armed = true;
            }
        }
    }
}

impl Drop for ServerSession {
    fn drop(&mut self) {
        self.close();
    }
}
