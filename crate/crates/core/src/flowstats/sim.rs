//! In-memory transfer harness: a client and an echoing server session joined
//! by a simulated link, with time advanced virtually instead of slept.
//!
//! The application hands the client one write at a time, with write sizes
//! drawn uniformly from `1..=max_app_write`; the echo service behind the
//! server writes back in chunks drawn the same way. Every frame becomes one trace
//! record, timestamped when it would hit the wire.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{overhead_report, Direction, FlowTrace, OverheadReport, TraceRecord};
use crate::descriptor::BridgeSecret;
use crate::error::{Error, Result};
use crate::handshake::{Clock, MockClock};
use crate::morphing::{derive_seed, Morpher};
use crate::session::{
    ClientCredentials, ClientSession, Phase, Pumped, ServerContext, ServerSession, Session,
    WireWrite,
};

/// Fixed wall-clock time seen by the simulated sessions.
const SIM_EPOCH_SECS: u64 = 1_700_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeMode {
    /// First contact with only the bridge secret.
    UniformDh,
    /// Redeem a ticket obtained by an untraced bootstrap connection.
    Ticket,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub link_bytes_per_sec: f64,
    pub latency: Duration,
    pub max_app_write: usize,
    pub handshake: HandshakeMode,
    pub delays: bool,
    /// How many leading wire bytes per direction to keep.
    pub capture_limit: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            link_bytes_per_sec: 12_500_000.0,
            latency: Duration::from_millis(5),
            max_app_write: 2048,
            handshake: HandshakeMode::Ticket,
            delays: true,
            capture_limit: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trace: FlowTrace,
    /// Bytes delivered to applications, both directions counted.
    pub app_bytes_delivered: u64,
    pub report: OverheadReport,
    /// Every delay injected before a flush, both endpoints.
    pub delays: Vec<Duration>,
    pub c2s_capture: Vec<u8>,
    pub s2c_capture: Vec<u8>,
}

impl TrialOutcome {
    pub fn mean_delay(&self) -> Duration {
        if self.delays.is_empty() {
            return Duration::ZERO;
        }
        self.delays.iter().sum::<Duration>() / self.delays.len() as u32
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Side {
    Client,
    Server,
}

/// Delivery time, tie-break sequence, receiving side, bytes.
type Arrival = (u64, u64, Side, Vec<u8>);

struct Link<'a> {
    opts: &'a SimOptions,
    free_at: [u64; 2],
    seq: u64,
    events: BinaryHeap<Reverse<Arrival>>,
    records: Vec<TraceRecord>,
    delays: Vec<Duration>,
    capture: [Vec<u8>; 2],
}

impl Link<'_> {
    /// Schedules `writes` from `from`, serialized behind anything it is
    /// already sending.
    fn send(&mut self, from: Side, now: u64, writes: Vec<WireWrite>) {
        let (idx, dir, to) = match from {
            Side::Client => (0, Direction::C2S, Side::Server),
            Side::Server => (1, Direction::S2C, Side::Client),
        };
        for w in writes {
            self.delays.push(w.delay);
            let mut t = self.free_at[idx].max(now) + w.delay.as_micros() as u64;
            for frame in w.frames {
                self.records.push(TraceRecord { ts_us: t, dir, bytes: frame.len() as u64 });
                let room = self.opts.capture_limit.saturating_sub(self.capture[idx].len());
                self.capture[idx].extend_from_slice(&frame[..room.min(frame.len())]);
                t += (frame.len() as f64 * 1e6 / self.opts.link_bytes_per_sec).ceil() as u64;
                let arrival = t + self.opts.latency.as_micros() as u64;
                self.seq += 1;
                self.events.push(Reverse((arrival, self.seq, to, frame)));
            }
            self.free_at[idx] = t;
        }
    }
}

fn bootstrap_ticket(
    secret: &BridgeSecret,
    ctx: &Arc<ServerContext>,
    clock: &Arc<dyn Clock>,
) -> Result<crate::session::StoredTicket> {
    let creds = ClientCredentials { bridge_secret: Some(secret.clone()), ticket: None };
    let (mut client, hs) = ClientSession::connect(creds, Morpher::from_entropy(), clock.clone())?;
    let mut server = ServerSession::new(ctx.clone(), Morpher::from_entropy());
    let mut c2s = hs.concat();
    for _ in 0..8 {
        let s2c = server.pump(&std::mem::take(&mut c2s), &[]).wire_bytes();
        c2s = client.pump(&s2c, &[]).wire_bytes();
        if let Some(t) = client.take_new_ticket() {
            return Ok(t);
        }
    }
    Err(Error::Stats("bootstrap connection did not yield a ticket"))
}

/// Moves `size` random bytes client → server → client and measures the wire.
///
/// Shapes, delays, write sizes and payload follow from `seed`; key material
/// still comes from the system RNG.
pub fn run_trial(seed: [u8; 32], size: usize, opts: &SimOptions) -> Result<TrialOutcome> {
    if opts.max_app_write == 0 || !opts.link_bytes_per_sec.is_finite() || opts.link_bytes_per_sec <= 0.0 {
        return Err(Error::Config("invalid simulation options".into()));
    }
    let clock: Arc<dyn Clock> = Arc::new(MockClock::new(SIM_EPOCH_SECS));
    let secret = BridgeSecret::generate();
    let ctx = Arc::new(ServerContext::new(secret.clone(), clock.clone()));

    let ticket = match opts.handshake {
        HandshakeMode::UniformDh => None,
        HandshakeMode::Ticket => Some(bootstrap_ticket(&secret, &ctx, &clock)?),
    };
    let morpher = |label| {
        let m = Morpher::from_seed(derive_seed(&seed, label, 0));
        if opts.delays { m } else { m.without_delays() }
    };
    let creds = ClientCredentials { bridge_secret: Some(secret), ticket };
    let (mut client, hello) = ClientSession::connect(creds, morpher("client"), clock)?;
    let mut server = ServerSession::new(ctx, morpher("server"));

    let mut app_rng = ChaCha20Rng::from_seed(derive_seed(&seed, "app", 0));
    let mut payload = vec![0u8; size];
    app_rng.fill_bytes(&mut payload);

    let mut link = Link {
        opts,
        free_at: [0; 2],
        seq: 0,
        events: BinaryHeap::new(),
        records: Vec::new(),
        delays: Vec::new(),
        capture: [Vec::new(), Vec::new()],
    };
    link.send(Side::Client, 0, vec![hello]);

    let mut fed = false;
    let mut echoed = Vec::with_capacity(size);
    let mut received_by_server = 0usize;
    let mut echo_rng = ChaCha20Rng::from_seed(derive_seed(&seed, "echo", 0));
    let mut echo_pending: Vec<u8> = Vec::new();
    let mut echo_chunk: Option<usize> = None;
    let mut feed = |client: &mut ClientSession, link: &mut Link, now: u64| {
        let mut at = 0;
        while at < size {
            let n = app_rng.random_range(1..=opts.max_app_write).min(size - at);
            let out = client.pump(&[], &payload[at..at + n]);
            link.send(Side::Client, now, out.wire);
            at += n;
        }
    };
    if client.phase() != Phase::AwaitHandshake {
        feed(&mut client, &mut link, 0);
        fed = true;
    }

    while let Some(Reverse((now, _, to, bytes))) = link.events.pop() {
        match to {
            Side::Server => {
                let Pumped { app, wire } = server.pump(&bytes, &[]);
                link.send(Side::Server, now, wire);
                received_by_server += app.len();
                echo_pending.extend_from_slice(&app);
                // The echo application writes back in chunks of its own
                // choosing, flushing the tail once everything has arrived.
                loop {
                    let want = *echo_chunk.get_or_insert_with(|| echo_rng.random_range(1..=opts.max_app_write));
                    let n = if echo_pending.len() >= want {
                        want
                    } else if received_by_server == size && !echo_pending.is_empty() {
                        echo_pending.len()
                    } else {
                        break;
                    };
                    echo_chunk = None;
                    let chunk: Vec<u8> = echo_pending.drain(..n).collect();
                    let out = server.pump(&[], &chunk);
                    link.send(Side::Server, now, out.wire);
                }
            }
            Side::Client => {
                let Pumped { app, wire } = client.pump(&bytes, &[]);
                echoed.extend_from_slice(&app);
                link.send(Side::Client, now, wire);
                if !fed && client.phase() != Phase::AwaitHandshake {
                    feed(&mut client, &mut link, now);
                    fed = true;
                }
            }
        }
        if client.is_poisoned() || server.is_poisoned() {
            return Err(Error::Stats("simulated session poisoned"));
        }
    }
    if echoed != payload || received_by_server != size {
        return Err(Error::Stats("echoed bytes differ from the payload"));
    }

    let trace = FlowTrace::from_unsorted(link.records)?;
    let app_bytes_delivered = 2 * size as u64;
    let report = overhead_report(&trace, app_bytes_delivered);
    let [c2s_capture, s2c_capture] = link.capture;
    Ok(TrialOutcome {
        trace,
        app_bytes_delivered,
        report,
        delays: link.delays,
        c2s_capture,
        s2c_capture,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_transfer_roundtrips_in_both_modes() {
        for mode in [HandshakeMode::UniformDh, HandshakeMode::Ticket] {
            let opts = SimOptions { handshake: mode, capture_limit: 64, ..Default::default() };
            let out = run_trial([1; 32], 20_000, &opts).unwrap();
            assert_eq!(out.app_bytes_delivered, 40_000);
            assert!(out.report.total_overhead > 0.0 && out.report.total_overhead < 1.0);
            assert_eq!(out.c2s_capture.len(), 64);
            assert_eq!(out.s2c_capture.len(), 64);
            let first = out.trace.records()[0];
            assert_eq!(first.dir, Direction::C2S);
            let min = if mode == HandshakeMode::Ticket { 96 } else { 208 };
            assert!(first.bytes >= min);
        }
    }

    #[test]
    fn shapes_follow_the_seed() {
        let opts = SimOptions::default();
        let a = run_trial([2; 32], 30_000, &opts).unwrap();
        let b = run_trial([2; 32], 30_000, &opts).unwrap();
        assert_eq!(a.trace.lengths(Direction::C2S), b.trace.lengths(Direction::C2S));
        assert_eq!(a.delays, b.delays);
    }

    #[test]
    fn zero_delay_option() {
        let opts = SimOptions { delays: false, ..Default::default() };
        let out = run_trial([3; 32], 10_000, &opts).unwrap();
        assert!(out.delays.iter().all(|d| d.is_zero()));
        assert_eq!(out.mean_delay(), Duration::ZERO);
    }

    #[test]
    fn empty_transfer() {
        let out = run_trial([4; 32], 0, &SimOptions::default()).unwrap();
        assert_eq!(out.app_bytes_delivered, 0);
        assert!(!out.trace.is_empty());
    }
}
