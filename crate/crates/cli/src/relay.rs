//! Bidirectional relay between a plaintext stream and a session's wire.
//!
//! Three tasks share the session: one reads the application side, one reads
//! the wire, and a single writer owns the wire's write half. Pumping and
//! queueing happen under one lock so frames reach the writer in the order
//! their keystream was consumed.

use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use scramblesuit::flowstats::{Direction, Tap};
use scramblesuit::session::{Phase, Session, WireWrite};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::TcpStream;
use tokio::sync::{mpsc, Mutex, Notify};

/// Largest single read from either side.
pub const READ_CHUNK: usize = 64 * 1024;
const QUEUE_DEPTH: usize = 16;

/// Optional wire recorder; `outbound` is the direction of our own writes.
#[derive(Clone)]
pub struct TapPoint {
    pub tap: Tap,
    pub outbound: Direction,
}

impl TapPoint {
    fn inbound(&self) -> Direction {
        match self.outbound {
            Direction::C2S => Direction::S2C,
            Direction::S2C => Direction::C2S,
        }
    }
}

/// Data produced before the relay started: typically the handshake.
#[derive(Default)]
pub struct Pending {
    pub wire: Vec<WireWrite>,
    pub app: Vec<u8>,
}

async fn write_wire(
    mut rx: mpsc::Receiver<WireWrite>,
    mut wire: OwnedWriteHalf,
    tap: Option<TapPoint>,
) -> io::Result<()> {
    while let Some(write) = rx.recv().await {
        if !write.delay.is_zero() {
            tokio::time::sleep(write.delay).await;
        }
        for frame in &write.frames {
            wire.write_all(frame).await?;
            if let Some(t) = &tap {
                t.tap.record(t.outbound, frame.len());
            }
        }
    }
    wire.shutdown().await
}

async fn enqueue(tx: &mpsc::Sender<WireWrite>, writes: Vec<WireWrite>) -> io::Result<()> {
    for w in writes {
        tx.send(w).await.map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
    }
    Ok(())
}

/// Relays until both directions have finished. `on_inbound` runs under the
/// session lock after every wire read.
///
/// A session that poisons ends the relay at once with nothing further sent.
pub async fn relay<S, F>(
    session: S,
    wire: TcpStream,
    app: TcpStream,
    pending: Pending,
    mut on_inbound: F,
    tap: Option<TapPoint>,
) -> io::Result<()>
where
    S: Session + Send + 'static,
    F: FnMut(&mut S) + Send + 'static,
{
    let session = Arc::new(Mutex::new(session));
    let (mut wire_r, wire_w) = wire.into_split();
    let (mut app_r, mut app_w) = app.into_split();
    let (tx, rx) = mpsc::channel(QUEUE_DEPTH);
    let writer = tokio::spawn(write_wire(rx, wire_w, tap.clone()));
    enqueue(&tx, pending.wire).await?;
    app_w.write_all(&pending.app).await?;

    // Only the application reader keeps the writer alive. After it sees EOF
    // it waits for the handshake to finish, since a client session may still
    // hold data back; then the queue drains and the wire's write half is shut
    // down. Frames the wire reader produces after that point are dropped.
    let weak_tx = tx.downgrade();
    let progress = Arc::new(Notify::new());
    let wire_closed = Arc::new(AtomicBool::new(false));
    let outbound = {
        let session = session.clone();
        let (progress, wire_closed) = (progress.clone(), wire_closed.clone());
        tokio::spawn(async move {
            let mut buf = vec![0u8; READ_CHUNK];
            loop {
                let n = app_r.read(&mut buf).await?;
                if n == 0 {
                    loop {
                        let notified = progress.notified();
                        {
                            let s = session.lock().await;
                            if s.phase() == Phase::Established || s.is_poisoned() {
                                break;
                            }
                        }
                        if wire_closed.load(Ordering::Acquire) {
                            break;
                        }
                        notified.await;
                    }
                    return Ok::<_, io::Error>(());
                }
                let mut s = session.lock().await;
                let out = s.pump(&[], &buf[..n]);
                enqueue(&tx, out.wire).await?;
            }
        })
    };

    let inbound = async {
        let mut buf = vec![0u8; READ_CHUNK];
        loop {
            let n = wire_r.read(&mut buf).await?;
            if n == 0 {
                break;
            }
            if let Some(t) = &tap {
                t.tap.record(t.inbound(), n);
            }
            let app = {
                let mut s = session.lock().await;
                let out = s.pump(&buf[..n], &[]);
                on_inbound(&mut s);
                if s.is_poisoned() {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, "session poisoned"));
                }
                if let Some(tx) = weak_tx.upgrade() {
                    enqueue(&tx, out.wire).await?;
                }
                out.app
            };
            progress.notify_waiters();
            app_w.write_all(&app).await?;
        }
        app_w.shutdown().await
    };
    let result = inbound.await;
    wire_closed.store(true, Ordering::Release);
    progress.notify_waiters();
    if let Err(e) = result {
        outbound.abort();
        writer.abort();
        return Err(e);
    }
    outbound.await.map_err(io::Error::other)??;
    writer.await.map_err(io::Error::other)?
}
