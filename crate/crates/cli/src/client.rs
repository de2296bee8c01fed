//! Client proxy: SOCKS5 in, ScrambleSuit out.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use scramblesuit::flowstats::Direction;
use scramblesuit::session::{ClientCredentials, ClientSession, ClientTicketStore};
use tokio::net::{TcpListener, TcpStream};
use tracing::{debug, info, warn};

use crate::config::{connection_morpher, ClientOptions, CLIENT_TICKET_FILE};
use crate::relay::{relay, Pending, TapPoint};
use crate::socks;

struct Shared {
    opts: ClientOptions,
    tickets: Mutex<ClientTicketStore>,
    connections: AtomicU64,
}

pub async fn run_client(opts: ClientOptions) -> Result<()> {
    let listener = TcpListener::bind(opts.listen)
        .await
        .with_context(|| format!("binding {}", opts.listen))?;
    serve_client(listener, opts).await
}

/// Accepts SOCKS5 connections on `listener` forever.
pub async fn serve_client(listener: TcpListener, opts: ClientOptions) -> Result<()> {
    let tickets = match &opts.state_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            ClientTicketStore::open(&dir.join(CLIENT_TICKET_FILE))?
        }
        None => ClientTicketStore::in_memory(),
    };
    info!(listen = %listener.local_addr()?, bridge = %opts.bridge.address(), "client proxy ready");
    let shared = Arc::new(Shared { opts, tickets: Mutex::new(tickets), connections: AtomicU64::new(0) });
    loop {
        let (local, peer) = listener.accept().await?;
        let shared = shared.clone();
        tokio::spawn(async move {
            if let Err(e) = handle(shared, local).await {
                debug!(%peer, "connection ended: {e:#}");
            }
        });
    }
}

async fn handle(shared: Arc<Shared>, mut local: TcpStream) -> Result<()> {
    local.set_nodelay(true)?;
    let target = socks::accept(&mut local).await?;
    debug!(?target, "SOCKS request; routing to the configured bridge");

    let bridge = shared.opts.bridge.address();
    let wire = match TcpStream::connect(&bridge).await {
        Ok(s) => s,
        Err(e) => {
            warn!(%bridge, "bridge unreachable: {e}");
            socks::reply(&mut local, socks::reply_code(&e), None).await?;
            return Err(e.into());
        }
    };
    wire.set_nodelay(true)?;
    socks::reply(&mut local, socks::SUCCEEDED, Some(wire.local_addr()?)).await?;

    let now = shared.opts.clock.now();
    let ticket = shared.tickets.lock().unwrap().take(&bridge, now)?;
    debug!(resumed = ticket.is_some(), "starting handshake");
    let creds = ClientCredentials { bridge_secret: Some(shared.opts.bridge.secret.clone()), ticket };
    let index = shared.connections.fetch_add(1, Ordering::Relaxed);
    let morpher = connection_morpher(shared.opts.seed, "client", index);
    let (session, hello) = ClientSession::connect(creds, morpher, shared.opts.clock.clone())?;

    let store = shared.clone();
    let on_inbound = move |s: &mut ClientSession| {
        if let Some(t) = s.take_new_ticket() {
            if let Err(e) = store.tickets.lock().unwrap().put(&bridge, t) {
                warn!("could not store ticket: {e}");
            }
        }
    };
    let tap = shared.opts.tap.clone().map(|tap| TapPoint { tap, outbound: Direction::C2S });
    let pending = Pending { wire: vec![hello], app: Vec::new() };
    relay(session, wire, local, pending, on_inbound, tap).await?;
    Ok(())
}
