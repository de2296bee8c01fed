//! Server proxy: silent until a client authenticates, then relays to the
//! upstream service.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use scramblesuit::flowstats::Direction;
use scramblesuit::session::{ServerContext, ServerSession, Session};
use tokio::io::AsyncReadExt;
use tokio::net::{TcpListener, TcpStream};
use tracing::{debug, info};

use crate::config::{connection_morpher, ServerOptions, TICKET_KEY_FILE};
use crate::relay::{relay, Pending, TapPoint};

pub async fn run_server(opts: ServerOptions) -> Result<()> {
    let listener = TcpListener::bind(opts.listen)
        .await
        .with_context(|| format!("binding {}", opts.listen))?;
    serve_server(listener, opts).await
}

pub async fn serve_server(listener: TcpListener, opts: ServerOptions) -> Result<()> {
    std::fs::create_dir_all(&opts.state_dir)?;
    let key_file = opts.state_dir.join(TICKET_KEY_FILE);
    let ctx = ServerContext::persistent(opts.secret.clone(), &key_file, opts.clock.clone())
        .with_context(|| format!("loading {}", key_file.display()))?;
    let ctx = Arc::new(ctx);
    let opts = Arc::new(opts);
    info!(listen = %listener.local_addr()?, upstream = %opts.upstream, "server proxy ready");
    let connections = AtomicU64::new(0);
    loop {
        let (wire, peer) = listener.accept().await?;
        ctx.rotate_if_due();
        let index = connections.fetch_add(1, Ordering::Relaxed);
        let (ctx, opts) = (ctx.clone(), opts.clone());
        tokio::spawn(async move {
            if let Err(e) = handle(ctx, opts, wire, index).await {
                debug!(%peer, "connection ended: {e:#}");
            }
        });
    }
}

async fn handle(ctx: Arc<ServerContext>, opts: Arc<ServerOptions>, mut wire: TcpStream, index: u64) -> Result<()> {
    wire.set_nodelay(true)?;
    let mut session = ServerSession::new(ctx, connection_morpher(opts.seed, "server", index));
    let mut buf = vec![0u8; 16 * 1024];
    let first = loop {
        let read = tokio::time::timeout(opts.idle_timeout, wire.read(&mut buf)).await;
        let n = match read {
            Err(_) => {
                debug!("idle timeout before authentication");
                return Ok(());
            }
            Ok(r) => r?,
        };
        if n == 0 {
            return Ok(());
        }
        let out = session.pump(&buf[..n], &[]);
        // Failed or unfinished handshakes keep the connection open and
        // silent; only the idle timeout or the peer ends it.
        if session.is_authenticated() && !session.is_poisoned() {
            break out;
        }
    };

    let upstream = TcpStream::connect(&opts.upstream)
        .await
        .with_context(|| format!("connecting upstream {}", opts.upstream))?;
    upstream.set_nodelay(true)?;
    let tap = opts.tap.clone().map(|tap| TapPoint { tap, outbound: Direction::S2C });
    let pending = Pending { wire: first.wire, app: first.app };
    relay(session, wire, upstream, pending, |_: &mut ServerSession| {}, tap).await?;
    Ok(())
}
