#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use scramblesuit::descriptor::{BridgeDescriptor, BridgeSecret};
use scramblesuit::handshake::{Clock, SystemClock};
use scramblesuit_cli::socks::{dial, TargetAddr};
use scramblesuit_cli::{serve_client, serve_server, ClientOptions, ServerOptions};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

/// Echoes every connection back to itself.
pub async fn echo_service() -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        loop {
            let Ok((s, _)) = listener.accept().await else { return };
            tokio::spawn(async move {
                let (mut r, mut w) = s.into_split();
                let _ = tokio::io::copy(&mut r, &mut w).await;
                let _ = w.shutdown().await;
            });
        }
    });
    addr
}

pub struct Bridge {
    pub addr: SocketAddr,
    pub secret: BridgeSecret,
    pub task: JoinHandle<anyhow::Result<()>>,
}

pub async fn start_server(
    upstream: SocketAddr,
    state_dir: &Path,
    secret: BridgeSecret,
    idle_timeout: Duration,
    clock: Arc<dyn Clock>,
) -> Bridge {
    let any_port = "127.0.0.1:0".parse().unwrap();
    start_server_at(any_port, upstream, state_dir, secret, idle_timeout, clock, None).await
}

pub async fn start_server_at(
    listen: SocketAddr,
    upstream: SocketAddr,
    state_dir: &Path,
    secret: BridgeSecret,
    idle_timeout: Duration,
    clock: Arc<dyn Clock>,
    seed: Option<u64>,
) -> Bridge {
    let listener = TcpListener::bind(listen).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let opts = ServerOptions {
        listen: addr,
        upstream: upstream.to_string(),
        state_dir: state_dir.to_path_buf(),
        secret: secret.clone(),
        seed,
        idle_timeout,
        clock,
        tap: None,
    };
    let task = tokio::spawn(serve_server(listener, opts));
    Bridge { addr, secret, task }
}

pub async fn start_client(bridge: &Bridge, seed: Option<u64>, state_dir: Option<&Path>) -> SocketAddr {
    start_client_with_clock(bridge, seed, state_dir, Arc::new(SystemClock)).await
}

pub async fn start_client_with_clock(
    bridge: &Bridge,
    seed: Option<u64>,
    state_dir: Option<&Path>,
    clock: Arc<dyn Clock>,
) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let opts = ClientOptions {
        listen: addr,
        bridge: BridgeDescriptor {
            host: bridge.addr.ip().to_string(),
            port: bridge.addr.port(),
            secret: bridge.secret.clone(),
        },
        state_dir: state_dir.map(Path::to_path_buf),
        seed,
        clock,
        tap: None,
    };
    tokio::spawn(serve_client(listener, opts));
    addr
}

/// Sends `data` through the SOCKS proxy and reads the echo back.
pub async fn echo_through(proxy: SocketAddr, data: &[u8]) -> Vec<u8> {
    let target = TargetAddr::Domain("upstream.invalid".into(), 80);
    let s = dial(proxy, &target).await.unwrap();
    let (mut r, mut w) = s.into_split();
    let payload = data.to_vec();
    let writer = tokio::spawn(async move {
        w.write_all(&payload).await.unwrap();
        w.shutdown().await.unwrap();
    });
    let mut back = Vec::with_capacity(data.len());
    r.read_to_end(&mut back).await.unwrap();
    writer.await.unwrap();
    back
}

/// Writes `probe` to a fresh connection and counts the bytes that come back
/// before the server closes or `wait` elapses.
pub async fn probe(addr: SocketAddr, probe: &[u8], wait: Duration) -> usize {
    let mut s = TcpStream::connect(addr).await.unwrap();
    if !probe.is_empty() {
        // The server may drop the connection early; that is fine.
        let _ = s.write_all(probe).await;
    }
    let mut buf = [0u8; 4096];
    let mut got = 0;
    let deadline = tokio::time::Instant::now() + wait;
    loop {
        match tokio::time::timeout_at(deadline, s.read(&mut buf)).await {
            Err(_) | Ok(Ok(0)) | Ok(Err(_)) => return got,
            Ok(Ok(n)) => got += n,
        }
    }
}
