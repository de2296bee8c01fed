//! Settings from command-line flags, optionally backed by a TOML file whose
//! keys match the long flag names (`listen`, `bridge`, `password`,
//! `upstream`, `state-dir`, `seed`, `idle-timeout`).

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use scramblesuit::descriptor::{parse_descriptor, BridgeDescriptor, BridgeSecret};
use scramblesuit::flowstats::Tap;
use scramblesuit::handshake::{Clock, SystemClock};
use scramblesuit::morphing::{derive_seed, Morpher};
use serde::Deserialize;

/// Secret file inside a server's state directory.
pub const SECRET_FILE: &str = "bridge-secret";
/// Ticket key file inside a server's state directory.
pub const TICKET_KEY_FILE: &str = "ticket-keys";
/// Client ticket cache inside a client's state directory.
pub const CLIENT_TICKET_FILE: &str = "tickets";

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    pub listen: Option<String>,
    pub bridge: Option<String>,
    pub password: Option<String>,
    pub upstream: Option<String>,
    pub state_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Seconds.
    pub idle_timeout: Option<u64>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Values set in `self` win over those in `fallback`.
    pub fn or(self, fallback: Settings) -> Settings {
        Settings {
            listen: self.listen.or(fallback.listen),
            bridge: self.bridge.or(fallback.bridge),
            password: self.password.or(fallback.password),
            upstream: self.upstream.or(fallback.upstream),
            state_dir: self.state_dir.or(fallback.state_dir),
            seed: self.seed.or(fallback.seed),
            idle_timeout: self.idle_timeout.or(fallback.idle_timeout),
        }
    }

    fn listen_addr(&self) -> Result<SocketAddr> {
        let listen = self.listen.as_deref().ok_or_else(|| anyhow!("--listen is required"))?;
        listen.parse().with_context(|| format!("invalid listen address {listen:?}"))
    }
}

/// Per-connection morphing: seeded from `seed` and the connection index when
/// a seed is configured, fresh randomness otherwise.
pub fn connection_morpher(seed: Option<u64>, role: &str, index: u64) -> Morpher {
    match seed {
        Some(n) => {
            let base = derive_seed(&[0u8; 32], "seed", n);
            Morpher::from_seed(derive_seed(&base, role, index))
        }
        None => Morpher::from_entropy(),
    }
}

#[derive(Clone)]
pub struct ClientOptions {
    pub listen: SocketAddr,
    pub bridge: BridgeDescriptor,
    pub state_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub clock: Arc<dyn Clock>,
    pub tap: Option<Tap>,
}

impl ClientOptions {
    /// `bridge` may be a full descriptor line or a bare `HOST:PORT`; an
    /// explicit `password` replaces the descriptor's secret.
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let bridge = s.bridge.as_deref().ok_or_else(|| anyhow!("--bridge is required"))?;
        let bridge = if bridge.split_whitespace().count() > 1 {
            let mut d = parse_descriptor(bridge)?;
            if let Some(pw) = &s.password {
                d.secret = BridgeSecret::from_base32(pw)?;
            }
            d
        } else {
            let pw = s
                .password
                .as_deref()
                .ok_or_else(|| anyhow!("--password is required with a bare bridge address"))?;
            parse_descriptor(&format!("scramblesuit {bridge} password={pw}"))?
        };
        Ok(ClientOptions {
            listen: s.listen_addr()?,
            bridge,
            state_dir: s.state_dir.clone(),
            seed: s.seed,
            clock: Arc::new(SystemClock),
            tap: None,
        })
    }
}

#[derive(Clone)]
pub struct ServerOptions {
    pub listen: SocketAddr,
    pub upstream: String,
    pub state_dir: PathBuf,
    pub secret: BridgeSecret,
    pub seed: Option<u64>,
    pub idle_timeout: Duration,
    pub clock: Arc<dyn Clock>,
    pub tap: Option<Tap>,
}

impl ServerOptions {
    /// The secret comes from `password` if set, otherwise from the state
    /// directory's secret file.
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let state_dir = s.state_dir.clone().ok_or_else(|| anyhow!("--state-dir is required"))?;
        let secret = match &s.password {
            Some(pw) => BridgeSecret::from_base32(pw)?,
            None => load_secret(&state_dir)?,
        };
        let idle_timeout = match s.idle_timeout {
            Some(0) => bail!("--idle-timeout must be positive"),
            Some(secs) => Duration::from_secs(secs),
            None => DEFAULT_IDLE_TIMEOUT,
        };
        Ok(ServerOptions {
            listen: s.listen_addr()?,
            upstream: s.upstream.clone().ok_or_else(|| anyhow!("--upstream is required"))?,
            state_dir,
            secret,
            seed: s.seed,
            idle_timeout,
            clock: Arc::new(SystemClock),
            tap: None,
        })
    }
}

pub fn load_secret(state_dir: &Path) -> Result<BridgeSecret> {
    let path = state_dir.join(SECRET_FILE);
    let text = fs::read_to_string(&path).with_context(|| {
        format!("no bridge secret at {}; run `scramblesuit genkey` first", path.display())
    })?;
    Ok(BridgeSecret::from_base32(text.trim())?)
}

/// Creates the state directory's secret file, refusing to overwrite one.
pub fn create_secret(state_dir: &Path) -> Result<BridgeSecret> {
    fs::create_dir_all(state_dir)?;
    let path = state_dir.join(SECRET_FILE);
    let secret = BridgeSecret::generate();
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create_new(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
    let mut file = opts
        .open(&path)
        .with_context(|| format!("creating {} (already exists?)", path.display()))?;
    std::io::Write::write_all(&mut file, format!("{}\n", secret.to_base32()).as_bytes())?;
    Ok(secret)
}
