use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use scramblesuit::descriptor::BridgeDescriptor;
use scramblesuit_cli::config::{create_secret, load_secret};
use scramblesuit_cli::{run_client, run_server, ClientOptions, ServerOptions, Settings};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "scramblesuit", version, about = "Polymorphic, probe-resistant TCP proxy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accept SOCKS5 locally and tunnel to a bridge.
    Client(Common),
    /// Accept tunnels and forward them to an upstream service.
    Server(Common),
    /// Create a bridge secret in the state directory and print its descriptor.
    Genkey(Describe),
    /// Print the descriptor line for an existing state directory.
    Descriptor(Describe),
}

#[derive(Args)]
struct Common {
    /// TOML file with any of the options below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Local address to listen on.
    #[arg(long)]
    listen: Option<String>,
    /// Bridge descriptor line, or HOST:PORT together with --password.
    #[arg(long)]
    bridge: Option<String>,
    /// Base32 bridge secret.
    #[arg(long)]
    password: Option<String>,
    /// Address the server forwards authenticated connections to.
    #[arg(long)]
    upstream: Option<String>,
    /// Directory for secrets, ticket keys and cached tickets.
    #[arg(long)]
    state_dir: Option<PathBuf>,
    /// Makes traffic shapes reproducible.
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds an unauthenticated connection may stay idle.
    #[arg(long)]
    idle_timeout: Option<u64>,
}

#[derive(Args)]
struct Describe {
    #[arg(long)]
    state_dir: PathBuf,
    /// Public address clients should dial.
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 443)]
    port: u16,
}

impl Common {
    fn settings(self) -> Result<Settings> {
        let flags = Settings {
            listen: self.listen,
            bridge: self.bridge,
            password: self.password,
            upstream: self.upstream,
            state_dir: self.state_dir,
            seed: self.seed,
            idle_timeout: self.idle_timeout,
        };
        Ok(match self.config {
            Some(path) => flags.or(Settings::from_file(&path)?),
            None => flags,
        })
    }
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Client(c) => run_client(ClientOptions::from_settings(&c.settings()?)?).await,
        Command::Server(c) => run_server(ServerOptions::from_settings(&c.settings()?)?).await,
        Command::Genkey(d) => {
            let secret = create_secret(&d.state_dir)?;
            println!("{}", BridgeDescriptor { host: d.host, port: d.port, secret });
            Ok(())
        }
        Command::Descriptor(d) => {
            let secret = load_secret(&d.state_dir).context("reading bridge secret")?;
            println!("{}", BridgeDescriptor { host: d.host, port: d.port, secret });
            Ok(())
        }
    }
}
