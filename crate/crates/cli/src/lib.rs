//! Client and server proxies for the ScrambleSuit transport.

pub mod client;
pub mod config;
pub mod relay;
pub mod server;
pub mod socks;

pub use client::{run_client, serve_client};
pub use config::{ClientOptions, ServerOptions, Settings};
pub use server::{run_server, serve_server};
