pub mod crypto;
pub mod descriptor;
pub mod error;
pub mod flowstats;
pub mod framing;
pub mod handshake;
pub mod morphing;
pub mod session;
