//! Minimal SOCKS5 (RFC 1928): no authentication, CONNECT only.

use std::io;
use std::net::{Ipv4Addr, Ipv6Addr, SocketAddr};

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpStream;

const VERSION: u8 = 5;
const NO_AUTH: u8 = 0;
const NO_ACCEPTABLE_METHOD: u8 = 0xff;
const CMD_CONNECT: u8 = 1;
const ATYP_V4: u8 = 1;
const ATYP_DOMAIN: u8 = 3;
const ATYP_V6: u8 = 4;

pub const SUCCEEDED: u8 = 0;
pub const GENERAL_FAILURE: u8 = 1;
pub const NETWORK_UNREACHABLE: u8 = 3;
pub const HOST_UNREACHABLE: u8 = 4;
pub const CONNECTION_REFUSED: u8 = 5;
pub const COMMAND_NOT_SUPPORTED: u8 = 7;
pub const ADDRESS_TYPE_NOT_SUPPORTED: u8 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetAddr {
    Ip(SocketAddr),
    Domain(String, u16),
}

fn protocol_error(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

/// Runs the server side of the greeting and request, returning the
/// requested target. The caller must answer with [`reply`].
pub async fn accept<S>(s: &mut S) -> io::Result<TargetAddr>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let mut head = [0u8; 2];
    s.read_exact(&mut head).await?;
    if head[0] != VERSION {
        return Err(protocol_error("not a SOCKS5 client"));
    }
    let mut methods = vec![0u8; head[1] as usize];
    s.read_exact(&mut methods).await?;
    if !methods.contains(&NO_AUTH) {
        s.write_all(&[VERSION, NO_ACCEPTABLE_METHOD]).await?;
        return Err(protocol_error("client insists on authentication"));
    }
    s.write_all(&[VERSION, NO_AUTH]).await?;

    let mut req = [0u8; 4];
    s.read_exact(&mut req).await?;
    if req[0] != VERSION {
        return Err(protocol_error("bad request version"));
    }
    let target = match req[3] {
        ATYP_V4 => {
            let mut b = [0u8; 6];
            s.read_exact(&mut b).await?;
            let ip = Ipv4Addr::new(b[0], b[1], b[2], b[3]);
            TargetAddr::Ip(SocketAddr::new(ip.into(), u16::from_be_bytes([b[4], b[5]])))
        }
        ATYP_V6 => {
            let mut b = [0u8; 18];
            s.read_exact(&mut b).await?;
            let ip: [u8; 16] = b[..16].try_into().unwrap();
            let port = u16::from_be_bytes([b[16], b[17]]);
            TargetAddr::Ip(SocketAddr::new(Ipv6Addr::from(ip).into(), port))
        }
        ATYP_DOMAIN => {
            let len = s.read_u8().await? as usize;
            let mut name = vec![0u8; len];
            s.read_exact(&mut name).await?;
            let port = s.read_u16().await?;
            let name = String::from_utf8(name).map_err(|_| protocol_error("domain is not UTF-8"))?;
            TargetAddr::Domain(name, port)
        }
        _ => {
            reply(s, ADDRESS_TYPE_NOT_SUPPORTED, None).await?;
            return Err(protocol_error("unknown address type"));
        }
    };
    if req[1] != CMD_CONNECT {
        reply(s, COMMAND_NOT_SUPPORTED, None).await?;
        return Err(protocol_error("only CONNECT is supported"));
    }
    Ok(target)
}

pub async fn reply<S>(s: &mut S, code: u8, bound: Option<SocketAddr>) -> io::Result<()>
where
    S: AsyncWrite + Unpin,
{
    let bound = bound.unwrap_or_else(|| SocketAddr::from(([0, 0, 0, 0], 0)));
    let mut out = vec![VERSION, code, 0];
    match bound {
        SocketAddr::V4(a) => {
            out.push(ATYP_V4);
            out.extend_from_slice(&a.ip().octets());
        }
        SocketAddr::V6(a) => {
            out.push(ATYP_V6);
            out.extend_from_slice(&a.ip().octets());
        }
    }
    out.extend_from_slice(&bound.port().to_be_bytes());
    s.write_all(&out).await
}

/// Reply code describing a failed outbound connection.
pub fn reply_code(err: &io::Error) -> u8 {
    match err.kind() {
        io::ErrorKind::ConnectionRefused => CONNECTION_REFUSED,
        io::ErrorKind::HostUnreachable => HOST_UNREACHABLE,
        io::ErrorKind::NetworkUnreachable => NETWORK_UNREACHABLE,
        io::ErrorKind::TimedOut => HOST_UNREACHABLE,
        _ => GENERAL_FAILURE,
    }
}

/// Client side: connects through the proxy at `proxy` to `target`.
pub async fn dial(proxy: SocketAddr, target: &TargetAddr) -> io::Result<TcpStream> {
    let mut s = TcpStream::connect(proxy).await?;
    s.write_all(&[VERSION, 1, NO_AUTH]).await?;
    let mut choice = [0u8; 2];
    s.read_exact(&mut choice).await?;
    if choice != [VERSION, NO_AUTH] {
        return Err(protocol_error("proxy refused unauthenticated access"));
    }
    let mut req = vec![VERSION, CMD_CONNECT, 0];
    match target {
        TargetAddr::Ip(SocketAddr::V4(a)) => {
            req.push(ATYP_V4);
            req.extend_from_slice(&a.ip().octets());
            req.extend_from_slice(&a.port().to_be_bytes());
        }
        TargetAddr::Ip(SocketAddr::V6(a)) => {
            req.push(ATYP_V6);
            req.extend_from_slice(&a.ip().octets());
            req.extend_from_slice(&a.port().to_be_bytes());
        }
        TargetAddr::Domain(name, port) => {
            let len = u8::try_from(name.len()).map_err(|_| protocol_error("domain too long"))?;
            req.push(ATYP_DOMAIN);
            req.push(len);
            req.extend_from_slice(name.as_bytes());
            req.extend_from_slice(&port.to_be_bytes());
        }
    }
    s.write_all(&req).await?;
    let mut head = [0u8; 4];
    s.read_exact(&mut head).await?;
    let rest = match head[3] {
        ATYP_V4 => 6,
        ATYP_V6 => 18,
        _ => return Err(protocol_error("unexpected bound address type")),
    };
    let mut skip = vec![0u8; rest];
    s.read_exact(&mut skip).await?;
    if head[1] != SUCCEEDED {
        return Err(io::Error::other(format!("SOCKS5 request failed with code {}", head[1])));
    }
    Ok(s)
}
