//! Client side of the DNZ1 denoiser bridge protocol.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! handshake  client: "DNZ1" u32 version
//!            server: "DNZ1" u32 version, u8 mode (0 = x0, 1 = eps), u32 channels
//! frame      u8 type, u32 length of the rest
//!   1 request   f32 alpha_bar, u32 t, u32 C, u32 H, u32 W, C*H*W f32
//!   2 response  u32 C, u32 H, u32 W, C*H*W f32
//!   3 error     UTF-8 message
//! ```
//!
//! Pixel values travel in `[-1, 1]`: `2v − 1` on send, `(v + 1) / 2` on receive.
//! A background thread owns the read half so every request has a deadline.

use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use super::Denoiser;
use crate::schedule::NoiseSchedule;
use crate::{Error, Image, Result};

pub const MAGIC: &[u8; 4] = b"DNZ1";
pub const PROTOCOL_VERSION: u32 = 1;
pub const FRAME_REQUEST: u8 = 1;
pub const FRAME_RESPONSE: u8 = 2;
pub const FRAME_ERROR: u8 = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Frames larger than this are rejected before allocation.
const MAX_FRAME: u32 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputMode {
    X0,
    Eps,
}

impl OutputMode {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(OutputMode::X0),
            1 => Ok(OutputMode::Eps),
            _ => Err(Error::ProtocolViolation(format!("unknown output mode {b}"))),
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            OutputMode::X0 => 0,
            OutputMode::Eps => 1,
        }
    }
}

/// `unix:<path>`, `tcp:<host>:<port>` or `stdio:<shell command>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Unix(PathBuf),
    Tcp(String),
    Stdio(String),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidConfig(format!("endpoint {s:?} lacks a scheme")))?;
        if rest.is_empty() {
            return Err(Error::InvalidConfig(format!("endpoint {s:?} is empty")));
        }
        match scheme {
            "unix" => Ok(Endpoint::Unix(PathBuf::from(rest))),
            "tcp" => Ok(Endpoint::Tcp(rest.to_string())),
            "stdio" => Ok(Endpoint::Stdio(rest.to_string())),
            _ => Err(Error::InvalidConfig(format!(
                "unknown endpoint scheme {scheme:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Unix(p) => write!(f, "unix:{}", p.display()),
            Endpoint::Tcp(a) => write!(f, "tcp:{a}"),
            Endpoint::Stdio(c) => write!(f, "stdio:{c}"),
        }
    }
}

enum Incoming {
    Handshake {
        version: u32,
        mode: u8,
        channels: u32,
    },
    Frame {
        kind: u8,
        payload: Vec<u8>,
    },
    Failed(Error),
}

enum Fill {
    Full,
    Eof(usize),
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<Fill> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => return Ok(Fill::Eof(got)),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Fill::Full)
}

/// Reads exactly `buf.len()` bytes; EOF before the first byte is a lost
/// connection, EOF after it a truncated message.
fn read_message<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    match fill(r, buf) {
        Ok(Fill::Full) => Ok(()),
        Ok(Fill::Eof(0)) => Err(Error::ConnectionLost(format!("peer closed before {what}"))),
        Ok(Fill::Eof(n)) => Err(Error::ProtocolViolation(format!(
            "truncated {what}: {n} of {} bytes",
            buf.len()
        ))),
        Err(e) => Err(Error::ConnectionLost(e.to_string())),
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// Reads one `(type, payload)` frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<(u8, Vec<u8>)> {
    let mut head = [0u8; 5];
    read_message(r, &mut head, "frame header")?;
    let len = u32_at(&head, 1);
    if len > MAX_FRAME {
        return Err(Error::ProtocolViolation(format!(
            "frame length {len} too large"
        )));
    }
    let mut payload = vec![0u8; len as usize];
    match read_message(r, &mut payload, "frame payload") {
        Err(Error::ConnectionLost(_)) if len > 0 => Err(Error::ProtocolViolation(
            "truncated frame payload: 0 bytes".into(),
        )),
        other => other.map(|_| (head[0], payload)),
    }
}

pub fn write_frame<W: Write>(w: &mut W, kind: u8, payload: &[u8]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(5 + payload.len());
    buf.push(kind);
    buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

fn reader_loop<R: Read>(mut r: R, tx: Sender<Incoming>) {
    let mut hs = [0u8; 13];
    if let Err(e) = read_message(&mut r, &mut hs, "handshake") {
        let _ = tx.send(Incoming::Failed(e));
        return;
    }
    if &hs[..4] != MAGIC {
        let _ = tx.send(Incoming::Failed(Error::ProtocolViolation(format!(
            "bad handshake magic {:?}",
            &hs[..4]
        ))));
        return;
    }
    let hello = Incoming::Handshake {
        version: u32_at(&hs, 4),
        mode: hs[8],
        channels: u32_at(&hs, 9),
    };
    if tx.send(hello).is_err() {
        return;
    }
    loop {
        let msg = match read_frame(&mut r) {
            Ok((kind, payload)) => Incoming::Frame { kind, payload },
            Err(e) => Incoming::Failed(e),
        };
        let stop = matches!(msg, Incoming::Failed(_));
        if tx.send(msg).is_err() || stop {
            return;
        }
    }
}

/// Denoiser served by an external process over DNZ1.
///
/// One handle owns one connection and issues requests sequentially. After a
/// timeout or protocol error the handle stays unusable.
pub struct ExternalDenoiser {
    writer: Box<dyn Write + Send>,
    rx: Receiver<Incoming>,
    mode: OutputMode,
    channels: u32,
    timeout: Duration,
    broken: Option<String>,
    child: Option<Child>,
    label: String,
}

impl ExternalDenoiser {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        let label = endpoint.to_string();
        match endpoint {
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                let s = std::os::unix::net::UnixStream::connect(path)
                    .map_err(|e| Error::ConnectionLost(format!("{label}: {e}")))?;
                let r = s.try_clone()?;
                Self::from_streams(r, s, timeout, label)
            }
            #[cfg(not(unix))]
            Endpoint::Unix(_) => Err(Error::InvalidConfig(
                "unix sockets are not available on this platform".into(),
            )),
            Endpoint::Tcp(addr) => {
                let s = std::net::TcpStream::connect(addr)
                    .map_err(|e| Error::ConnectionLost(format!("{label}: {e}")))?;
                s.set_nodelay(true)?;
                let r = s.try_clone()?;
                Self::from_streams(r, s, timeout, label)
            }
            Endpoint::Stdio(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let mut me = Self::from_streams(stdout, stdin, timeout, label);
                match &mut me {
                    Ok(d) => d.child = Some(child),
                    Err(_) => {
                        let _ = child.kill();
                        let _ = child.wait();
                    }
                }
                me
            }
        }
    }

    /// Runs the handshake over an already-open byte stream pair.
    pub fn from_streams<R, W>(
        reader: R,
        writer: W,
        timeout: Duration,
        label: String,
    ) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("dnz1-reader".into())
            .spawn(move || reader_loop(reader, tx))?;
        let mut writer: Box<dyn Write + Send> = Box::new(writer);
        let mut hello = MAGIC.to_vec();
        hello.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
        writer
            .write_all(&hello)
            .and_then(|_| writer.flush())
            .map_err(|e| Error::ConnectionLost(e.to_string()))?;
        let (version, mode, channels) = match rx.recv_timeout(timeout) {
            Ok(Incoming::Handshake {
                version,
                mode,
                channels,
            }) => (version, mode, channels),
            Ok(Incoming::Failed(e)) => return Err(e),
            Ok(Incoming::Frame { .. }) => unreachable!("frames follow the handshake"),
            Err(_) => return Err(Error::ConnectionLost("handshake timed out".into())),
        };
        if version != PROTOCOL_VERSION {
            return Err(Error::ProtocolViolation(format!(
                "server speaks version {version}, expected {PROTOCOL_VERSION}"
            )));
        }
        Ok(Self {
            writer,
            rx,
            mode: OutputMode::from_byte(mode)?,
            channels,
            timeout,
            broken: None,
            child: None,
            label,
        })
    }

    pub fn mode(&self) -> OutputMode {
        self.mode
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    fn fail(&mut self, e: Error) -> Error {
        self.broken = Some(e.to_string());
        e
    }

    /// Sends one request and returns the raw model output in `[-1, 1]` units.
    fn roundtrip(
        &mut self,
        x_model: &[f32],
        alpha_bar: f64,
        t: usize,
        shape: (usize, usize, usize),
    ) -> Result<Vec<f64>> {
        if let Some(why) = &self.broken {
            return Err(Error::ConnectionLost(format!("connection unusable: {why}")));
        }
        let (c, h, w) = shape;
        let mut payload = Vec::with_capacity(20 + 4 * x_model.len());
        payload.extend_from_slice(&(alpha_bar as f32).to_le_bytes());
        payload.extend_from_slice(&(t as u32).to_le_bytes());
        for d in [c, h, w] {
            payload.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in x_model {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        if let Err(e) = write_frame(&mut self.writer, FRAME_REQUEST, &payload) {
            return Err(self.fail(Error::ConnectionLost(e.to_string())));
        }
        let (kind, body) = match self.rx.recv_timeout(self.timeout) {
            Ok(Incoming::Frame { kind, payload }) => (kind, payload),
            Ok(Incoming::Failed(e)) => return Err(self.fail(e)),
            Ok(Incoming::Handshake { .. }) => unreachable!("handshake is read once"),
            Err(RecvTimeoutError::Timeout) => {
                let e = Error::ConnectionLost(format!("no response within {:?}", self.timeout));
                return Err(self.fail(e));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.fail(Error::ConnectionLost("reader stopped".into())))
            }
        };
        match kind {
            FRAME_RESPONSE => {}
            FRAME_ERROR => {
                return Err(Error::RemoteError(
                    String::from_utf8_lossy(&body).into_owned(),
                ));
            }
            other => {
                let e = Error::ProtocolViolation(format!("unexpected frame type {other}"));
                return Err(self.fail(e));
            }
        }
        if body.len() < 12 {
            return Err(self.fail(Error::ProtocolViolation(
                "response shorter than its header".into(),
            )));
        }
        let dims = (
            u32_at(&body, 0) as usize,
            u32_at(&body, 4) as usize,
            u32_at(&body, 8) as usize,
        );
        let n = dims.0 * dims.1 * dims.2;
        if body.len() != 12 + 4 * n {
            let e = Error::ProtocolViolation(format!(
                "response length {} does not match dims {dims:?}",
                body.len()
            ));
            return Err(self.fail(e));
        }
        if dims != shape {
            return Err(Error::shape(format!(
                "requested {shape:?}, bridge returned {dims:?}"
            )));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let v = f32_at(&body, 12 + 4 * i);
            if !v.is_finite() {
                return Err(Error::ProtocolViolation(
                    "non-finite value in response".into(),
                ));
            }
            out.push(v as f64);
        }
        Ok(out)
    }
}

impl Denoiser for ExternalDenoiser {
    fn predict_x0(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Result<Image> {
        let (c, h, w) = x_t.shape();
        if self.channels != 0 && c != self.channels as usize {
            return Err(Error::shape(format!(
                "bridge model expects {} channels, got {c}",
                self.channels
            )));
        }
        let ab = s.alpha_bar(t)?;
        let x_model: Vec<f64> = x_t.data().iter().map(|v| 2.0 * v - 1.0).collect();
        let sent: Vec<f32> = x_model.iter().map(|&v| v as f32).collect();
        let out = self.roundtrip(&sent, ab, t, (c, h, w))?;
        let x0_model: Vec<f64> = match self.mode {
            OutputMode::X0 => out,
            OutputMode::Eps => {
                let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
                x_model
                    .iter()
                    .zip(&out)
                    .map(|(x, e)| (x - sn * e) / sa)
                    .collect()
            }
        };
        Image::from_vec(
            c,
            h,
            w,
            x0_model.into_iter().map(|v| (v + 1.0) / 2.0).collect(),
        )
    }

    fn name(&self) -> String {
        format!("extern:{}", self.label)
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        self.writer = Box::new(io::sink());
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Answers DNZ1 requests by returning the request payload unchanged, until
/// the peer disconnects. Loopback fixture for tests.
pub fn serve_echo<R: Read, W: Write>(
    mut r: R,
    mut w: W,
    mode: OutputMode,
    channels: u32,
) -> Result<()> {
    let mut hello = [0u8; 8];
    read_message(&mut r, &mut hello, "handshake")?;
    if &hello[..4] != MAGIC {
        return Err(Error::ProtocolViolation("bad handshake magic".into()));
    }
    let mut reply = MAGIC.to_vec();
    reply.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    reply.push(mode.to_byte());
    reply.extend_from_slice(&channels.to_le_bytes());
    w.write_all(&reply)?;
    w.flush()?;
    loop {
        let (kind, payload) = match read_frame(&mut r) {
            Ok(f) => f,
            Err(Error::ConnectionLost(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        if kind != FRAME_REQUEST || payload.len() < 20 {
            write_frame(&mut w, FRAME_ERROR, b"malformed request")?;
            continue;
        }
        write_frame(&mut w, FRAME_RESPONSE, &payload[8..])?;
    }
}
