//! Newline-delimited JSON protocol for delegating tests to an external rig.
//!
//! ```text
//! -> {"type":"hello","version":1}
//! <- {"type":"catalog","conditions":[{"id":0,"group":"packages","label":"perl"}, ...]}
//! -> {"type":"test","id":7,"disable":[3,9]}
//! <- {"type":"result","id":7,"exploited":false}
//! ```
//!
//! One request is in flight per session and request ids strictly increase.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Oracle, OracleError, OracleStats, ProblemInstance, SimulatedOracle};
use crate::model::{ConditionCatalog, ConditionDescriptor, ConditionId, TestOutcome, TestSpec};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown frame type `{0}`")]
    UnknownType(String),
    #[error("truncated frame (stream ended before newline)")]
    Truncated,
    #[error("response id {found} does not match request id {expected}")]
    IdMismatch { expected: u64, found: u64 },
    #[error("request id {found} not greater than previous id {previous}")]
    NonIncreasingId { previous: u64, found: u64 },
    #[error("unexpected `{0}` frame")]
    UnexpectedFrame(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("condition id {id} out of range for catalog of size {n}")]
    IdOutOfRange { id: ConditionId, n: usize },
    #[error("session handshake not complete")]
    NoHandshake,
    #[error("remote error: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Frame {
    Hello { version: u32 },
    Catalog { conditions: Vec<ConditionDescriptor> },
    Test { id: u64, disable: Vec<ConditionId> },
    Result { id: u64, exploited: bool },
    Error { message: String },
}

const FRAME_TYPES: [&str; 5] = ["hello", "catalog", "test", "result", "error"];

impl Frame {
    pub fn kind(&self) -> &'static str {
        match self {
            Frame::Hello { .. } => "hello",
            Frame::Catalog { .. } => "catalog",
            Frame::Test { .. } => "test",
            Frame::Result { .. } => "result",
            Frame::Error { .. } => "error",
        }
    }

    /// Decode one line (without its newline).
    pub fn decode(line: &str) -> Result<Frame, ProtocolError> {
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let kind = value
            .get("type")
            .and_then(|t| t.as_str())
            .ok_or_else(|| ProtocolError::Malformed("missing string field `type`".into()))?;
        if !FRAME_TYPES.contains(&kind) {
            return Err(ProtocolError::UnknownType(kind.to_string()));
        }
        serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames always serialize");
        s.push('\n');
        s
    }
}

/// Read one frame. `Ok(None)` means the peer closed the stream cleanly
/// between frames.
pub fn read_frame<R: BufRead>(reader: &mut R) -> Result<Option<Frame>, OracleError> {
    let mut line = String::new();
    let read = reader.read_line(&mut line)?;
    if read == 0 {
        return Ok(None);
    }
    let Some(body) = line.strip_suffix('\n') else {
        return Err(ProtocolError::Truncated.into());
    };
    Ok(Some(Frame::decode(body.trim_end_matches('\r'))?))
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &Frame) -> Result<(), OracleError> {
    writer.write_all(frame.encode().as_bytes())?;
    writer.flush()?;
    Ok(())
}

fn closed() -> OracleError {
    OracleError::Transport(io::Error::new(io::ErrorKind::UnexpectedEof, "remote closed the stream"))
}

/// Client half of the protocol. Usable over any byte stream; see
/// [`ExternalSession::connect_tcp`] for the usual case.
#[derive(Debug)]
pub struct ExternalSession<R, W> {
    reader: R,
    writer: W,
    catalog: Option<ConditionCatalog>,
    next_id: u64,
    stats: OracleStats,
}

impl ExternalSession<BufReader<TcpStream>, TcpStream> {
    /// Connect over TCP. `timeout` bounds each blocking read (one test) and write.
    pub fn connect_tcp(addr: impl ToSocketAddrs, timeout: Option<Duration>) -> Result<Self, OracleError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(timeout)?;
        stream.set_write_timeout(timeout)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self::new(reader, stream))
    }
}

impl<R: BufRead, W: Write> ExternalSession<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer, catalog: None, next_id: 0, stats: OracleStats::default() }
    }

    /// Perform the handshake and return the remote condition universe.
    pub fn fetch_catalog(&mut self) -> Result<&ConditionCatalog, OracleError> {
        write_frame(&mut self.writer, &Frame::Hello { version: PROTOCOL_VERSION })?;
        match read_frame(&mut self.reader)?.ok_or_else(closed)? {
            Frame::Catalog { conditions } => {
                let catalog = ConditionCatalog::new(conditions)
                    .map_err(|e| ProtocolError::InvalidCatalog(e.to_string()))?;
                Ok(self.catalog.insert(catalog))
            }
            Frame::Error { message } => Err(ProtocolError::Remote(message).into()),
            other => Err(ProtocolError::UnexpectedFrame(other.kind().into()).into()),
        }
    }

    pub fn catalog(&self) -> Option<&ConditionCatalog> {
        self.catalog.as_ref()
    }

    /// Send one test and block until its result arrives.
    pub fn execute_test_external(&mut self, spec: &TestSpec) -> Result<TestOutcome, OracleError> {
        let n = self.catalog.as_ref().ok_or(ProtocolError::NoHandshake)?.len();
        if spec.len() != n {
            return Err(OracleError::LengthMismatch { expected: n, found: spec.len() });
        }
        let id = self.next_id;
        self.next_id += 1;
        write_frame(&mut self.writer, &Frame::Test { id, disable: spec.disabled_ids() })?;
        match read_frame(&mut self.reader)?.ok_or_else(closed)? {
            Frame::Result { id: got, exploited } => {
                if got != id {
                    return Err(ProtocolError::IdMismatch { expected: id, found: got }.into());
                }
                let outcome = if exploited { TestOutcome::Exploited } else { TestOutcome::Blocked };
                self.stats.record(outcome);
                Ok(outcome)
            }
            Frame::Error { message } => Err(ProtocolError::Remote(message).into()),
            other => Err(ProtocolError::UnexpectedFrame(other.kind().into()).into()),
        }
    }
}

impl<R: BufRead, W: Write> Oracle for ExternalSession<R, W> {
    fn size(&self) -> usize {
        self.catalog.as_ref().map_or(0, |c| c.len())
    }

    fn execute(&mut self, spec: &TestSpec) -> Result<TestOutcome, OracleError> {
        self.execute_test_external(spec)
    }

    fn stats(&self) -> OracleStats {
        self.stats
    }
}

/// Serve one connection: answer the handshake with `catalog` and every test
/// with `oracle`. Returns the number of tests answered once the client
/// closes the stream. Protocol violations are reported to the client as an
/// `error` frame before the error is returned.
pub fn serve<R: BufRead, W: Write, O: Oracle>(
    mut reader: R,
    mut writer: W,
    catalog: &ConditionCatalog,
    oracle: &mut O,
) -> Result<usize, OracleError> {
    let mut greeted = false;
    let mut last_id: Option<u64> = None;
    let mut answered = 0;
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(answered),
            Err(OracleError::Protocol(p)) => return Err(reject(&mut writer, p)),
            Err(e) => return Err(e),
        };
        match frame {
            Frame::Hello { version } if version == PROTOCOL_VERSION => {
                greeted = true;
                let conditions = catalog.iter().cloned().collect();
                write_frame(&mut writer, &Frame::Catalog { conditions })?;
            }
            Frame::Hello { version } => return Err(reject(&mut writer, ProtocolError::Version(version))),
            Frame::Test { id, disable } if greeted => {
                if let Some(previous) = last_id.filter(|&p| id <= p) {
                    return Err(reject(&mut writer, ProtocolError::NonIncreasingId { previous, found: id }));
                }
                last_id = Some(id);
                let n = catalog.len();
                if let Some(&bad) = disable.iter().find(|&&j| j >= n) {
                    return Err(reject(&mut writer, ProtocolError::IdOutOfRange { id: bad, n }));
                }
                let spec = TestSpec::from_ids(n, &disable)?;
                let outcome = oracle.execute(&spec)?;
                write_frame(&mut writer, &Frame::Result { id, exploited: outcome == TestOutcome::Exploited })?;
                answered += 1;
            }
            Frame::Test { .. } => return Err(reject(&mut writer, ProtocolError::NoHandshake)),
            other => return Err(reject(&mut writer, ProtocolError::UnexpectedFrame(other.kind().into()))),
        }
    }
}

fn reject<W: Write>(writer: &mut W, err: ProtocolError) -> OracleError {
    // Best effort; the connection is being abandoned anyway.
    let _ = write_frame(writer, &Frame::Error { message: err.to_string() });
    err.into()
}

/// In-process TCP server answering tests from a [`SimulatedOracle`].
///
/// Connections are served one at a time; each gets a fresh oracle seeded
/// from the instance, so repeated sessions see identical outcome streams.
pub struct LoopbackServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    pub fn spawn(instance: ProblemInstance) -> io::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                let Ok(read_half) = stream.try_clone() else { continue };
                let mut oracle = SimulatedOracle::new(instance.clone());
                let _ = serve(BufReader::new(read_half), stream, &instance.catalog, &mut oracle);
            }
        });
        Ok(Self { addr, shutdown, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NecessarySet;
    use std::io::Cursor;

    fn session(script: &str) -> ExternalSession<Cursor<Vec<u8>>, Vec<u8>> {
        ExternalSession::new(Cursor::new(script.as_bytes().to_vec()), Vec::new())
    }

    const CATALOG3: &str = r#"{"type":"catalog","conditions":[{"id":0,"group":"packages","label":"perl"},{"id":1,"group":"services","label":"vsftpd"},{"id":2,"group":"connectivity","label":"port 6200"}]}"#;

    fn spec3(ids: &[usize]) -> TestSpec {
        TestSpec::from_ids(3, ids).unwrap()
    }

    #[test]
    fn frames_encode_as_documented() {
        assert_eq!(Frame::Hello { version: 1 }.encode(), "{\"type\":\"hello\",\"version\":1}\n");
        assert_eq!(
            Frame::Test { id: 7, disable: vec![3, 9] }.encode(),
            "{\"type\":\"test\",\"id\":7,\"disable\":[3,9]}\n"
        );
        assert_eq!(
            Frame::decode(r#"{"type":"result","id":7,"exploited":false}"#).unwrap(),
            Frame::Result { id: 7, exploited: false }
        );
    }

    #[test]
    fn handshake_and_test() {
        let script = format!("{CATALOG3}\n{}\n", r#"{"type":"result","id":0,"exploited":false}"#);
        let mut s = session(&script);
        let catalog = s.fetch_catalog().unwrap();
        assert_eq!(catalog.len(), 3);
        assert_eq!(catalog.label(0), "perl");
        assert_eq!(s.execute_test_external(&spec3(&[1, 2])).unwrap(), TestOutcome::Blocked);
        assert_eq!(s.stats().tests_issued, 1);
        let sent = String::from_utf8(s.writer.clone()).unwrap();
        assert_eq!(
            sent,
            "{\"type\":\"hello\",\"version\":1}\n{\"type\":\"test\",\"id\":0,\"disable\":[1,2]}\n"
        );
    }

    #[test]
    fn duplicate_catalog_id_is_protocol_error() {
        let script = r#"{"type":"catalog","conditions":[{"id":0,"group":"packages","label":"a"},{"id":0,"group":"packages","label":"b"}]}"#;
        let mut s = session(&format!("{script}\n"));
        assert!(matches!(
            s.fetch_catalog(),
            Err(OracleError::Protocol(ProtocolError::InvalidCatalog(_)))
        ));
    }

    #[test]
    fn id_mismatch_is_protocol_error() {
        let script = format!("{CATALOG3}\n{}\n", r#"{"type":"result","id":5,"exploited":true}"#);
        let mut s = session(&script);
        s.fetch_catalog().unwrap();
        assert!(matches!(
            s.execute_test_external(&spec3(&[0])),
            Err(OracleError::Protocol(ProtocolError::IdMismatch { expected: 0, found: 5 }))
        ));
        assert_eq!(s.stats().tests_issued, 0);
    }

    #[test]
    fn unknown_type_is_protocol_error() {
        let script = format!("{CATALOG3}\n{}\n", r#"{"type":"reboot","id":0}"#);
        let mut s = session(&script);
        s.fetch_catalog().unwrap();
        assert!(matches!(
            s.execute_test_external(&spec3(&[0])),
            Err(OracleError::Protocol(ProtocolError::UnknownType(t))) if t == "reboot"
        ));
    }

    #[test]
    fn truncated_line_is_protocol_error() {
        let script = format!("{CATALOG3}\n{}", r#"{"type":"result","id":0,"exploi"#);
        let mut s = session(&script);
        s.fetch_catalog().unwrap();
        assert!(matches!(
            s.execute_test_external(&spec3(&[0])),
            Err(OracleError::Protocol(ProtocolError::Truncated))
        ));
    }

    #[test]
    fn stream_closed_mid_request_is_transport_error() {
        let mut s = session(&format!("{CATALOG3}\n"));
        s.fetch_catalog().unwrap();
        let err = s.execute_test_external(&spec3(&[0])).unwrap_err();
        assert!(err.is_retriable(), "{err}");
        assert_eq!(s.stats().tests_issued, 0);
    }

    #[test]
    fn test_before_handshake_rejected() {
        let mut s = session("");
        assert!(matches!(
            s.execute_test_external(&spec3(&[0])),
            Err(OracleError::Protocol(ProtocolError::NoHandshake))
        ));
    }

    #[test]
    fn server_answers_and_rejects() {
        let inst = ProblemInstance::noiseless(NecessarySet::from_ids(4, &[1]).unwrap(), 0);
        let input = concat!(
            "{\"type\":\"hello\",\"version\":1}\n",
            "{\"type\":\"test\",\"id\":1,\"disable\":[1]}\n",
            "{\"type\":\"test\",\"id\":1,\"disable\":[0]}\n",
        );
        let mut out = Vec::new();
        let mut oracle = SimulatedOracle::new(inst.clone());
        let err = serve(Cursor::new(input), &mut out, &inst.catalog, &mut oracle).unwrap_err();
        assert!(matches!(err, OracleError::Protocol(ProtocolError::NonIncreasingId { previous: 1, found: 1 })));
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], r#"{"type":"result","id":1,"exploited":false}"#);
        assert!(lines[2].starts_with(r#"{"type":"error""#));
    }

    #[test]
    fn loopback_round_trip() {
        let inst = ProblemInstance::noiseless(NecessarySet::from_ids(16, &[3, 9]).unwrap(), 0);
        let server = LoopbackServer::spawn(inst).unwrap();
        let mut s = ExternalSession::connect_tcp(server.addr(), Some(Duration::from_secs(5))).unwrap();
        assert_eq!(s.fetch_catalog().unwrap().len(), 16);
        let blocked = TestSpec::from_ids(16, &[3]).unwrap();
        let clean = TestSpec::from_ids(16, &[0, 1, 2]).unwrap();
        assert_eq!(s.execute(&blocked).unwrap(), TestOutcome::Blocked);
        assert_eq!(s.execute(&clean).unwrap(), TestOutcome::Exploited);
    }
}
