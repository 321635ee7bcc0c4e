//! NDJSON telemetry and command protocol over TCP, plus the JSON-lines log.
//!
//! Wire format, one UTF-8 JSON object per line:
//!
//! * server → client: `{"type":"frame", ...TelemetryFrame}` at the telemetry
//!   rate, and `{"type":"ack","seq":N,"accepted":bool,"reason":...}` once per
//!   received command line;
//! * client → server: `{"seq":N,"kind":"ARM"}` and friends, see [`Action`].
//!
//! Commands from every connection funnel into one queue which the
//! simulation drains at tick boundaries. Rejections for malformed lines go
//! through the same queue so ACKs stay FIFO per connection.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;
use crate::mission::{LedState, MissionState};
use crate::sensors::{FixType, RtkCorrection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t: f64,
    pub mode: MissionState,
    pub armed: bool,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    pub altitude_m: f64,
    pub heading: f64,
    pub ground_speed: f64,
    pub distance_to_waypoint: f64,
    pub next_waypoint: usize,
    pub waypoint_count: usize,
    pub waypoints_completed: usize,
    pub captures: usize,
    pub odometer_m: f64,
    /// Smallest true clearance so far; absent before the first tick.
    #[serde(default)]
    pub min_clearance_m: Option<f64>,
    pub battery_v: f64,
    pub fix_type: FixType,
    pub led_state: LedState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_event: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModeRequest {
    Hold,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Arm,
    Disarm,
    SetMode { mode: ModeRequest },
    /// Mission document in the mission-file schema.
    UploadMission { mission: Value },
    /// Normalized sticks in `[-1, 1]`; expires without refresh.
    ManualOverride { throttle: f64, steer: f64 },
    StartMission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub seq: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: Option<u64>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Ack {
    pub fn accept(seq: u64) -> Self {
        Ack { seq: Some(seq), accepted: true, reason: None }
    }

    pub fn reject(seq: Option<u64>, reason: impl Into<String>) -> Self {
        Ack { seq, accepted: false, reason: Some(reason.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Frame(TelemetryFrame),
    Ack(Ack),
}

/// Parses one client line. Errors come back as the NACK to send.
pub fn parse_command(line: &str) -> std::result::Result<Command, Ack> {
    let v: Value = serde_json::from_str(line).map_err(|e| Ack::reject(None, format!("malformed json: {e}")))?;
    let seq = v.get("seq").and_then(Value::as_u64);
    if seq.is_none() {
        return Err(Ack::reject(None, "missing seq"));
    }
    match v.get("kind").and_then(Value::as_str) {
        Some("ARM" | "DISARM" | "SET_MODE" | "UPLOAD_MISSION" | "MANUAL_OVERRIDE" | "START_MISSION") => {}
        Some(other) => return Err(Ack::reject(seq, format!("unknown command kind {other}"))),
        None => return Err(Ack::reject(seq, "missing kind")),
    }
    serde_json::from_value(v).map_err(|e| Ack::reject(seq, format!("bad payload: {e}")))
}

/// Enforces strictly increasing sequence numbers on one connection.
#[derive(Debug, Default)]
pub struct SeqGuard {
    last: Option<u64>,
}

impl SeqGuard {
    pub fn check(&mut self, cmd: Command) -> std::result::Result<Command, Ack> {
        if self.last.is_some_and(|l| cmd.seq <= l) {
            return Err(Ack::reject(Some(cmd.seq), "seq not increasing"));
        }
        self.last = Some(cmd.seq);
        Ok(cmd)
    }
}

pub type ClientId = u64;

#[derive(Debug)]
pub struct Inbound {
    pub client: ClientId,
    pub command: std::result::Result<Command, Ack>,
}

type Clients = Arc<Mutex<Vec<(ClientId, Sender<String>)>>>;

/// Accepts TCP clients and fans lines out to every connected one.
struct Hub {
    addr: SocketAddr,
    clients: Clients,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl Hub {
    fn bind(addr: impl ToSocketAddrs, inbound: Option<Sender<Inbound>>) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let clients: Clients = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let next_id = Arc::new(AtomicU64::new(1));
        let acceptor = {
            let clients = clients.clone();
            let stop = stop.clone();
            thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let id = next_id.fetch_add(1, Ordering::Relaxed);
                            if let Err(e) = spawn_client(id, stream, &clients, inbound.clone()) {
                                eprintln!("telemetry: client setup failed: {e}");
                            }
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                        Err(_) => thread::sleep(Duration::from_millis(5)),
                    }
                }
            })
        };
        Ok(Hub { addr, clients, stop, acceptor: Some(acceptor) })
    }

    fn broadcast(&self, line: &str) {
        let mut clients = self.clients.lock().expect("client list poisoned");
        clients.retain(|(_, tx)| tx.send(line.to_string()).is_ok());
    }

    fn send_to(&self, client: ClientId, line: String) {
        let clients = self.clients.lock().expect("client list poisoned");
        if let Some((_, tx)) = clients.iter().find(|(id, _)| *id == client) {
            let _ = tx.send(line);
        }
    }

    fn client_count(&self) -> usize {
        self.clients.lock().expect("client list poisoned").len()
    }
}

impl Drop for Hub {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        self.clients.lock().map(|mut c| c.clear()).ok();
    }
}

fn spawn_client(id: ClientId, stream: TcpStream, clients: &Clients, inbound: Option<Sender<Inbound>>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let (tx, rx) = mpsc::channel::<String>();
    let mut writer = BufWriter::new(stream.try_clone()?);
    let reader_stream = stream.try_clone()?;
    clients.lock().expect("client list poisoned").push((id, tx));

    let clients_w = clients.clone();
    thread::spawn(move || {
        for line in rx {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).and_then(|_| writer.flush()).is_err() {
                break;
            }
        }
        clients_w.lock().map(|mut c| c.retain(|(cid, _)| *cid != id)).ok();
        let _ = stream.shutdown(std::net::Shutdown::Both);
    });

    let clients_r = clients.clone();
    thread::spawn(move || {
        let mut guard = SeqGuard::default();
        for line in BufReader::new(reader_stream).lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            let command = parse_command(&line).and_then(|c| guard.check(c));
            match &inbound {
                Some(q) => {
                    if q.send(Inbound { client: id, command }).is_err() {
                        break;
                    }
                }
                None => {
                    // Broadcast-only endpoint: nothing to command.
                }
            }
        }
        clients_r.lock().map(|mut c| c.retain(|(cid, _)| *cid != id)).ok();
    });
    Ok(())
}

/// Telemetry endpoint: frame broadcast plus a serialized command queue.
pub struct TelemetryServer {
    hub: Hub,
    commands: Receiver<Inbound>,
}

impl TelemetryServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        Ok(TelemetryServer { hub: Hub::bind(addr, Some(tx))?, commands: rx })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.hub.addr
    }

    pub fn client_count(&self) -> usize {
        self.hub.client_count()
    }

    /// Everything queued since the last call, in arrival order.
    pub fn drain_commands(&self) -> Vec<Inbound> {
        self.commands.try_iter().collect()
    }

    pub fn respond(&self, client: ClientId, ack: Ack) {
        let line = serde_json::to_string(&ServerMessage::Ack(ack)).expect("ack serializes");
        self.hub.send_to(client, line);
    }

    pub fn broadcast_frame(&self, frame: &TelemetryFrame) {
        let line = serde_json::to_string(&ServerMessage::Frame(frame.clone())).expect("frame serializes");
        self.hub.broadcast(&line);
    }
}

/// Broadcast-only endpoint serving the RTK correction stream.
pub struct CorrectionServer {
    hub: Hub,
}

impl CorrectionServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        Ok(CorrectionServer { hub: Hub::bind(addr, None)? })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.hub.addr
    }

    pub fn client_count(&self) -> usize {
        self.hub.client_count()
    }

    pub fn publish(&self, c: &RtkCorrection) {
        self.hub.broadcast(&serde_json::to_string(c).expect("correction serializes"));
    }
}

/// Append-only JSON-lines frame log.
pub struct TelemetryLog {
    out: BufWriter<File>,
    lines: usize,
}

impl TelemetryLog {
    /// Creates (truncating) the log file; frames are then only appended.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(TelemetryLog { out: BufWriter::new(File::create(path)?), lines: 0 })
    }

    pub fn record(&mut self, frame: &TelemetryFrame) -> Result<()> {
        serde_json::to_writer(&mut self.out, frame)?;
        self.out.write_all(b"\n")?;
        self.lines += 1;
        Ok(())
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

impl Drop for TelemetryLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<TelemetryFrame>> {
    let file = File::open(path)?;
    let mut frames = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            frames.push(serde_json::from_str(&line)?);
        }
    }
    Ok(frames)
}
