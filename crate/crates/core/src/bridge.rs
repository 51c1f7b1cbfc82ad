//! Hardware-in-the-loop bridge: newline-delimited JSON frames over TCP.
//!
//! Every line is one frame `{"kind": ..., "seq": n, "payload": {...}}` with
//! `kind` one of `hello`, `sensor`, `command`, `error`. A session opens with a
//! hello from each side. Each accepted sensor frame gets exactly one command
//! frame carrying the same `seq`. Malformed lines get an error frame; sensor
//! frames whose `seq` does not increase are dropped. Error frames are not part
//! of the ordered stream: their `seq` names the frame they answer, or 0.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::controller::{ControllerParams, GripController};
use crate::error::{Error, Result};
use crate::scenario::Rig;
use crate::telemetry::read_sensors;
use crate::units::{FingertipForce, GraspType, Pose, Vec3};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Hello,
    Sensor,
    Command,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub kind: FrameKind,
    pub seq: u64,
    pub payload: Value,
}

impl Frame {
    pub fn new<T: Serialize>(kind: FrameKind, seq: u64, payload: &T) -> Self {
        Self {
            kind,
            seq,
            payload: serde_json::to_value(payload).expect("payload serializes"),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frame serializes");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad frame: {e}")))
    }

    fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        T::deserialize(&self.payload).map_err(|e| {
            Error::Protocol(format!("bad {:?} payload: {e}", self.kind).to_lowercase())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloPayload {
    pub role: String,
    #[serde(default)]
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp_type: Option<GraspType>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fingers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireForce {
    pub id: usize,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorPayload {
    pub t: f64,
    pub hand_pose: Pose,
    pub fingertips: Vec<WireForce>,
    /// Re-arm the controller before this tick.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reset: bool,
}

impl SensorPayload {
    pub fn forces(&self) -> Vec<FingertipForce> {
        self.fingertips
            .iter()
            .map(|f| FingertipForce::new(f.id, Vec3::new(f.fx, f.fy, f.fz), self.t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandPayload {
    pub t: f64,
    pub grasp_type: GraspType,
    pub grasp_size_m: f64,
    pub joint_angles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SessionStats {
    pub lines: u64,
    pub accepted: u64,
    pub commands: u64,
    pub malformed: u64,
    pub out_of_order: u64,
    pub faults: u64,
}

/// What a served session runs: controller parameters, grasp type and hand.
#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub params: ControllerParams,
    pub grasp_type: GraspType,
    pub rig: Rig,
}

struct Session<W: Write> {
    out: W,
    controller: GripController,
    config: BridgeConfig,
    greeted: bool,
    last_seq: Option<u64>,
    stats: SessionStats,
}

impl<W: Write> Session<W> {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        self.out.write_all(frame.to_line().as_bytes())?;
        self.out.flush()?;
        Ok(())
    }

    fn reject(&mut self, seq: u64, message: String) -> Result<()> {
        log::warn!("frame rejected: {message}");
        self.stats.malformed += 1;
        self.send(&Frame::new(
            FrameKind::Error,
            seq,
            &ErrorPayload { message },
        ))
    }

    fn handle_line(&mut self, line: &str) -> Result<()> {
        self.stats.lines += 1;
        if line.trim().is_empty() {
            return Ok(());
        }
        let frame = match Frame::parse(line) {
            Ok(f) => f,
            Err(e) => return self.reject(0, e.to_string()),
        };
        match frame.kind {
            FrameKind::Hello => match frame.payload_as::<HelloPayload>() {
                Ok(_) => {
                    self.greeted = true;
                    let hello = HelloPayload {
                        role: "controller".into(),
                        version: PROTOCOL_VERSION,
                        grasp_type: Some(self.config.grasp_type),
                        fingers: self
                            .config
                            .rig
                            .finger_names()
                            .iter()
                            .map(|s| s.to_string())
                            .collect(),
                    };
                    self.send(&Frame::new(FrameKind::Hello, 0, &hello))
                }
                Err(e) => self.reject(frame.seq, e.to_string()),
            },
            FrameKind::Sensor if !self.greeted => {
                self.reject(frame.seq, "sensor frame before hello".into())
            }
            FrameKind::Sensor => {
                let payload = match frame.payload_as::<SensorPayload>() {
                    Ok(p) => p,
                    Err(e) => return self.reject(frame.seq, e.to_string()),
                };
                if self.last_seq.is_some_and(|last| frame.seq <= last) {
                    log::warn!(
                        "dropping sensor frame seq {} (last {:?})",
                        frame.seq,
                        self.last_seq
                    );
                    self.stats.out_of_order += 1;
                    return Ok(());
                }
                self.last_seq = Some(frame.seq);
                self.stats.accepted += 1;
                if payload.reset {
                    self.controller.reset()?;
                }
                let forces = payload.forces();
                if let Err(fault) = self.controller.tick(&forces, &payload.hand_pose) {
                    log::warn!("seq {}: {fault}", frame.seq);
                    self.stats.faults += 1;
                }
                let cmd = CommandPayload {
                    t: payload.t,
                    grasp_type: self.config.grasp_type,
                    grasp_size_m: self.controller.context().grasp_size,
                    joint_angles: self.controller.joints().0.clone(),
                };
                self.stats.commands += 1;
                self.send(&Frame::new(FrameKind::Command, frame.seq, &cmd))
            }
            FrameKind::Command | FrameKind::Error => self.reject(
                frame.seq,
                format!("unexpected {:?} frame from peer", frame.kind).to_lowercase(),
            ),
        }
    }
}

/// Serve one connected peer until it disconnects.
///
/// A reader thread splits the byte stream into lines and hands them over an
/// ordered channel; ticks and replies happen on the calling thread.
pub fn serve_session(stream: TcpStream, config: &BridgeConfig) -> Result<SessionStats> {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_default();
    let reader = BufReader::new(stream.try_clone()?);
    let (tx, rx) = mpsc::channel::<std::io::Result<String>>();
    let handle = thread::spawn(move || {
        for line in reader.lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    let controller = GripController::new(
        config.params.clone(),
        config.grasp_type,
        config.rig.model.clone(),
        config.rig.decoder.clone(),
    )?;
    let mut session = Session {
        out: BufWriter::new(stream),
        controller,
        config: config.clone(),
        greeted: false,
        last_seq: None,
        stats: SessionStats::default(),
    };
    let mut outcome = Ok(());
    for line in rx {
        let step = match line {
            Ok(line) => session.handle_line(&line),
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                session.reject(0, "line is not UTF-8".into())
            }
            Err(e) => Err(e.into()),
        };
        if let Err(e) = step {
            outcome = Err(e);
            break;
        }
    }
    // Unblock the reader if we bailed out early.
    let _ = session.out.get_ref().shutdown(std::net::Shutdown::Both);
    let _ = handle.join();
    log::info!("session {peer} closed: {:?}", session.stats);
    match outcome {
        Ok(()) => Ok(session.stats),
        Err(Error::Io(e)) if is_disconnect(&e) => Ok(session.stats),
        Err(e) => Err(e),
    }
}

fn is_disconnect(e: &std::io::Error) -> bool {
    use std::io::ErrorKind::*;
    matches!(
        e.kind(),
        BrokenPipe | ConnectionReset | ConnectionAborted | UnexpectedEof
    )
}

/// Accept peers one after another, forever.
pub fn serve(listener: TcpListener, config: &BridgeConfig) -> Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        match stream {
            Ok(s) => {
                if let Err(e) = serve_session(s, config) {
                    log::error!("session failed: {e}");
                }
            }
            Err(e) => log::error!("accept failed: {e}"),
        }
    }
    Ok(())
}

/// Lock-step client: connects, greets, then sends every frame and waits for its reply.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_seq: u64,
    pub server_hello: HelloPayload,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut client = Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            next_seq: 1,
            server_hello: HelloPayload {
                role: String::new(),
                version: 0,
                grasp_type: None,
                fingers: Vec::new(),
            },
        };
        let hello = HelloPayload {
            role: "client".into(),
            version: PROTOCOL_VERSION,
            grasp_type: None,
            fingers: Vec::new(),
        };
        client.send_raw(&Frame::new(FrameKind::Hello, 0, &hello).to_line())?;
        let reply = client.recv()?;
        if reply.kind != FrameKind::Hello {
            return Err(Error::Protocol(format!(
                "expected hello, got {:?}",
                reply.kind
            )));
        }
        client.server_hello = reply.payload_as()?;
        Ok(client)
    }

    pub fn send_raw(&mut self, line: &str) -> Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Frame> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(Error::Protocol("server closed the connection".into()));
        }
        Frame::parse(&line)
    }

    /// Send one sensor frame and return the matching command.
    pub fn tick(&mut self, sensor: &SensorPayload) -> Result<CommandPayload> {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.send_raw(&Frame::new(FrameKind::Sensor, seq, sensor).to_line())?;
        let reply = self.recv()?;
        match reply.kind {
            FrameKind::Command if reply.seq == seq => reply.payload_as(),
            FrameKind::Error => {
                let e: ErrorPayload = reply.payload_as()?;
                Err(Error::Protocol(format!(
                    "server error for seq {seq}: {}",
                    e.message
                )))
            }
            kind => Err(Error::Protocol(format!(
                "expected command {seq}, got {kind:?} {}",
                reply.seq
            ))),
        }
    }
}

/// Stream a recorded `sensors.csv` through a bridge and collect the commands.
pub fn replay(recording: &Path, addr: impl ToSocketAddrs) -> Result<Vec<CommandPayload>> {
    let rows = read_sensors(std::fs::File::open(recording)?)?;
    let mut client = Client::connect(addr)?;
    rows.iter()
        .map(|r| {
            client.tick(&SensorPayload {
                t: r.t,
                hand_pose: r.hand_pose,
                fingertips: r
                    .forces
                    .iter()
                    .map(|f| WireForce {
                        id: f.fingertip_id,
                        fx: f.raw.x,
                        fy: f.raw.y,
                        fz: f.raw.z,
                    })
                    .collect(),
                reset: r.reset,
            })
        })
        .collect()
}
