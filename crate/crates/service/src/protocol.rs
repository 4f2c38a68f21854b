//! Versioned JSON messages framed by a 4-byte big-endian length prefix.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uvms_core::planning::{Phase, TaskEvent};
use uvms_core::Pose;

pub const PROTOCOL_VERSION: u32 = 1;
/// Frames above this size are rejected.
pub const MAX_FRAME: usize = 16 << 20;
pub const HEADER_BYTES: usize = 4;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    State,
    Command,
    Nl,
    Ack,
    Error,
    Warning,
}

/// Pose as sent on the wire; no renormalization, so values survive a round
/// trip bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    /// `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&Pose> for WirePose {
    fn from(p: &Pose) -> Self {
        let q = p.rotation.quaternion();
        Self { rotation: [q.w, q.i, q.j, q.k], translation: [p.translation.x, p.translation.y, p.translation.z] }
    }
}

impl WirePose {
    pub fn to_pose(&self) -> Result<Pose, String> {
        let [w, x, y, z] = self.rotation;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 || self.translation.iter().any(|v| !v.is_finite()) {
            return Err("pose must have a unit quaternion and finite translation".into());
        }
        Ok(Pose::new(nalgebra::UnitQuaternion::new_normalize(q), nalgebra::Vector3::from(self.translation)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolView {
    pub id: String,
    pub pose: WirePose,
    /// False once the tool's tag has not been seen recently.
    pub tracked: bool,
}

/// Stereo points on a voxel grid: integer cell offsets from `origin` packed
/// as i16 triples, deflated and base64-encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSummary {
    pub points: u32,
    pub voxel: f64,
    pub origin: [f64; 3],
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub time: f64,
    pub phase: Phase,
    pub selected_tool: Option<String>,
    pub held_tool: Option<String>,
    pub joints: Vec<f64>,
    /// `[starboard, port]`, radians.
    pub doors: [f64; 2],
    pub tools: Vec<ToolView>,
    pub marker: Option<WirePose>,
    /// Joint configurations subsampled from the staged plan.
    pub plan_preview: Vec<Vec<f64>>,
    pub last_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<CloudSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum CommandPayload {
    ClaimControl,
    ReleaseControl,
    /// Ask for a full state message, with the cloud summary when `cloud`.
    RequestState {
        #[serde(default)]
        cloud: bool,
    },
    SelectTool { tool: String },
    SetMarker { pose: WirePose },
    RequestPlan,
    Confirm,
    Reject,
    Stop,
    Abort,
    Retry,
    GripperOpen,
    GripperClose,
    GotoNamedPose { name: String },
}

impl CommandPayload {
    /// Task event carried by the command; session commands have none.
    pub fn to_event(&self) -> Result<Option<TaskEvent>, String> {
        Ok(Some(match self {
            CommandPayload::ClaimControl | CommandPayload::ReleaseControl | CommandPayload::RequestState { .. } => {
                return Ok(None)
            }
            CommandPayload::SelectTool { tool } => TaskEvent::SelectTool { tool: tool.clone() },
            CommandPayload::SetMarker { pose } => TaskEvent::SetMarker { pose: pose.to_pose()? },
            CommandPayload::RequestPlan => TaskEvent::RequestPlan,
            CommandPayload::Confirm => TaskEvent::Confirm,
            CommandPayload::Reject => TaskEvent::Reject,
            CommandPayload::Stop => TaskEvent::Stop,
            CommandPayload::Abort => TaskEvent::Abort,
            CommandPayload::Retry => TaskEvent::Retry,
            CommandPayload::GripperOpen => TaskEvent::GripperOpen,
            CommandPayload::GripperClose => TaskEvent::GripperClose,
            CommandPayload::GotoNamedPose { name } => TaskEvent::GotoNamedPose { name: name.clone() },
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlPayload {
    pub text: String,
}

/// How an utterance was understood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub symbols: Vec<String>,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckPayload {
    /// Sequence number of the acknowledged message.
    pub ack: u64,
    pub phase: Phase,
    pub controller: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretation: Option<Interpretation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotController,
    MalformedCommand,
    /// The task state machine refused the event in the current phase.
    Rejected,
    /// The utterance could not be grounded to exactly one action.
    Grounding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub ack: Option<u64>,
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningPayload {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    State(StatePayload),
    Command(CommandPayload),
    Nl(NlPayload),
    Ack(AckPayload),
    Error(ErrorPayload),
    Warning(WarningPayload),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::State(_) => Kind::State,
            Payload::Command(_) => Kind::Command,
            Payload::Nl(_) => Kind::Nl,
            Payload::Ack(_) => Kind::Ack,
            Payload::Error(_) => Kind::Error,
            Payload::Warning(_) => Kind::Warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl Message {
    pub fn new(seq: u64, payload: Payload) -> Self {
        Self { v: PROTOCOL_VERSION, seq, payload }
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }

    /// Parses and checks the version; payload shape is checked by the kind's
    /// schema during deserialization.
    pub fn from_json(body: &str) -> Result<Self, ProtocolError> {
        let m: Message = serde_json::from_str(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if m.v != PROTOCOL_VERSION {
            return Err(ProtocolError::Version(m.v));
        }
        Ok(m)
    }

    /// Length prefix plus body.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.to_json();
        let mut out = Vec::with_capacity(HEADER_BYTES + body.len());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(body.as_bytes());
        out
    }

    /// Bytes this message occupies on the wire.
    pub fn byte_size(&self) -> usize {
        HEADER_BYTES + self.to_json().len()
    }
}

pub fn write_frame(w: &mut impl Write, m: &Message) -> Result<usize, ProtocolError> {
    let bytes = m.encode();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}

/// Reads one frame body, returning `None` on a clean end of stream.
pub fn read_body(r: &mut impl Read) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut header = [0u8; HEADER_BYTES];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(ProtocolError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn parse_body(body: &[u8]) -> Result<Message, ProtocolError> {
    let text = std::str::from_utf8(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    Message::from_json(text)
}

/// Reads and parses one frame, returning `None` on a clean end of stream.
/// The size is that of the whole frame.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(Message, usize)>, ProtocolError> {
    let Some(body) = read_body(r)? else { return Ok(None) };
    Ok(Some((parse_body(&body)?, HEADER_BYTES + body.len())))
}

/// Incremental decoder for byte streams that arrive in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete body, if buffered.
    pub fn next_body(&mut self) -> Result<Option<String>, ProtocolError> {
        if self.buf.len() < HEADER_BYTES {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buf[..HEADER_BYTES].try_into().expect("4 bytes")) as usize;
        if len > MAX_FRAME {
            return Err(ProtocolError::TooLarge(len));
        }
        if self.buf.len() < HEADER_BYTES + len {
            return Ok(None);
        }
        let body: Vec<u8> = self.buf.drain(..HEADER_BYTES + len).skip(HEADER_BYTES).collect();
        String::from_utf8(body).map(Some).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}
