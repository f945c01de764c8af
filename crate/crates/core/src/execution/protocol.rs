//! Sandbox wire protocol.
//!
//! Each frame is a 4-byte big-endian byte count followed by that many bytes
//! of UTF-8 JSON. Every JSON object carries a `kind` field.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ExecStatus;

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames larger than this are rejected without reading the body.
pub const MAX_FRAME_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("stream ended inside a frame")]
    Truncated,
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("frame is not valid UTF-8")]
    NotUtf8,
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unexpected frame: {0}")]
    Unexpected(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Frame {
    Hello {
        version: u32,
    },
    ExecRequest {
        id: u64,
        code: String,
        tool_names: Vec<String>,
        timeout_ms: u64,
        #[serde(default)]
        keep_namespace: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_output_bytes: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_tool_calls: Option<u32>,
    },
    ExecResult {
        id: u64,
        status: ExecStatus,
        #[serde(default)]
        value: String,
        #[serde(default)]
        stdout: String,
        #[serde(default)]
        stderr: String,
        #[serde(default)]
        duration_ms: u64,
    },
    LlmCallRequest {
        id: u64,
        prompt: String,
    },
    LlmCallResponse {
        id: u64,
        #[serde(default)]
        completion: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Shutdown,
    /// Sent by a worker before it exits on a protocol violation.
    Error {
        message: String,
    },
}

impl Frame {
    pub fn kind(&self) -> &'static str {
        match self {
            Frame::Hello { .. } => "hello",
            Frame::ExecRequest { .. } => "exec_request",
            Frame::ExecResult { .. } => "exec_result",
            Frame::LlmCallRequest { .. } => "llm_call_request",
            Frame::LlmCallResponse { .. } => "llm_call_response",
            Frame::Shutdown => "shutdown",
            Frame::Error { .. } => "error",
        }
    }
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let body = serde_json::to_vec(frame).expect("frame serializes");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&encode_frame(frame))?;
    w.flush()
}

/// Reads one frame. `Ok(None)` is a clean end of stream at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, ProtocolError> {
    let mut header = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(ProtocolError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Truncated,
        _ => ProtocolError::Io(e),
    })?;
    let text = std::str::from_utf8(&body).map_err(|_| ProtocolError::NotUtf8)?;
    serde_json::from_str(text)
        .map(Some)
        .map_err(|e| ProtocolError::Malformed(e.to_string()))
}
