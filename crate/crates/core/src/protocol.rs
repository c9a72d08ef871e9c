//! Console wire protocol.
//!
//! Each frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON holding one object with a `type` field. Inbound objects are
//! [`Command`]s; outbound objects are [`Outbound`].

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::control::ControlConfig;
use crate::error::CommandError;
use crate::session::{Ack, Command, Phase};
use crate::telemetry::{Published, TelemetryFrame};

/// Upper bound on a single frame.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Telemetry(TelemetryFrame),
    Ack {
        config: ControlConfig,
        phase: Phase,
    },
    Error {
        field: Option<String>,
        msg: String,
    },
    State {
        phase: Phase,
    },
}

impl From<Ack> for Outbound {
    fn from(a: Ack) -> Self {
        Outbound::Ack {
            config: a.config,
            phase: a.phase,
        }
    }
}

impl From<&CommandError> for Outbound {
    fn from(e: &CommandError) -> Self {
        Outbound::Error {
            field: e.field().map(str::to_string),
            msg: e.to_string(),
        }
    }
}

impl From<Published> for Outbound {
    fn from(p: Published) -> Self {
        match p {
            Published::Frame(f) => Outbound::Telemetry(f),
            Published::Phase(phase) => Outbound::State { phase },
        }
    }
}

impl Outbound {
    pub fn reply(res: &Result<Ack, CommandError>) -> Self {
        match res {
            Ok(a) => a.clone().into(),
            Err(e) => e.into(),
        }
    }
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    if payload.len() > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn write_message<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let bytes = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &bytes)
}

/// Decodes an inbound frame. Malformed input becomes an error message for
/// the client, naming the offending field where serde reports one.
pub fn decode_command(frame: &[u8]) -> Result<Command, Outbound> {
    let text = std::str::from_utf8(frame).map_err(|_| Outbound::Error {
        field: None,
        msg: "frame is not valid UTF-8".into(),
    })?;
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("unknown field") || msg.starts_with("invalid type"))
            .map(str::to_string);
        Outbound::Error { field, msg }
    })
}
