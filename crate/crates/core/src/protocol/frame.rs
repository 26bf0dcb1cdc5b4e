use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::crc::crc16;

/// Two sync bytes open every frame on the air.
pub const SYNC: [u8; 2] = [0xA5, 0x5A];

/// Only protocol version on the wire.
pub const VERSION: u8 = 1;

/// Destination of a selective broadcast poll. Every radio hears it; the
/// payload names the one meter that should answer.
pub const BROADCAST: u32 = 0xFFFF_FFFF;

/// Address the head-end uses as frame source and reply destination.
pub const HEADEND_ADDRESS: u32 = 0;

/// Sync(2) + version/type(1) + src(4) + dst(4) + seq(1) + len(1) + crc(2).
pub const OVERHEAD: usize = 15;

pub const MAX_PAYLOAD: usize = 255;

pub const MAX_FRAME_LEN: usize = OVERHEAD + MAX_PAYLOAD;

pub const READING_PAYLOAD_LEN: usize = 9;

/// Offset of the length byte inside an encoded frame.
pub(crate) const LEN_OFFSET: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum FrameType {
    Poll = 0x1,
    Reading = 0x2,
    Ack = 0x3,
    Tamper = 0x4,
}

impl FrameType {
    pub fn from_nibble(n: u8) -> Option<Self> {
        match n {
            0x1 => Some(Self::Poll),
            0x2 => Some(Self::Reading),
            0x3 => Some(Self::Ack),
            0x4 => Some(Self::Tamper),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Poll => "POLL",
            Self::Reading => "READING",
            Self::Ack => "ACK",
            Self::Tamper => "TAMPER",
        }
    }
}

impl fmt::Display for FrameType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One link-layer frame, minus the CRC (computed on encode, checked on
/// decode).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub kind: FrameType,
    pub src: u32,
    pub dst: u32,
    pub seq: u8,
    pub payload: Vec<u8>,
}

/// Decoded body of a READING frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReadingPayload {
    pub register: u32,
    /// Whole simulated seconds at the meter when the reading was taken.
    pub timestamp: u32,
    pub status_flags: u8,
}

impl ReadingPayload {
    pub fn to_bytes(self) -> [u8; READING_PAYLOAD_LEN] {
        let mut out = [0u8; READING_PAYLOAD_LEN];
        out[0..4].copy_from_slice(&self.register.to_be_bytes());
        out[4..8].copy_from_slice(&self.timestamp.to_be_bytes());
        out[8] = self.status_flags;
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != READING_PAYLOAD_LEN {
            return None;
        }
        Some(Self {
            register: u32::from_be_bytes(bytes[0..4].try_into().ok()?),
            timestamp: u32::from_be_bytes(bytes[4..8].try_into().ok()?),
            status_flags: bytes[8],
        })
    }
}

/// The payload does not have the shape its frame type requires.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} frame to {dst:#010x} cannot carry a {len}-byte payload")]
pub struct PayloadError {
    pub kind: FrameType,
    pub dst: u32,
    pub len: usize,
}

impl Frame {
    /// Poll addressed directly to one meter; empty payload.
    pub fn poll_unicast(src: u32, dst: u32, seq: u8) -> Self {
        Self {
            kind: FrameType::Poll,
            src,
            dst,
            seq,
            payload: Vec::new(),
        }
    }

    /// Poll broadcast to every radio, carrying the target address.
    pub fn poll_selective(src: u32, target: u32, seq: u8) -> Self {
        Self {
            kind: FrameType::Poll,
            src,
            dst: BROADCAST,
            seq,
            payload: target.to_be_bytes().to_vec(),
        }
    }

    pub fn reading(src: u32, dst: u32, seq: u8, body: ReadingPayload) -> Self {
        Self {
            kind: FrameType::Reading,
            src,
            dst,
            seq,
            payload: body.to_bytes().to_vec(),
        }
    }

    pub fn ack(src: u32, dst: u32, seq: u8) -> Self {
        Self {
            kind: FrameType::Ack,
            src,
            dst,
            seq,
            payload: Vec::new(),
        }
    }

    pub fn tamper(src: u32, dst: u32, seq: u8, status_flags: u8) -> Self {
        Self {
            kind: FrameType::Tamper,
            src,
            dst,
            seq,
            payload: vec![status_flags],
        }
    }

    /// Checks the payload length against the frame type.
    ///
    /// POLL: 0 bytes unicast, 4 bytes broadcast. READING: 9. ACK: 0.
    /// TAMPER: 1 (the status flag byte).
    pub fn validate(&self) -> Result<(), PayloadError> {
        let len = self.payload.len();
        let ok = match self.kind {
            FrameType::Poll if self.dst == BROADCAST => len == 4,
            FrameType::Poll => len == 0,
            FrameType::Reading => len == READING_PAYLOAD_LEN,
            FrameType::Ack => len == 0,
            FrameType::Tamper => len == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(PayloadError {
                kind: self.kind,
                dst: self.dst,
                len,
            })
        }
    }

    /// The meter a POLL is asking for, whichever addressing form it uses.
    pub fn poll_target(&self) -> Result<u32, PayloadError> {
        self.validate()?;
        match (self.kind, self.dst) {
            (FrameType::Poll, BROADCAST) => Ok(u32::from_be_bytes(self.payload[..4].try_into().unwrap())),
            (FrameType::Poll, dst) => Ok(dst),
            _ => Err(PayloadError {
                kind: self.kind,
                dst: self.dst,
                len: self.payload.len(),
            }),
        }
    }

    pub fn reading_payload(&self) -> Result<ReadingPayload, PayloadError> {
        let err = || PayloadError {
            kind: self.kind,
            dst: self.dst,
            len: self.payload.len(),
        };
        if self.kind != FrameType::Reading {
            return Err(err());
        }
        ReadingPayload::from_bytes(&self.payload).ok_or_else(err)
    }

    /// Size of this frame on the wire.
    pub fn encoded_len(&self) -> usize {
        OVERHEAD + self.payload.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds the 255-byte limit")]
    PayloadTooLong(usize),
    #[error(transparent)]
    Payload(#[from] PayloadError),
}

/// Why a byte sequence is not a frame. Each variant is counted separately
/// by receivers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("sync bytes missing")]
    BadSync,
    #[error("truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("crc mismatch: computed {computed:#06x}, received {received:#06x}")]
    BadCrc { computed: u16, received: u16 },
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown frame type {0:#x}")]
    BadType(u8),
    #[error(transparent)]
    BadPayload(#[from] PayloadError),
    #[error("length byte declares {declared} payload bytes but the datagram carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("{0} bytes follow the frame")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecodeErrorKind {
    BadSync,
    Truncated,
    BadCrc,
    BadVersion,
    BadType,
    BadPayload,
    LengthMismatch,
    TrailingBytes,
}

impl DecodeError {
    pub fn kind(&self) -> DecodeErrorKind {
        match self {
            Self::BadSync => DecodeErrorKind::BadSync,
            Self::Truncated { .. } => DecodeErrorKind::Truncated,
            Self::BadCrc { .. } => DecodeErrorKind::BadCrc,
            Self::BadVersion(_) => DecodeErrorKind::BadVersion,
            Self::BadType(_) => DecodeErrorKind::BadType,
            Self::BadPayload(_) => DecodeErrorKind::BadPayload,
            Self::LengthMismatch { .. } => DecodeErrorKind::LengthMismatch,
            Self::TrailingBytes(_) => DecodeErrorKind::TrailingBytes,
        }
    }
}

/// Serializes `frame`, computing its CRC.
///
/// Layout: `A5 5A | ver<<4|type | src(4) | dst(4) | seq | len | payload | crc(2)`,
/// all multi-byte fields big-endian. The CRC covers the version/type byte
/// through the last payload byte.
pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, EncodeError> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(EncodeError::PayloadTooLong(frame.payload.len()));
    }
    frame.validate()?;
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&SYNC);
    out.push((VERSION << 4) | frame.kind as u8);
    out.extend_from_slice(&frame.src.to_be_bytes());
    out.extend_from_slice(&frame.dst.to_be_bytes());
    out.push(frame.seq);
    out.push(frame.payload.len() as u8);
    out.extend_from_slice(&frame.payload);
    let crc = crc16(&out[SYNC.len()..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

fn check_sync(bytes: &[u8]) -> Result<(), DecodeError> {
    let n = bytes.len().min(SYNC.len());
    if bytes[..n] != SYNC[..n] {
        return Err(DecodeError::BadSync);
    }
    if n < SYNC.len() {
        return Err(DecodeError::Truncated {
            needed: OVERHEAD,
            have: bytes.len(),
        });
    }
    Ok(())
}

/// Parses header and payload of an already length-checked, CRC-verified
/// frame image.
fn parse_verified(image: &[u8]) -> Result<Frame, DecodeError> {
    let vt = image[2];
    if vt >> 4 != VERSION {
        return Err(DecodeError::BadVersion(vt >> 4));
    }
    let kind = FrameType::from_nibble(vt & 0x0F).ok_or(DecodeError::BadType(vt & 0x0F))?;
    let len = usize::from(image[LEN_OFFSET]);
    let frame = Frame {
        kind,
        src: u32::from_be_bytes(image[3..7].try_into().unwrap()),
        dst: u32::from_be_bytes(image[7..11].try_into().unwrap()),
        seq: image[11],
        payload: image[LEN_OFFSET + 1..LEN_OFFSET + 1 + len].to_vec(),
    };
    frame.validate()?;
    Ok(frame)
}

fn verify_crc(image: &[u8]) -> Result<(), DecodeError> {
    let end = image.len() - 2;
    let computed = crc16(&image[SYNC.len()..end]);
    let received = u16::from_be_bytes([image[end], image[end + 1]]);
    if computed != received {
        return Err(DecodeError::BadCrc { computed, received });
    }
    Ok(())
}

/// Decodes the first frame of a byte stream, returning it with the number
/// of bytes it occupied.
///
/// Stream semantics: when the buffer is shorter than the length the header
/// declares, the answer is [`DecodeError::Truncated`], because more bytes may
/// still arrive. A strict prefix of a valid encoding therefore never decodes
/// to a frame.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Frame, usize), DecodeError> {
    check_sync(bytes)?;
    if bytes.len() <= LEN_OFFSET {
        return Err(DecodeError::Truncated {
            needed: OVERHEAD,
            have: bytes.len(),
        });
    }
    let total = OVERHEAD + usize::from(bytes[LEN_OFFSET]);
    if bytes.len() < total {
        return Err(DecodeError::Truncated {
            needed: total,
            have: bytes.len(),
        });
    }
    let image = &bytes[..total];
    verify_crc(image)?;
    Ok((parse_verified(image)?, total))
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, DecodeError> {
    let (frame, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - used));
    }
    Ok(frame)
}

/// Decodes one radio datagram whose boundary came from the physical layer.
///
/// The datagram length is authoritative, so the CRC is checked over the
/// bytes actually received before the length byte is trusted. A corrupted
/// length byte then shows up as [`DecodeError::BadCrc`] rather than as a
/// request for more bytes.
pub fn decode_datagram(bytes: &[u8]) -> Result<Frame, DecodeError> {
    check_sync(bytes)?;
    if bytes.len() < OVERHEAD {
        return Err(DecodeError::Truncated {
            needed: OVERHEAD,
            have: bytes.len(),
        });
    }
    verify_crc(bytes)?;
    let declared = usize::from(bytes[LEN_OFFSET]);
    let actual = bytes.len() - OVERHEAD;
    if declared != actual {
        return Err(DecodeError::LengthMismatch { declared, actual });
    }
    parse_verified(bytes)
}
