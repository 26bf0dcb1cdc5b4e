//! Wire format for all meter and head-end traffic.
//!
//! ```text
//! A5 5A | ver:4 type:4 | src:32 | dst:32 | seq:8 | len:8 | payload[len] | crc:16
//! ```
//!
//! Multi-byte fields are big-endian. The CRC is CRC-16/CCITT-FALSE over
//! everything between the sync bytes and the CRC itself.

mod crc;
mod frame;
pub mod hexdump;

pub use crc::crc16;
pub use frame::{
    decode_datagram, decode_frame, decode_prefix, encode_frame, DecodeError, DecodeErrorKind, EncodeError, Frame,
    FrameType, PayloadError, ReadingPayload, BROADCAST, HEADEND_ADDRESS, MAX_FRAME_LEN, MAX_PAYLOAD, OVERHEAD,
    READING_PAYLOAD_LEN, SYNC, VERSION,
};

/// Parses a meter address written in decimal or as `0x`-prefixed hex.
/// The reserved head-end and broadcast addresses are rejected.
pub fn parse_address(s: &str) -> Result<u32, String> {
    let t = s.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16),
        None => t.parse(),
    };
    match parsed {
        Ok(HEADEND_ADDRESS) | Ok(BROADCAST) => Err(format!("address {t} is reserved")),
        Ok(a) => Ok(a),
        Err(e) => Err(format!("invalid meter address `{t}`: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn addresses_parse_in_both_radixes() {
        assert_eq!(parse_address("42"), Ok(42));
        assert_eq!(parse_address("0x2A"), Ok(42));
        assert_eq!(parse_address(" 0x0000002a "), Ok(42));
        assert!(parse_address("0").is_err());
        assert!(parse_address("0xffffffff").is_err());
        assert!(parse_address("2a").is_err());
        assert!(parse_address("4294967296").is_err());
    }
}
