use std::fmt::Write;

use super::frame::{FrameType, LEN_OFFSET, OVERHEAD, SYNC};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(" ")
}

/// Space-separated uppercase hex, e.g. `A5 5A 11 ...`.
pub fn to_hex(bytes: &[u8]) -> String {
    hex(bytes)
}

/// Renders an encoded frame one field per line with annotations.
///
/// Works on damaged input too: fields that cannot be located are shown as
/// raw trailing bytes.
pub fn annotate(bytes: &[u8]) -> String {
    let mut out = String::new();
    let mut field = |range: std::ops::Range<usize>, label: &str, note: String| {
        if range.start >= bytes.len() {
            return;
        }
        let end = range.end.min(bytes.len());
        let _ = writeln!(out, "{:<36} {label}{note}", hex(&bytes[range.start..end]));
    };
    let sync_note = if bytes.get(..2) == Some(&SYNC[..]) {
        String::new()
    } else {
        " (bad)".to_string()
    };
    field(0..2, "sync", sync_note);
    if let Some(&vt) = bytes.get(2) {
        let kind = FrameType::from_nibble(vt & 0x0F)
            .map(|k| k.as_str().to_string())
            .unwrap_or_else(|| "?".to_string());
        field(2..3, "version/type", format!(" v{} {kind}", vt >> 4));
    }
    let be32 = |at: usize| -> String {
        bytes
            .get(at..at + 4)
            .map(|b| format!(" {:#010x}", u32::from_be_bytes(b.try_into().unwrap())))
            .unwrap_or_default()
    };
    field(3..7, "src", be32(3));
    field(7..11, "dst", be32(7));
    field(
        11..12,
        "seq",
        bytes.get(11).map(|s| format!(" {s}")).unwrap_or_default(),
    );
    let Some(&len) = bytes.get(LEN_OFFSET) else {
        return out;
    };
    let len = usize::from(len);
    field(12..13, "len", format!(" {len}"));
    let payload_end = (LEN_OFFSET + 1 + len).min(bytes.len());
    if len > 0 {
        field(LEN_OFFSET + 1..payload_end, "payload", String::new());
    }
    let crc_end = OVERHEAD + len;
    field(payload_end..crc_end, "crc", String::new());
    if bytes.len() > crc_end {
        field(crc_end..bytes.len(), "trailing", String::new());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{encode_frame, Frame};

    #[test]
    fn annotates_poll() {
        let enc = encode_frame(&Frame::poll_unicast(0, 7, 0)).unwrap();
        let text = annotate(&enc);
        assert!(text.starts_with("A5 5A"));
        assert!(text.contains("v1 POLL"));
        assert!(text.contains("dst 0x00000007"));
        assert_eq!(text.lines().count(), 7);
        assert!(to_hex(&enc).starts_with("A5 5A 11 00 00 00 00 00 00 00 07 00 00"));
    }

    #[test]
    fn tolerates_garbage() {
        assert_eq!(annotate(&[]), "");
        let text = annotate(&[0x00, 0x01, 0x99]);
        assert!(text.contains("(bad)"));
        assert!(text.contains("v9 ?"));
    }
}
