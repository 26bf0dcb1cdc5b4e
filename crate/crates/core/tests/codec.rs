use amr_core::protocol::{
    crc16, decode_datagram, decode_frame, decode_prefix, encode_frame, DecodeErrorKind, Frame, ReadingPayload,
    BROADCAST,
};
use proptest::prelude::*;

/// Bit-at-a-time CRC-16/CCITT-FALSE, written from the definition.
fn crc_bitwise(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        for i in (0..8).rev() {
            let bit = (byte >> i) & 1 == 1;
            let top = crc & 0x8000 != 0;
            crc <<= 1;
            if top != bit {
                crc ^= 0x1021;
            }
        }
    }
    crc
}

fn frame() -> impl Strategy<Value = Frame> {
    let addr = any::<u32>().prop_filter("not broadcast", |a| *a != BROADCAST);
    prop_oneof![
        (addr.clone(), addr.clone(), any::<u8>()).prop_map(|(s, d, q)| Frame::poll_unicast(s, d, q)),
        (addr.clone(), addr.clone(), any::<u8>()).prop_map(|(s, t, q)| Frame::poll_selective(s, t, q)),
        (
            addr.clone(),
            addr.clone(),
            any::<u8>(),
            any::<u32>(),
            any::<u32>(),
            any::<u8>()
        )
            .prop_map(|(s, d, q, register, timestamp, status_flags)| Frame::reading(
                s,
                d,
                q,
                ReadingPayload {
                    register,
                    timestamp,
                    status_flags
                }
            )),
        (addr.clone(), addr.clone(), any::<u8>()).prop_map(|(s, d, q)| Frame::ack(s, d, q)),
        (addr.clone(), addr, any::<u8>(), any::<u8>()).prop_map(|(s, d, q, f)| Frame::tamper(s, d, q, f)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decode_inverts_encode(f in frame()) {
        let bytes = encode_frame(&f).unwrap();
        prop_assert_eq!(bytes.len(), f.encoded_len());
        prop_assert_eq!(&decode_frame(&bytes).unwrap(), &f);
        prop_assert_eq!(&decode_datagram(&bytes).unwrap(), &f);
        let (g, used) = decode_prefix(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(g, f);
    }

    #[test]
    fn strict_prefixes_are_truncated(f in frame(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_frame(&f).unwrap();
        let n = cut.index(bytes.len());
        let err = decode_frame(&bytes[..n]).unwrap_err();
        prop_assert_eq!(err.kind(), DecodeErrorKind::Truncated);
    }

    #[test]
    fn stream_decoding_splits_concatenations(a in frame(), b in frame()) {
        let mut bytes = encode_frame(&a).unwrap();
        bytes.extend(encode_frame(&b).unwrap());
        let (x, used) = decode_prefix(&bytes).unwrap();
        prop_assert_eq!(x, a);
        let (y, rest) = decode_prefix(&bytes[used..]).unwrap();
        prop_assert_eq!(y, b);
        prop_assert_eq!(used + rest, bytes.len());
    }

    #[test]
    fn any_single_bit_flip_is_rejected(f in frame(), pos in any::<prop::sample::Index>()) {
        let bytes = encode_frame(&f).unwrap();
        let bit = pos.index(bytes.len() * 8);
        let mut b = bytes.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        let kind = decode_datagram(&b).unwrap_err().kind();
        if bit < 16 {
            prop_assert_eq!(kind, DecodeErrorKind::BadSync);
        } else {
            prop_assert_eq!(kind, DecodeErrorKind::BadCrc);
        }
    }

    #[test]
    fn table_crc_matches_bitwise(data in prop::collection::vec(any::<u8>(), 0..300)) {
        prop_assert_eq!(crc16(&data), crc_bitwise(&data));
    }

    #[test]
    fn garbage_never_panics(data in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = decode_frame(&data);
        let _ = decode_datagram(&data);
        let _ = decode_prefix(&data);
    }
}

#[test]
fn check_value() {
    assert_eq!(crc_bitwise(b"123456789"), 0x29B1);
    assert_eq!(crc16(b"123456789"), 0x29B1);
}
