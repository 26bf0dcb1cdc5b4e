//! CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.

const POLY: u16 = 0x1021;
const INIT: u16 = 0xFFFF;

static TABLE: [u16; 256] = build_table();

const fn build_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ POLY } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// Table-driven CRC-16/CCITT-FALSE over `bytes`.
pub fn crc16(bytes: &[u8]) -> u16 {
    bytes
        .iter()
        .fold(INIT, |crc, &b| (crc << 8) ^ TABLE[usize::from((crc >> 8) as u8 ^ b)])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Polynomial long division over GF(2), one message bit at a time.
    /// Shares nothing with the table path above.
    fn long_division(bytes: &[u8]) -> u16 {
        // Augment the message with 16 zero bits and divide by the 17-bit
        // generator x^16 + x^12 + x^5 + 1. The 0xFFFF init is equivalent to
        // inverting the first 16 message bits.
        let mut bits: Vec<u8> = Vec::with_capacity(bytes.len() * 8 + 16);
        for &b in bytes {
            for i in (0..8).rev() {
                bits.push((b >> i) & 1);
            }
        }
        bits.extend(std::iter::repeat_n(0, 16));
        for bit in bits.iter_mut().take(16) {
            *bit ^= 1;
        }
        let generator: [u8; 17] = [1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];
        for i in 0..bits.len() - 16 {
            if bits[i] == 1 {
                for (j, g) in generator.iter().enumerate() {
                    bits[i + j] ^= g;
                }
            }
        }
        bits[bits.len() - 16..]
            .iter()
            .fold(0u16, |acc, &b| (acc << 1) | u16::from(b))
    }

    #[test]
    fn check_value() {
        assert_eq!(long_division(b"123456789"), 0x29B1);
        assert_eq!(crc16(b"123456789"), 0x29B1);
    }

    #[test]
    fn empty_is_init() {
        assert_eq!(crc16(&[]), 0xFFFF);
        assert_eq!(long_division(&[]), 0xFFFF);
    }

    #[test]
    fn every_single_bit_flip_changes_crc() {
        let x: Vec<u8> = (0u8..32).map(|i| i.wrapping_mul(37).wrapping_add(11)).collect();
        let base = crc16(&x);
        for pos in 0..x.len() * 8 {
            let mut y = x.clone();
            y[pos / 8] ^= 0x80 >> (pos % 8);
            assert_ne!(crc16(&y), base, "bit {pos}");
        }
    }

    #[test]
    fn table_matches_long_division() {
        let mut state = 0x1234_5678u32;
        for len in 0..64 {
            let msg: Vec<u8> = (0..len)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 17;
                    state ^= state << 5;
                    state as u8
                })
                .collect();
            assert_eq!(crc16(&msg), long_division(&msg), "len {len}");
        }
    }
}
