//! Structured rights record packed into the k-bit watermark.
//!
//! Layout (big-endian, bit 0 is the MSB of `licensor_id`):
//!
//! | bits      | field              |
//! |-----------|--------------------|
//! | 0..64     | `licensor_id`      |
//! | 64..128   | `licensee_id`      |
//! | 128..192  | `timestamp`        |
//! | 192..224  | `permission_flags` |
//! | 224..256  | CRC-32 of bits 0..224 |

use serde::{Deserialize, Serialize};

use crate::{bits, Error, Result};

/// Watermark capacity in bits.
pub const PAYLOAD_BITS: usize = 256;
const BODY_BYTES: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct WatermarkPayload {
    pub licensor_id: u64,
    pub licensee_id: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// Opaque permission bits.
    pub permission_flags: u32,
    /// CRC-32 over the preceding fields. Recomputed by [`pack_record`].
    #[serde(default)]
    pub checksum: u32,
}

impl WatermarkPayload {
    /// Builds a record with a valid checksum.
    pub fn new(licensor_id: u64, licensee_id: u64, timestamp: u64, permission_flags: u32) -> Self {
        let mut record = WatermarkPayload {
            licensor_id,
            licensee_id,
            timestamp,
            permission_flags,
            checksum: 0,
        };
        record.checksum = crc32fast::hash(&record.body());
        record
    }

    fn body(&self) -> [u8; BODY_BYTES] {
        let mut out = [0u8; BODY_BYTES];
        out[0..8].copy_from_slice(&self.licensor_id.to_be_bytes());
        out[8..16].copy_from_slice(&self.licensee_id.to_be_bytes());
        out[16..24].copy_from_slice(&self.timestamp.to_be_bytes());
        out[24..28].copy_from_slice(&self.permission_flags.to_be_bytes());
        out
    }
}

/// Packs a record into exactly [`PAYLOAD_BITS`] bits. The stored checksum is
/// ignored and recomputed.
pub fn pack_record(record: &WatermarkPayload) -> Vec<u8> {
    let body = record.body();
    let mut bytes = Vec::with_capacity(PAYLOAD_BITS / 8);
    bytes.extend_from_slice(&body);
    bytes.extend_from_slice(&crc32fast::hash(&body).to_be_bytes());
    bits::from_bytes(&bytes)
}

/// Decodes a packed record, failing with [`Error::ChecksumMismatch`] when the
/// trailing CRC does not match the body.
pub fn unpack_record(packed: &[u8]) -> Result<WatermarkPayload> {
    if packed.len() != PAYLOAD_BITS {
        return Err(Error::WrongLength {
            expected: PAYLOAD_BITS,
            actual: packed.len(),
        });
    }
    let bytes = bits::to_bytes(packed);
    let word = |r: std::ops::Range<usize>| -> u64 {
        bytes[r].iter().fold(0u64, |acc, &b| (acc << 8) | u64::from(b))
    };
    let stored = word(28..32) as u32;
    let computed = crc32fast::hash(&bytes[..BODY_BYTES]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(WatermarkPayload {
        licensor_id: word(0..8),
        licensee_id: word(8..16),
        timestamp: word(16..24),
        permission_flags: word(24..28) as u32,
        checksum: stored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Bitwise reflected CRC-32 (poly 0xEDB88320), independent of crc32fast.
    fn crc32_bitwise(data: &[u8]) -> u32 {
        let mut crc = 0xffff_ffffu32;
        for &byte in data {
            crc ^= u32::from(byte);
            for _ in 0..8 {
                let mask = (crc & 1).wrapping_neg();
                crc = (crc >> 1) ^ (0xedb8_8320 & mask);
            }
        }
        !crc
    }

    fn random_record(rng: &mut impl Rng) -> WatermarkPayload {
        WatermarkPayload::new(rng.random(), rng.random(), rng.random(), rng.random())
    }

    #[test]
    fn zero_record_layout() {
        let packed = pack_record(&WatermarkPayload::default());
        assert_eq!(packed.len(), PAYLOAD_BITS);
        assert!(packed[..224].iter().all(|&b| b == 0));
        let crc = crc32_bitwise(&[0u8; 28]);
        assert_eq!(bits::to_bytes(&packed[224..]), crc.to_be_bytes().to_vec());
    }

    #[test]
    fn msb_of_licensor_is_bit_zero() {
        let packed = pack_record(&WatermarkPayload::new(1 << 63, 0, 0, 0));
        assert_eq!(packed[0], 1);
        assert!(packed[1..224].iter().all(|&b| b == 0));
    }

    #[test]
    fn checksum_is_recomputed_on_pack() {
        let mut record = WatermarkPayload::new(7, 8, 9, 10);
        let good = record.checksum;
        record.checksum = 0xdead_beef;
        let back = unpack_record(&pack_record(&record)).unwrap();
        assert_eq!(back.checksum, good);
    }

    #[test]
    fn round_trip_random_records() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let r = random_record(&mut rng);
            assert_eq!(unpack_record(&pack_record(&r)).unwrap(), r);
        }
    }

    #[test]
    fn random_bits_with_bad_crc_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rejected = 0;
        for _ in 0..100 {
            let packed: Vec<u8> = (0..PAYLOAD_BITS).map(|_| rng.random_range(0..2)).collect();
            let bytes = bits::to_bytes(&packed);
            let expected = crc32_bitwise(&bytes[..28]);
            let stored = u32::from_be_bytes(bytes[28..32].try_into().unwrap());
            if stored == expected {
                assert!(unpack_record(&packed).is_ok());
            } else {
                rejected += 1;
                assert!(matches!(
                    unpack_record(&packed),
                    Err(Error::ChecksumMismatch { computed, .. }) if computed == expected
                ));
            }
        }
        assert_eq!(rejected, 100);
    }

    #[test]
    fn wrong_length() {
        assert!(matches!(
            unpack_record(&[0u8; 255]),
            Err(Error::WrongLength { expected: 256, actual: 255 })
        ));
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let packed = pack_record(&random_record(&mut rng));
            for i in 0..PAYLOAD_BITS {
                let mut flipped = packed.clone();
                flipped[i] ^= 1;
                assert!(matches!(
                    unpack_record(&flipped),
                    Err(Error::ChecksumMismatch { .. })
                ));
            }
        }
    }

    proptest! {
        #[test]
        fn pack_unpack_bijection(a: u64, b: u64, t: u64, f: u32) {
            let r = WatermarkPayload::new(a, b, t, f);
            let packed = pack_record(&r);
            prop_assert_eq!(packed.len(), PAYLOAD_BITS);
            prop_assert_eq!(unpack_record(&packed).unwrap(), r);
        }
    }
}
