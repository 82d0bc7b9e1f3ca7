//! Helpers for bit vectors stored one bit per `u8` (values 0 or 1).

use crate::{Error, Result};

/// Packs 0/1 bits MSB-first into bytes. The length must be a multiple of 8.
pub fn to_bytes(bits: &[u8]) -> Vec<u8> {
    debug_assert!(bits.len() % 8 == 0);
    bits.chunks(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)))
        .collect()
}

/// Unpacks bytes MSB-first into 0/1 bits.
pub fn from_bytes(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1))
        .collect()
}

pub fn to_hex(bits: &[u8]) -> String {
    hex::encode(to_bytes(bits))
}

pub fn from_hex(s: &str) -> Result<Vec<u8>> {
    let bytes = hex::decode(s.trim()).map_err(|e| Error::Format(format!("bad hex: {e}")))?;
    Ok(from_bytes(&bytes))
}

/// Packs bits into `u64` words, bit `i` at position `i % 64` of word `i / 64`.
pub fn pack_words(bits: &[u8]) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64)];
    for (i, &b) in bits.iter().enumerate() {
        words[i / 64] |= u64::from(b & 1) << (i % 64);
    }
    words
}

/// Number of positions where `a` and `b` agree. Both must have equal length.
pub fn matches(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x == y).count()
}

/// Serializes a bit vector as a string of `0` and `1` characters.
pub fn serialize_bitstring<S: serde::Serializer>(bits: &[u8], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect::<String>())
}

/// Hard decision of a real value: 1 iff strictly positive.
#[inline]
pub fn hard(v: f64) -> u8 {
    u8::from(v > 0.0)
}
