//! Repetition, keyed scrambling and sign modulation into a latent tensor.
//!
//! Bit convention: a positive latent value carries bit 1, a negative one bit 0,
//! and an exact zero reads as bit 0.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{bits, mix64, Error, Result};

const GSLT_MAGIC: &[u8; 4] = b"GSLT";
const GSLT_VERSION: u16 = 1;
const GSLT_HEADER: usize = 16;

/// 256-bit watermarking key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SecretKey(pub [u8; 32]);

impl SecretKey {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill(&mut bytes);
        SecretKey(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::Format(format!("bad key hex: {e}")))?;
        let bytes: [u8; 32] = bytes
            .try_into()
            .map_err(|v: Vec<u8>| Error::Format(format!("key must be 32 bytes, got {}", v.len())))?;
        Ok(SecretKey(bytes))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    fn words(&self) -> [u64; 4] {
        std::array::from_fn(|i| u64::from_le_bytes(self.0[8 * i..8 * i + 8].try_into().unwrap()))
    }
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// Keyed counter-mode bit stream.
///
/// Block `i` is `mix(mix(mix(mix(c ^ k0) ^ k1) ^ k2) ^ k3)` with
/// `c = (i + 1) * 0x9e3779b97f4a7c15`, the key read as four little-endian
/// words and `mix` the SplitMix64 finalizer. Bits are taken LSB first.
pub fn derive_keystream(key: &SecretKey, length: usize) -> Vec<u8> {
    let kw = key.words();
    let mut out = Vec::with_capacity(length);
    let mut block = 0u64;
    while out.len() < length {
        let counter = block.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let word = kw.iter().fold(counter, |acc, &k| mix64(acc ^ k));
        let take = (length - out.len()).min(64);
        out.extend((0..take).map(|i| ((word >> i) & 1) as u8));
        block += 1;
    }
    out
}

/// `m` block-ordered copies of `codeword`.
pub fn repeat_expand(codeword: &[u8], m: usize) -> Vec<u8> {
    codeword.repeat(m)
}

/// XOR with the keystream. Self-inverse.
pub fn randomize(bits: &[u8], keystream: &[u8]) -> Result<Vec<u8>> {
    if bits.len() != keystream.len() {
        return Err(Error::LengthMismatch {
            left: bits.len(),
            right: keystream.len(),
        });
    }
    Ok(bits.iter().zip(keystream).map(|(a, b)| a ^ b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        LatentShape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A near-square shape with `len` elements: four channels when `len` is
    /// divisible by four, then the most balanced height/width split.
    pub fn for_len(len: usize) -> Self {
        let channels = if len % 4 == 0 { 4 } else { 1 };
        let plane = len / channels;
        let mut height = (plane as f64).sqrt() as usize;
        while height > 1 && plane % height != 0 {
            height -= 1;
        }
        let height = height.max(1);
        LatentShape::new(channels, height, plane / height)
    }
}

impl Default for LatentShape {
    fn default() -> Self {
        LatentShape::new(4, 64, 64)
    }
}

/// Real-valued latent of shape `(C, H, W)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: LatentShape,
    values: Vec<f64>,
}

impl LatentTensor {
    pub fn new(shape: LatentShape, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Format("latent tensor must be non-empty".into()));
        }
        if values.len() != shape.len() {
            return Err(Error::WrongLength {
                expected: shape.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("latent tensor contains non-finite values".into()));
        }
        Ok(LatentTensor { shape, values })
    }

    pub fn shape(&self) -> LatentShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn hard_bits(&self) -> Vec<u8> {
        self.values.iter().map(|&v| bits::hard(v)).collect()
    }

    /// Writes the GSLT format: `"GSLT"`, version, C, H, W as little-endian
    /// `u16`, two pad bytes, then the values as little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dims = [self.shape.channels, self.shape.height, self.shape.width];
        let mut header = [0u8; GSLT_HEADER];
        header[..4].copy_from_slice(GSLT_MAGIC);
        header[4..6].copy_from_slice(&GSLT_VERSION.to_le_bytes());
        for (i, &d) in dims.iter().enumerate() {
            let d = u16::try_from(d)
                .map_err(|_| Error::Format(format!("dimension {d} does not fit in u16")))?;
            header[6 + 2 * i..8 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; GSLT_HEADER];
        r.read_exact(&mut header)?;
        if &header[..4] != GSLT_MAGIC {
            return Err(Error::Format("missing GSLT magic".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
        let version = u16_at(4);
        if version != GSLT_VERSION {
            return Err(Error::Format(format!("unsupported GSLT version {version}")));
        }
        let shape = LatentShape::new(
            usize::from(u16_at(6)),
            usize::from(u16_at(8)),
            usize::from(u16_at(10)),
        );
        let mut body = vec![0u8; 8 * shape.len()];
        r.read_exact(&mut body)?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        LatentTensor::new(shape, values)
    }
}

/// Draws `value_j = (-1)^(1 - s_j) * |eps_j|` with `eps_j ~ N(0, 1)`.
pub fn sample_latent(s: &[u8], shape: LatentShape, rng: &mut impl Rng) -> Result<LatentTensor> {
    if s.len() != shape.len() {
        return Err(Error::WrongLength {
            expected: shape.len(),
            actual: s.len(),
        });
    }
    let values = s
        .iter()
        .map(|&bit| {
            let magnitude = rng.sample::<f64, _>(StandardNormal).abs();
            if bit == 1 {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    LatentTensor::new(shape, values)
}

/// Derandomized soft values `y_j = (-1)^keystream_j * z_j`; positive means
/// bit 1. Magnitudes are untouched.
pub fn demodulate_soft(z: &LatentTensor, keystream: &[u8]) -> Result<Vec<f64>> {
    if z.len() != keystream.len() {
        return Err(Error::LengthMismatch {
            left: z.len(),
            right: keystream.len(),
        });
    }
    Ok(z.values
        .iter()
        .zip(keystream)
        .map(|(&v, &k)| if k == 1 { -v } else { v })
        .collect())
}
