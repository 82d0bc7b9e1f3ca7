//! End-to-end embedding and the three-stage extraction cascade.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ldpc::{LdpcCode, DEFAULT_MAX_ITER};
use crate::modem::{self, LatentShape, LatentTensor, SecretKey};
use crate::{bits, Error, Result};

/// Default assumed channel SNR in dB used to scale decoder LLRs.
pub const DEFAULT_SNR_DB: f64 = 0.0;
/// Default redundancy.
pub const DEFAULT_REDUNDANCY: usize = 16;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub code: Arc<LdpcCode>,
    /// Number of codeword copies in the latent.
    pub m: usize,
    pub key: SecretKey,
    pub assumed_snr_db: f64,
    pub shape: LatentShape,
    pub max_iter: usize,
}

impl PipelineConfig {
    pub fn new(
        code: Arc<LdpcCode>,
        m: usize,
        key: SecretKey,
        assumed_snr_db: f64,
        shape: LatentShape,
    ) -> Result<Self> {
        let cfg = PipelineConfig {
            code,
            m,
            key,
            assumed_snr_db,
            shape,
            max_iter: DEFAULT_MAX_ITER,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::ConfigMismatch("redundancy m must be at least 1".into()));
        }
        if self.code.n() * self.m != self.shape.len() {
            return Err(Error::ConfigMismatch(format!(
                "n * m = {} * {} does not fill P = {}",
                self.code.n(),
                self.m,
                self.shape.len()
            )));
        }
        if !self.assumed_snr_db.is_finite() {
            return Err(Error::ConfigMismatch("assumed SNR must be finite".into()));
        }
        Ok(())
    }

    /// LLR per unit of soft value: `2 / sigma^2` with
    /// `sigma^2 = 10^(-snr_db / 10)` for unit signal power.
    pub fn llr_scale(&self) -> f64 {
        2.0 * 10f64.powf(self.assumed_snr_db / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractionStatus {
    /// Copy `copy_index` decoded on its own (lowest such index).
    ExactSingle { copy_index: usize },
    /// No copy decoded; the majority-voted codeword did.
    ExactVoted,
    /// Nothing decoded; the voted systematic bits are only fit for
    /// threshold verification.
    VerifyOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionResult {
    pub status: ExtractionStatus,
    /// k recovered bits. For `VerifyOnly` these are the systematic bits of
    /// the voted word.
    #[serde(serialize_with = "bits::serialize_bitstring")]
    pub info_bits: Vec<u8>,
    #[serde(serialize_with = "bits::serialize_bitstring")]
    pub voted_codeword: Vec<u8>,
    /// Whether each copy decoded to a parity-satisfying word.
    pub per_copy_parity: Vec<bool>,
    pub vote_invoked: bool,
}

impl ExtractionResult {
    pub fn is_exact(&self) -> bool {
        !matches!(self.status, ExtractionStatus::VerifyOnly)
    }
}

/// Extraction strategy. `Cascade` is the full pipeline; the other two are
/// ablations used to measure what each stage contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cascade,
    /// Per-copy decoding only. Without a success the systematic bits of
    /// copy 0's hard decisions are reported.
    DecodeOnly,
    /// Majority vote only; information bits are read from the voted word
    /// without decoding.
    VoteOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cascade, Variant::DecodeOnly, Variant::VoteOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cascade => "cascade",
            Variant::DecodeOnly => "decode_only",
            Variant::VoteOnly => "vote_only",
        }
    }
}

/// Results of all three variants computed from one shared scan.
#[derive(Debug, Clone)]
pub struct VariantResults {
    pub cascade: ExtractionResult,
    pub decode_only: ExtractionResult,
    pub vote_only: ExtractionResult,
}

impl VariantResults {
    pub fn get(&self, variant: Variant) -> &ExtractionResult {
        match variant {
            Variant::Cascade => &self.cascade,
            Variant::DecodeOnly => &self.decode_only,
            Variant::VoteOnly => &self.vote_only,
        }
    }
}

/// `sample_latent(randomize(repeat_expand(encode(info)), keystream))`.
pub fn embed(info: &[u8], cfg: &PipelineConfig, rng: &mut impl Rng) -> Result<LatentTensor> {
    cfg.validate()?;
    let codeword = cfg.code.encode(info)?;
    let expanded = modem::repeat_expand(&codeword, cfg.m);
    let keystream = modem::derive_keystream(&cfg.key, expanded.len());
    let s = modem::randomize(&expanded, &keystream)?;
    modem::sample_latent(&s, cfg.shape, rng)
}

/// Soft-sum majority vote. Returns the voted hard word (positive sum means
/// bit 1, exact zero means bit 0) and the per-position sums.
pub fn majority_vote(copies: &[&[f64]]) -> Result<(Vec<u8>, Vec<f64>)> {
    let Some(first) = copies.first() else {
        return Err(Error::ConfigMismatch("majority vote needs at least one copy".into()));
    };
    let n = first.len();
    let mut sums = vec![0.0; n];
    for copy in copies {
        if copy.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: copy.len(),
            });
        }
        sums.iter_mut().zip(*copy).for_each(|(s, v)| *s += v);
    }
    let hard = sums.iter().map(|&s| bits::hard(s)).collect();
    Ok((hard, sums))
}

struct Scan {
    soft: Vec<f64>,
    decoded: Vec<Option<Vec<u8>>>,
    voted: Vec<u8>,
}

fn scan(z: &LatentTensor, cfg: &PipelineConfig) -> Result<Scan> {
    cfg.validate()?;
    if z.shape() != cfg.shape {
        return Err(Error::ConfigMismatch(format!(
            "latent shape {:?} does not match configured {:?}",
            z.shape(),
            cfg.shape
        )));
    }
    let n = cfg.code.n();
    let keystream = modem::derive_keystream(&cfg.key, z.len());
    let soft = modem::demodulate_soft(z, &keystream)?;
    let scale = cfg.llr_scale();
    let mut decoded = Vec::with_capacity(cfg.m);
    let mut llrs = vec![0.0; n];
    for copy in soft.chunks_exact(n) {
        // Positive soft value means bit 1, positive LLR favors bit 0.
        llrs.iter_mut().zip(copy).for_each(|(l, &y)| *l = -scale * y);
        decoded.push(cfg.code.decode(&llrs, cfg.max_iter)?.codeword);
    }
    let copies: Vec<&[f64]> = soft.chunks_exact(n).collect();
    let (voted, _) = majority_vote(&copies)?;
    Ok(Scan {
        soft,
        decoded,
        voted,
    })
}

fn decode_voted(voted: &[u8], cfg: &PipelineConfig) -> Result<Option<Vec<u8>>> {
    let scale = cfg.llr_scale();
    let llrs: Vec<f64> = voted
        .iter()
        .map(|&b| if b == 0 { scale } else { -scale })
        .collect();
    Ok(cfg.code.decode(&llrs, cfg.max_iter)?.codeword)
}

fn cascade_from(scan: &Scan, cfg: &PipelineConfig) -> Result<ExtractionResult> {
    let code = &cfg.code;
    let per_copy_parity: Vec<bool> = scan.decoded.iter().map(Option::is_some).collect();
    if let Some((copy_index, word)) = scan
        .decoded
        .iter()
        .enumerate()
        .find_map(|(i, w)| w.as_ref().map(|w| (i, w)))
    {
        return Ok(ExtractionResult {
            status: ExtractionStatus::ExactSingle { copy_index },
            info_bits: code.info_bits(word),
            voted_codeword: scan.voted.clone(),
            per_copy_parity,
            vote_invoked: false,
        });
    }
    let (status, info_bits) = match decode_voted(&scan.voted, cfg)? {
        Some(word) => (ExtractionStatus::ExactVoted, code.info_bits(&word)),
        None => (ExtractionStatus::VerifyOnly, code.info_bits(&scan.voted)),
    };
    Ok(ExtractionResult {
        status,
        info_bits,
        voted_codeword: scan.voted.clone(),
        per_copy_parity,
        vote_invoked: true,
    })
}

fn decode_only_from(scan: &Scan, cfg: &PipelineConfig) -> ExtractionResult {
    let code = &cfg.code;
    let per_copy_parity: Vec<bool> = scan.decoded.iter().map(Option::is_some).collect();
    let first_copy: Vec<u8> = scan.soft[..code.n()].iter().map(|&y| bits::hard(y)).collect();
    let (status, info_bits) = match scan
        .decoded
        .iter()
        .enumerate()
        .find_map(|(i, w)| w.as_ref().map(|w| (i, w)))
    {
        Some((copy_index, word)) => (
            ExtractionStatus::ExactSingle { copy_index },
            code.info_bits(word),
        ),
        None => (ExtractionStatus::VerifyOnly, code.info_bits(&first_copy)),
    };
    ExtractionResult {
        status,
        info_bits,
        voted_codeword: first_copy,
        per_copy_parity,
        vote_invoked: false,
    }
}

fn vote_only_from(scan: &Scan, cfg: &PipelineConfig) -> ExtractionResult {
    let code = &cfg.code;
    let status = if code.parity_check(&scan.voted).unwrap_or(false) {
        ExtractionStatus::ExactVoted
    } else {
        ExtractionStatus::VerifyOnly
    };
    ExtractionResult {
        status,
        info_bits: code.info_bits(&scan.voted),
        voted_codeword: scan.voted.clone(),
        per_copy_parity: scan.decoded.iter().map(Option::is_some).collect(),
        vote_invoked: true,
    }
}

/// Full cascade: first copy (ascending index) that decodes, else the decoded
/// majority vote, else the raw voted bits for verification only.
pub fn extract(z: &LatentTensor, cfg: &PipelineConfig) -> Result<ExtractionResult> {
    cascade_from(&scan(z, cfg)?, cfg)
}

pub fn extract_with(z: &LatentTensor, cfg: &PipelineConfig, variant: Variant) -> Result<ExtractionResult> {
    let scan = scan(z, cfg)?;
    match variant {
        Variant::Cascade => cascade_from(&scan, cfg),
        Variant::DecodeOnly => Ok(decode_only_from(&scan, cfg)),
        Variant::VoteOnly => Ok(vote_only_from(&scan, cfg)),
    }
}

/// All three variants on the same latent, sharing the per-copy decodes.
pub fn extract_variants(z: &LatentTensor, cfg: &PipelineConfig) -> Result<VariantResults> {
    let scan = scan(z, cfg)?;
    Ok(VariantResults {
        cascade: cascade_from(&scan, cfg)?,
        decode_only: decode_only_from(&scan, cfg),
        vote_only: vote_only_from(&scan, cfg),
    })
}
