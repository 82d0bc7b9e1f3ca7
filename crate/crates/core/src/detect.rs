//! Fixed-FPR threshold detection and multi-user tracing.

use std::io::{Read, Write};

use serde::Serialize;

use crate::stats::ln_binomial;
use crate::{bits, Error, Result};

/// Natural log of `P(Binomial(k, 1/2) >= t)`.
pub fn ln_tail_probability(k: usize, t: usize) -> f64 {
    if t > k {
        return f64::NEG_INFINITY;
    }
    let terms: Vec<f64> = (t..=k).map(|i| ln_binomial(k as u64, i as u64)).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|x| (x - max).exp()).sum::<f64>().ln() - k as f64 * std::f64::consts::LN_2
}

/// Smallest match count `t` such that a uniformly random k-bit string agrees
/// with a fixed reference in at least `t` positions with probability at most
/// `fpr`. Returns `k + 1` when even a perfect match is too likely.
pub fn bit_threshold(k: usize, fpr: f64) -> Result<usize> {
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::DomainError(format!("fpr = {fpr} outside (0, 1)")));
    }
    let ln_fpr = fpr.ln();
    let ln2k = k as f64 * std::f64::consts::LN_2;
    // Running log-sum-exp of ln C(k, i) from i = k downwards.
    let mut acc = f64::NEG_INFINITY;
    let mut best = k + 1;
    for t in (0..=k).rev() {
        let term = ln_binomial(k as u64, t as u64);
        acc = if acc == f64::NEG_INFINITY {
            term
        } else {
            let hi = acc.max(term);
            hi + ((acc - hi).exp() + (term - hi).exp()).ln()
        };
        // Relative slack absorbs rounding when the tail equals fpr exactly.
        if acc - ln2k <= ln_fpr + 1e-12 * ln_fpr.abs().max(1.0) {
            best = t;
        } else {
            break;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub bit_matches: usize,
    pub k: usize,
    pub bit_accuracy: f64,
    pub threshold_bits: usize,
    pub fpr_target: f64,
    pub detected: bool,
    pub exact: bool,
}

pub fn detect(extracted: &[u8], reference: &[u8], fpr: f64) -> Result<DetectionReport> {
    if extracted.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: extracted.len(),
            right: reference.len(),
        });
    }
    let k = reference.len();
    let bit_matches = bits::matches(extracted, reference);
    let threshold_bits = bit_threshold(k, fpr)?;
    Ok(DetectionReport {
        bit_matches,
        k,
        bit_accuracy: if k == 0 { 1.0 } else { bit_matches as f64 / k as f64 },
        threshold_bits,
        fpr_target: fpr,
        detected: bit_matches >= threshold_bits,
        exact: bit_matches == k,
    })
}

/// How the per-comparison FPR is derived when scanning a table of N users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// `fpr / N`, keeping the family-wise false positive rate at `fpr`.
    #[default]
    Bonferroni,
    /// `fpr` per comparison regardless of table size.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserEntry {
    pub user_id: u64,
    pub watermark: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct UserTable {
    entries: Vec<UserEntry>,
    packed: Vec<Vec<u64>>,
    k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceMatch {
    pub user_id: u64,
    pub bit_matches: usize,
}

impl UserTable {
    /// Fails when the table is empty, watermark lengths differ, or two users
    /// share a watermark.
    pub fn new(entries: Vec<UserEntry>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::Format("user table is empty".into()));
        };
        let k = first.watermark.len();
        if let Some(bad) = entries.iter().find(|e| e.watermark.len() != k) {
            return Err(Error::WrongLength {
                expected: k,
                actual: bad.watermark.len(),
            });
        }
        let packed: Vec<Vec<u64>> = entries.iter().map(|e| bits::pack_words(&e.watermark)).collect();
        let mut sorted: Vec<&Vec<u64>> = packed.iter().collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("duplicate watermark in user table".into()));
        }
        Ok(UserTable { entries, packed, k })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &[UserEntry] {
        &self.entries
    }

    /// Reads `user_id,watermark_hex` rows; a header row is optional.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut entries = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::Format(format!("row {i}: expected 2 fields")));
            }
            let Ok(user_id) = record[0].parse::<u64>() else {
                if i == 0 {
                    continue;
                }
                return Err(Error::Format(format!("row {i}: bad user id {:?}", &record[0])));
            };
            entries.push(UserEntry {
                user_id,
                watermark: bits::from_hex(&record[1])?,
            });
        }
        UserTable::new(entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["user_id", "watermark"])?;
        for e in &self.entries {
            wtr.write_record([e.user_id.to_string(), bits::to_hex(&e.watermark)])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Users meeting the threshold, best first: most matches, then lowest id.
    pub fn trace(&self, extracted: &[u8], fpr: f64, mode: ThresholdMode) -> Result<Option<TraceMatch>> {
        if extracted.len() != self.k {
            return Err(Error::LengthMismatch {
                left: extracted.len(),
                right: self.k,
            });
        }
        let per_comparison = match mode {
            ThresholdMode::Bonferroni => fpr / self.len() as f64,
            ThresholdMode::Fixed => fpr,
        };
        let threshold = bit_threshold(self.k, per_comparison)?;
        let probe = bits::pack_words(extracted);
        let mut best: Option<TraceMatch> = None;
        for (entry, words) in self.entries.iter().zip(&self.packed) {
            let differing: u32 = words.iter().zip(&probe).map(|(a, b)| (a ^ b).count_ones()).sum();
            let bit_matches = self.k - differing as usize;
            if bit_matches < threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    bit_matches > b.bit_matches || (bit_matches == b.bit_matches && entry.user_id < b.user_id)
                }
            };
            if better {
                best = Some(TraceMatch {
                    user_id: entry.user_id,
                    bit_matches,
                });
            }
        }
        Ok(best)
    }
}

/// Convenience wrapper using the default Bonferroni threshold.
pub fn trace(extracted: &[u8], table: &UserTable, fpr: f64) -> Result<Option<TraceMatch>> {
    table.trace(extracted, fpr, ThresholdMode::Bonferroni)
}
