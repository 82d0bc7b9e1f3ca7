//! Regular LDPC codes: construction, systematic encoding, parity checking and
//! sum-product decoding.
//!
//! LLR sign convention: a positive LLR favors bit 0. An LLR of exactly zero
//! hard-decides to 0.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{bits, Error, Result};

/// Magnitude bound applied to channel LLRs and to every internal message.
pub const LLR_CLAMP: f64 = 20.0;
/// Default iteration cap for [`LdpcCode::decode`].
pub const DEFAULT_MAX_ITER: usize = 50;
/// Number of derived seeds tried by [`LdpcCode::build`].
pub const MAX_ATTEMPTS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStatus {
    Decoded,
    ParityFail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub status: DecodeStatus,
    /// Decoded codeword, present only when `status` is `Decoded`.
    pub codeword: Option<Vec<u8>>,
    pub iterations_used: usize,
}

impl DecodeOutcome {
    pub fn is_decoded(&self) -> bool {
        self.status == DecodeStatus::Decoded
    }
}

/// Systematic encoder derived from the reduced row echelon form of the
/// parity matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Encoder {
    info_positions: Vec<usize>,
    /// Pivot column of each reduced row; these carry the parity bits.
    parity_positions: Vec<usize>,
    /// For each reduced row, the info bits (packed by info index) it sums.
    parity_rows: Vec<Vec<u64>>,
}

/// A `(wc, wr)`-regular LDPC code with full-rank parity matrix.
///
/// Immutable after construction; safe to share between threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdpcCode {
    n: usize,
    k: usize,
    wc: usize,
    wr: usize,
    seed: Option<u64>,
    /// Check -> sorted variable indices.
    checks: Vec<Vec<usize>>,
    /// Edge e lives in check `c` for `check_start[c] <= e < check_start[c + 1]`.
    check_start: Vec<usize>,
    edge_var: Vec<usize>,
    var_start: Vec<usize>,
    var_edges: Vec<usize>,
    encoder: Encoder,
}

fn check_degrees(n: usize, k: usize, wc: usize, wr: usize) -> Result<()> {
    let bad = |msg: String| Err(Error::InfeasibleParameters(msg));
    if wc < 2 {
        return bad(format!("column weight {wc} < 2"));
    }
    if wr <= wc {
        return bad(format!("row weight {wr} must exceed column weight {wc}"));
    }
    if n == 0 || k == 0 || k >= n {
        return bad(format!("need 0 < k < n, got n={n}, k={k}"));
    }
    if (n * wc) % wr != 0 {
        return bad(format!("n*wc = {} not divisible by wr = {wr}", n * wc));
    }
    if n - k != n * wc / wr {
        return bad(format!(
            "n - k = {} but the degree equation gives {} checks",
            n - k,
            n * wc / wr
        ));
    }
    if wr > n {
        return bad(format!("row weight {wr} exceeds n = {n}"));
    }
    if wc % 2 == 0 {
        // All rows sum to the zero vector when every column weight is even.
        return bad(format!("even column weight {wc} is always rank deficient"));
    }
    Ok(())
}

impl LdpcCode {
    /// Builds a `(wc, wr)`-regular code of length `n` with `k` information bits.
    ///
    /// Attempt `i` uses seed `seed + i`; an attempt is rejected when the
    /// random socket matching cannot be made simple or the matrix is rank
    /// deficient over GF(2).
    pub fn build(n: usize, k: usize, wc: usize, wr: usize, seed: u64) -> Result<Self> {
        check_degrees(n, k, wc, wr)?;
        for attempt in 0..u64::from(MAX_ATTEMPTS) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
            let Some(checks) = random_regular(n, n - k, wc, wr, &mut rng) else {
                continue;
            };
            if let Some(encoder) = derive_encoder(n, &checks) {
                return Ok(Self::assemble(n, k, wc, wr, Some(seed), checks, encoder));
            }
        }
        Err(Error::ConstructionFailed {
            attempts: MAX_ATTEMPTS,
        })
    }

    fn assemble(
        n: usize,
        k: usize,
        wc: usize,
        wr: usize,
        seed: Option<u64>,
        checks: Vec<Vec<usize>>,
        encoder: Encoder,
    ) -> Self {
        let mut check_start = Vec::with_capacity(checks.len() + 1);
        let mut edge_var = Vec::with_capacity(n * wc);
        check_start.push(0);
        for row in &checks {
            edge_var.extend_from_slice(row);
            check_start.push(edge_var.len());
        }
        let mut per_var: Vec<Vec<usize>> = vec![Vec::with_capacity(wc); n];
        for (e, &v) in edge_var.iter().enumerate() {
            per_var[v].push(e);
        }
        let mut var_start = Vec::with_capacity(n + 1);
        let mut var_edges = Vec::with_capacity(edge_var.len());
        var_start.push(0);
        for list in per_var {
            var_edges.extend(list);
            var_start.push(var_edges.len());
        }
        LdpcCode {
            n,
            k,
            wc,
            wr,
            seed,
            checks,
            check_start,
            edge_var,
            var_start,
            var_edges,
            encoder,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn wc(&self) -> usize {
        self.wc
    }

    pub fn wr(&self) -> usize {
        self.wr
    }

    pub fn num_checks(&self) -> usize {
        self.checks.len()
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// Construction seed; `None` for codes imported from alist text.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Variable indices touched by each check, sorted ascending.
    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    /// Codeword positions that carry the information bits, ascending.
    pub fn info_positions(&self) -> &[usize] {
        &self.encoder.info_positions
    }

    /// Systematic part of an n-bit word.
    pub fn info_bits(&self, word: &[u8]) -> Vec<u8> {
        self.encoder
            .info_positions
            .iter()
            .map(|&p| word[p])
            .collect()
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k {
            return Err(Error::WrongLength {
                expected: self.k,
                actual: info.len(),
            });
        }
        let packed = bits::pack_words(info);
        let mut word = vec![0u8; self.n];
        for (&pos, &b) in self.encoder.info_positions.iter().zip(info) {
            word[pos] = b & 1;
        }
        for (&pos, row) in self
            .encoder
            .parity_positions
            .iter()
            .zip(&self.encoder.parity_rows)
        {
            let ones: u32 = row.iter().zip(&packed).map(|(a, b)| (a & b).count_ones()).sum();
            word[pos] = (ones & 1) as u8;
        }
        Ok(word)
    }

    pub fn parity_check(&self, word: &[u8]) -> Result<bool> {
        if word.len() != self.n {
            return Err(Error::WrongLength {
                expected: self.n,
                actual: word.len(),
            });
        }
        Ok(self.syndrome_is_zero(word))
    }

    fn syndrome_is_zero(&self, word: &[u8]) -> bool {
        self.checks
            .iter()
            .all(|row| row.iter().fold(0u8, |acc, &v| acc ^ word[v]) == 0)
    }

    /// Flooding sum-product decoding.
    ///
    /// The hard decision of the channel LLRs is checked before the first
    /// iteration, so an already-valid word returns with `iterations_used == 0`.
    pub fn decode(&self, llrs: &[f64], max_iter: usize) -> Result<DecodeOutcome> {
        if llrs.len() != self.n {
            return Err(Error::WrongLength {
                expected: self.n,
                actual: llrs.len(),
            });
        }
        if let Some(index) = llrs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        let channel: Vec<f64> = llrs.iter().map(|&v| clamp(v)).collect();
        let mut hard: Vec<u8> = channel.iter().map(|&v| u8::from(v < 0.0)).collect();
        if self.syndrome_is_zero(&hard) {
            return Ok(decoded(hard, 0));
        }

        let edges = self.edge_var.len();
        let mut v2c: Vec<f64> = self.edge_var.iter().map(|&v| channel[v]).collect();
        let mut c2v = vec![0.0f64; edges];
        let mut scratch = vec![0.0f64; self.wr];
        let mut suffix = vec![0.0f64; self.wr + 1];

        for iteration in 1..=max_iter {
            for c in 0..self.checks.len() {
                let (lo, hi) = (self.check_start[c], self.check_start[c + 1]);
                let deg = hi - lo;
                for (t, &m) in scratch[..deg].iter_mut().zip(&v2c[lo..hi]) {
                    // tanh(m / 2)
                    let e = m.exp();
                    *t = (e - 1.0) / (e + 1.0);
                }
                suffix[deg] = 1.0;
                for i in (0..deg).rev() {
                    suffix[i] = suffix[i + 1] * scratch[i];
                }
                let mut prefix = 1.0;
                for i in 0..deg {
                    let product = prefix * suffix[i + 1];
                    // 2 atanh(product)
                    c2v[lo + i] = clamp(((1.0 + product) / (1.0 - product)).ln());
                    prefix *= scratch[i];
                }
            }
            for v in 0..self.n {
                let incident = &self.var_edges[self.var_start[v]..self.var_start[v + 1]];
                let total = channel[v] + incident.iter().map(|&e| c2v[e]).sum::<f64>();
                for &e in incident {
                    v2c[e] = clamp(total - c2v[e]);
                }
                hard[v] = u8::from(total < 0.0);
            }
            if self.syndrome_is_zero(&hard) {
                return Ok(decoded(hard, iteration));
            }
        }
        Ok(DecodeOutcome {
            status: DecodeStatus::ParityFail,
            codeword: None,
            iterations_used: max_iter,
        })
    }

    /// Serializes the parity structure in MacKay's alist format (1-based
    /// indices).
    pub fn to_alist(&self) -> String {
        let m = self.checks.len();
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (c, row) in self.checks.iter().enumerate() {
            for &v in row {
                cols[v].push(c);
            }
        }
        let join = |it: &mut dyn Iterator<Item = usize>| {
            it.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n, m);
        let _ = writeln!(out, "{} {}", self.wc, self.wr);
        let _ = writeln!(out, "{}", join(&mut cols.iter().map(Vec::len)));
        let _ = writeln!(out, "{}", join(&mut self.checks.iter().map(Vec::len)));
        for col in &cols {
            let _ = writeln!(out, "{}", join(&mut col.iter().map(|c| c + 1)));
        }
        for row in &self.checks {
            let _ = writeln!(out, "{}", join(&mut row.iter().map(|v| v + 1)));
        }
        out
    }

    /// Parses alist text. The matrix must be regular with odd column weight
    /// and full rank; zero padding in adjacency lists is accepted.
    pub fn from_alist(text: &str) -> Result<Self> {
        let mut nums = text.split_whitespace().map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad alist token {tok:?}")))
        });
        let mut next = || nums.next().unwrap_or_else(|| Err(Error::Format("truncated alist".into())));
        let n = next()?;
        let m = next()?;
        let max_col = next()?;
        let max_row = next()?;
        let col_deg = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let row_deg = (0..m).map(|_| next()).collect::<Result<Vec<_>>>()?;
        for _ in 0..n * max_col {
            next()?;
        }
        let mut checks = Vec::with_capacity(m);
        for &deg in &row_deg {
            let mut row = Vec::with_capacity(deg);
            for j in 0..max_row {
                let idx = next()?;
                if j < deg {
                    if idx == 0 || idx > n {
                        return Err(Error::Format(format!("variable index {idx} out of range")));
                    }
                    row.push(idx - 1);
                }
            }
            row.sort_unstable();
            checks.push(row);
        }
        if n <= m {
            return Err(Error::Format(format!("alist has n = {n} <= m = {m}")));
        }
        let wc = col_deg.first().copied().unwrap_or(0);
        let wr = row_deg.first().copied().unwrap_or(0);
        if col_deg.iter().any(|&d| d != wc) || row_deg.iter().any(|&d| d != wr) {
            return Err(Error::InfeasibleParameters("alist matrix is not regular".into()));
        }
        check_degrees(n, n - m, wc, wr)?;
        let mut seen = vec![0usize; n];
        for row in &checks {
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Format("duplicate entry in alist row".into()));
            }
            for &v in row {
                seen[v] += 1;
            }
        }
        if seen.iter().any(|&d| d != wc) {
            return Err(Error::Format("column degrees disagree with adjacency lists".into()));
        }
        let encoder = derive_encoder(n, &checks).ok_or(Error::InfeasibleParameters(
            "alist matrix is rank deficient".into(),
        ))?;
        Ok(Self::assemble(n, n - m, wc, wr, None, checks, encoder))
    }
}

fn decoded(codeword: Vec<u8>, iterations_used: usize) -> DecodeOutcome {
    DecodeOutcome {
        status: DecodeStatus::Decoded,
        codeword: Some(codeword),
        iterations_used,
    }
}

#[inline]
fn clamp(v: f64) -> f64 {
    v.clamp(-LLR_CLAMP, LLR_CLAMP)
}

/// Random socket matching for a `(wc, wr)`-regular bipartite graph, repaired
/// to have no repeated edges and with 4-cycles removed where local swaps can
/// do it. Returns `None` when repeated edges cannot be eliminated.
fn random_regular(
    n: usize,
    m: usize,
    wc: usize,
    wr: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<usize>>> {
    let mut slots: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, wc)).collect();
    slots.shuffle(rng);
    let edges = slots.len();
    let row = |c: usize| c * wr..(c + 1) * wr;

    // Remove repeated edges by swapping with random slots in other checks.
    let mut budget = 50 * edges;
    loop {
        let dup = (0..edges).find(|&s| {
            let c = s / wr;
            slots[row(c)].iter().filter(|&&v| v == slots[s]).count() > 1
        });
        let Some(s) = dup else { break };
        let mut fixed = false;
        while budget > 0 {
            budget -= 1;
            let t = rng.random_range(0..edges);
            let (cs, ct) = (s / wr, t / wr);
            if cs == ct {
                continue;
            }
            let (v, u) = (slots[s], slots[t]);
            if !slots[row(ct)].contains(&v) && !slots[row(cs)].contains(&u) {
                slots.swap(s, t);
                fixed = true;
                break;
            }
        }
        if !fixed {
            return None;
        }
    }

    let mut var_checks: Vec<Vec<usize>> = vec![Vec::with_capacity(wc); n];
    for (s, &v) in slots.iter().enumerate() {
        var_checks[v].push(s / wr);
    }
    let mut counts = vec![0usize; m];
    let mut touched = Vec::new();
    let mut cycles_at = |c: usize, slots: &[usize], var_checks: &[Vec<usize>]| -> usize {
        for &v in &slots[row(c)] {
            for &other in &var_checks[v] {
                if other != c {
                    if counts[other] == 0 {
                        touched.push(other);
                    }
                    counts[other] += 1;
                }
            }
        }
        let mut total = 0;
        for &o in &touched {
            let s = counts[o];
            total += s * (s - 1) / 2;
            counts[o] = 0;
        }
        touched.clear();
        total
    };

    let mut budget = 20 * edges;
    let mut pending: Vec<usize> = (0..m).filter(|&c| cycles_at(c, &slots, &var_checks) > 0).collect();
    while let Some(&c) = pending.last() {
        if budget == 0 {
            break;
        }
        if cycles_at(c, &slots, &var_checks) == 0 {
            pending.pop();
            continue;
        }
        budget -= 1;
        let s = c * wr + rng.random_range(0..wr);
        let t = rng.random_range(0..edges);
        let ct = t / wr;
        let (v, u) = (slots[s], slots[t]);
        if ct == c || slots[row(ct)].contains(&v) || slots[row(c)].contains(&u) {
            continue;
        }
        let before = cycles_at(c, &slots, &var_checks) + cycles_at(ct, &slots, &var_checks);
        swap_edge(&mut slots, &mut var_checks, s, t, wr);
        let after = cycles_at(c, &slots, &var_checks) + cycles_at(ct, &slots, &var_checks);
        if after > before {
            swap_edge(&mut slots, &mut var_checks, s, t, wr);
        } else if after > 0 && cycles_at(ct, &slots, &var_checks) > 0 {
            pending.push(ct);
        }
    }

    Some(
        (0..m)
            .map(|c| {
                let mut r = slots[row(c)].to_vec();
                r.sort_unstable();
                r
            })
            .collect(),
    )
}

fn swap_edge(slots: &mut [usize], var_checks: &mut [Vec<usize>], s: usize, t: usize, wr: usize) {
    let (cs, ct) = (s / wr, t / wr);
    let (v, u) = (slots[s], slots[t]);
    if let Some(x) = var_checks[v].iter_mut().find(|x| **x == cs) {
        *x = ct;
    }
    if let Some(x) = var_checks[u].iter_mut().find(|x| **x == ct) {
        *x = cs;
    }
    slots.swap(s, t);
}

/// Gauss-Jordan elimination over GF(2), scanning columns from the last to the
/// first so that parity pivots gather at the end and the information
/// positions at the front. Returns `None` when the matrix is rank deficient.
fn derive_encoder(n: usize, checks: &[Vec<usize>]) -> Option<Encoder> {
    let words = n.div_ceil(64);
    let mut rows: Vec<Vec<u64>> = checks
        .iter()
        .map(|row| {
            let mut w = vec![0u64; words];
            for &v in row {
                w[v / 64] ^= 1 << (v % 64);
            }
            w
        })
        .collect();
    let m = rows.len();
    let mut pivots = Vec::with_capacity(m);
    let mut rank = 0;
    for col in (0..n).rev() {
        if rank == m {
            break;
        }
        let (w, b) = (col / 64, 1u64 << (col % 64));
        let Some(p) = (rank..m).find(|&r| rows[r][w] & b != 0) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot_row = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[w] & b != 0 {
                row.iter_mut().zip(&pivot_row).for_each(|(x, y)| *x ^= y);
            }
        }
        pivots.push(col);
        rank += 1;
    }
    if rank < m {
        return None;
    }
    let mut is_pivot = vec![false; n];
    for &p in &pivots {
        is_pivot[p] = true;
    }
    let info_positions: Vec<usize> = (0..n).filter(|&j| !is_pivot[j]).collect();
    let k = info_positions.len();
    let parity_rows = rows
        .iter()
        .map(|row| {
            let mut packed = vec![0u64; k.div_ceil(64)];
            for (i, &j) in info_positions.iter().enumerate() {
                if row[j / 64] >> (j % 64) & 1 == 1 {
                    packed[i / 64] |= 1 << (i % 64);
                }
            }
            packed
        })
        .collect();
    Some(Encoder {
        info_positions,
        parity_positions: pivots,
        parity_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LdpcCode {
        LdpcCode::build(8, 2, 3, 4, 11).unwrap()
    }

    #[test]
    fn infeasible_parameters() {
        assert!(matches!(
            LdpcCode::build(10, 3, 3, 4, 0),
            Err(Error::InfeasibleParameters(_))
        ));
        assert!(matches!(
            LdpcCode::build(12, 4, 4, 6, 0),
            Err(Error::InfeasibleParameters(_))
        ));
        assert!(matches!(
            LdpcCode::build(8, 3, 3, 4, 0),
            Err(Error::InfeasibleParameters(_))
        ));
    }

    #[test]
    fn small_code_degrees() {
        let code = small();
        assert_eq!(code.num_checks(), 6);
        let mut col = [0usize; 8];
        for row in code.checks() {
            assert_eq!(row.len(), 4);
            for &v in row {
                col[v] += 1;
            }
        }
        assert_eq!(col, [3; 8]);
    }

    #[test]
    fn zero_word_and_single_flip() {
        let code = small();
        assert!(code.parity_check(&[0; 8]).unwrap());
        let c = code.encode(&[1, 0]).unwrap();
        assert!(code.parity_check(&c).unwrap());
        for i in 0..8 {
            let mut w = c.clone();
            w[i] ^= 1;
            assert!(!code.parity_check(&w).unwrap());
        }
        assert!(matches!(
            code.parity_check(&[0; 7]),
            Err(Error::WrongLength { expected: 8, actual: 7 })
        ));
        assert!(code.encode(&[1]).is_err());
    }

    #[test]
    fn systematic_positions_carry_info() {
        let code = LdpcCode::build(64, 16, 3, 4, 5).unwrap();
        let info: Vec<u8> = (0..16).map(|i| (i % 3 == 0) as u8).collect();
        let c = code.encode(&info).unwrap();
        assert_eq!(code.info_bits(&c), info);
    }

    #[test]
    fn deterministic_construction() {
        let a = LdpcCode::build(128, 32, 3, 4, 99).unwrap();
        let b = LdpcCode::build(128, 32, 3, 4, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_decode_is_immediate() {
        let code = LdpcCode::build(128, 32, 3, 4, 1).unwrap();
        let info: Vec<u8> = (0..32).map(|i| (i * 7 % 5 < 2) as u8).collect();
        let c = code.encode(&info).unwrap();
        let llrs: Vec<f64> = c.iter().map(|&b| if b == 0 { 12.0 } else { -12.0 }).collect();
        let out = code.decode(&llrs, 50).unwrap();
        assert!(out.is_decoded());
        assert!(out.iterations_used <= 1);
        assert_eq!(out.codeword.unwrap(), c);
    }

    #[test]
    fn zero_llr_is_bit_zero() {
        let code = small();
        let out = code.decode(&[0.0; 8], 5).unwrap();
        assert_eq!(out.codeword.unwrap(), vec![0; 8]);
        assert_eq!(out.iterations_used, 0);
    }

    #[test]
    fn rejects_non_finite() {
        let code = small();
        let mut llrs = [1.0; 8];
        llrs[3] = f64::NAN;
        assert!(matches!(
            code.decode(&llrs, 5),
            Err(Error::NonFiniteInput { index: 3 })
        ));
        llrs[3] = f64::INFINITY;
        assert!(code.decode(&llrs, 5).is_err());
        assert!(code.decode(&[1.0; 7], 5).is_err());
    }

    #[test]
    fn alist_round_trip() {
        let code = LdpcCode::build(64, 16, 3, 4, 3).unwrap();
        let text = code.to_alist();
        let back = LdpcCode::from_alist(&text).unwrap();
        assert_eq!(back.checks(), code.checks());
        assert_eq!(back.seed(), None);
        let info = vec![1u8; 16];
        assert_eq!(back.encode(&info).unwrap(), code.encode(&info).unwrap());
        assert!(LdpcCode::from_alist("8 6\n3").is_err());
    }
}
