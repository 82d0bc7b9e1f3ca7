//! Reliability formulas for repetition voting and Gaussian-approximation
//! density evolution for regular LDPC ensembles on the BIAWGN channel.
//!
//! SNR convention throughout: unit-power BPSK with noise variance
//! `sigma^2 = 10^(-snr_db / 10)`, so the channel LLR mean is `2 / sigma^2`.

use std::sync::OnceLock;

use serde::Serialize;

use crate::stats::{ln_binomial, q_function};
use crate::{Error, Result};

/// Error probability of a bitwise majority vote over `m` independent copies
/// with per-copy error probability `p`: `sum_{i >= ceil(m/2)} C(m,i) p^i (1-p)^(m-i)`.
/// For even `m` the tie term counts as an error.
///
/// # Panics
/// If `m == 0` or `p` is outside `[0, 1]`.
pub fn vote_error_exact(m: usize, p: f64) -> f64 {
    assert!(m >= 1, "m must be at least 1");
    assert!((0.0..=1.0).contains(&p), "p = {p} outside [0, 1]");
    if p == 0.0 {
        return 0.0;
    }
    if p == 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let terms: Vec<f64> = (m.div_ceil(2)..=m)
        .map(|i| ln_binomial(m as u64, i as u64) + i as f64 * lp + (m - i) as f64 * lq)
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

/// Bernoulli relative entropy `D(a || b)` in nats, with `0 ln 0 = 0`.
pub fn kl_bernoulli(a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return Err(Error::DomainError(format!("D({a} || {b}) outside [0, 1]")));
    }
    if b == 0.0 || b == 1.0 {
        return if a == b {
            Ok(0.0)
        } else {
            Err(Error::DomainError(format!("D({a} || {b}) is infinite")))
        };
    }
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    Ok((term(a, b) + term(1.0 - a, 1.0 - b)).max(0.0))
}

/// Chernoff bound `exp(-m D(1/2 || p))` on the majority-vote error, clipped
/// to 1.
pub fn vote_error_chernoff(m: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(format!("Chernoff bound needs p in (0, 1), got {p}")));
    }
    Ok((-(m as f64) * kl_bernoulli(0.5, p)?).exp().min(1.0))
}

/// Largest mean tracked by density evolution.
const MEAN_CAP: f64 = 4000.0;
const GL_PANELS: usize = 8;
const GL_NODES: usize = 16;

fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_NODES;
        (0..n)
            .map(|i| {
                // Newton iteration on P_n from the Chebyshev-like initial guess.
                let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for j in 2..=n {
                        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-15 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

/// `phi(x) = 1 - E[tanh(u / 2)]` for `u ~ N(x, 2x)`; `phi(0) = 1`.
///
/// Evaluated through the equivalent positive integral
/// `phi(x) = e^(-x/4) / sqrt(pi x) * int_0^inf e^(-u^2 / 4x) sech(u / 2) du`,
/// which follows from the symmetry `f(-u) = e^(-u) f(u)` of the consistent
/// Gaussian density, with composite Gauss-Legendre quadrature.
pub fn phi(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    // Beyond this the Gaussian factor is below 1e-16 or sech(u/2) is.
    let upper = (12.0 * x.sqrt()).min(80.0);
    let width = upper / GL_PANELS as f64;
    let rule = gauss_legendre();
    let mut integral = 0.0;
    for panel in 0..GL_PANELS {
        let mid = (panel as f64 + 0.5) * width;
        for &(node, weight) in rule {
            let u = mid + 0.5 * width * node;
            integral += weight * (-u * u / (4.0 * x)).exp() / (0.5 * u).cosh();
        }
    }
    integral *= 0.5 * width;
    ((-x / 4.0).exp() / (std::f64::consts::PI * x).sqrt() * integral).clamp(0.0, 1.0)
}

/// Inverse of [`phi`] by bisection on `ln x`.
pub fn phi_inv(y: f64) -> f64 {
    if y >= 1.0 {
        return 0.0;
    }
    if y <= phi(MEAN_CAP) {
        return MEAN_CAP;
    }
    let (mut lo, mut hi) = (1e-12f64.ln(), MEAN_CAP.ln());
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if phi(mid.exp()) > y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn check_ensemble(wc: usize, wr: usize) -> Result<()> {
    if wc < 2 || wr <= wc {
        return Err(Error::InfeasibleParameters(format!(
            "({wc}, {wr}) is not a valid regular ensemble"
        )));
    }
    Ok(())
}

/// Error probability below which density evolution counts as converged.
pub const DE_CONVERGED: f64 = 1e-6;
/// Default iteration cap for threshold search.
pub const DE_MAX_ITERATIONS: usize = 500;
const STAGNATION_WINDOW: usize = 10;
const STAGNATION_REL: f64 = 1e-8;
const STAGNATION_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DeFate {
    Converged,
    Stagnated,
    Exhausted,
}

struct DeRecursion {
    wc: usize,
    wr: usize,
    channel_mean: f64,
    check_mean: f64,
}

impl DeRecursion {
    fn new(wc: usize, wr: usize, snr_db: f64) -> Self {
        DeRecursion {
            wc,
            wr,
            channel_mean: 2.0 * 10f64.powf(snr_db / 10.0),
            check_mean: 0.0,
        }
    }

    fn error(&self) -> f64 {
        let total = self.channel_mean + self.wc as f64 * self.check_mean;
        q_function((total / 2.0).sqrt())
    }

    fn step(&mut self) -> f64 {
        let var_mean = (self.channel_mean + (self.wc - 1) as f64 * self.check_mean).min(MEAN_CAP);
        let p = phi(var_mean);
        // 1 - (1 - p)^(wr - 1), accurate for tiny p.
        let out = -((self.wr - 1) as f64 * (-p).ln_1p()).exp_m1();
        self.check_mean = phi_inv(out);
        self.error()
    }

    fn run(mut self, max_iterations: usize) -> (Vec<f64>, DeFate) {
        let mut trajectory = vec![self.error()];
        for _ in 0..max_iterations {
            let p = self.step();
            trajectory.push(p);
            if p < DE_CONVERGED {
                return (trajectory, DeFate::Converged);
            }
            let l = trajectory.len();
            if p > STAGNATION_FLOOR && l > STAGNATION_WINDOW {
                let earlier = trajectory[l - 1 - STAGNATION_WINDOW];
                if ((earlier - p) / p).abs() < STAGNATION_REL {
                    return (trajectory, DeFate::Stagnated);
                }
            }
        }
        (trajectory, DeFate::Exhausted)
    }
}

/// Per-iteration bit error probabilities `P_0, ..., P_iterations` of
/// Gaussian-approximation density evolution. `P_0 = Q(1 / sigma)`.
pub fn de_trajectory(wc: usize, wr: usize, snr_db: f64, iterations: usize) -> Result<Vec<f64>> {
    check_ensemble(wc, wr)?;
    if iterations == 0 {
        return Err(Error::DomainError("iterations must be at least 1".into()));
    }
    let mut de = DeRecursion::new(wc, wr, snr_db);
    let mut out = Vec::with_capacity(iterations + 1);
    out.push(de.error());
    for _ in 0..iterations {
        out.push(de.step());
    }
    Ok(out)
}

/// Whether density evolution reaches `P_l < 1e-6` within `max_iterations`.
pub fn de_converges(wc: usize, wr: usize, snr_db: f64, max_iterations: usize) -> Result<bool> {
    check_ensemble(wc, wr)?;
    let (_, fate) = DeRecursion::new(wc, wr, snr_db).run(max_iterations);
    Ok(fate == DeFate::Converged)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeResult {
    pub threshold_snr_db: f64,
    pub bracket: (f64, f64),
    /// Number of bisection steps.
    pub iterations: usize,
    pub trajectory_at_threshold: Vec<f64>,
}

pub const DE_BRACKET_DB: (f64, f64) = (-10.0, 10.0);

/// Bisection for the smallest SNR at which density evolution converges.
/// The reported threshold is the midpoint of the final bracket.
pub fn de_threshold(wc: usize, wr: usize, tol_db: f64, max_iterations: usize) -> Result<DeResult> {
    check_ensemble(wc, wr)?;
    if !(tol_db > 0.0) {
        return Err(Error::DomainError(format!("tolerance {tol_db} must be positive")));
    }
    let converges = |snr: f64| DeRecursion::new(wc, wr, snr).run(max_iterations).1 == DeFate::Converged;
    let (mut low, mut high) = DE_BRACKET_DB;
    if converges(low) || !converges(high) {
        return Err(Error::BracketFailure {
            low_db: low,
            high_db: high,
        });
    }
    let mut iterations = 0;
    while high - low > tol_db {
        let mid = 0.5 * (low + high);
        if converges(mid) {
            high = mid;
        } else {
            low = mid;
        }
        iterations += 1;
    }
    let threshold_snr_db = 0.5 * (low + high);
    let (trajectory_at_threshold, _) = DeRecursion::new(wc, wr, threshold_snr_db).run(max_iterations);
    Ok(DeResult {
        threshold_snr_db,
        bracket: (low, high),
        iterations,
        trajectory_at_threshold,
    })
}
