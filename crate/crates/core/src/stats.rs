//! Small numeric helpers shared by the modem, channel and analysis modules.

use libm::{erfc, lgamma};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Natural log of the binomial coefficient `C(n, k)`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    lgamma(n as f64 + 1.0) - lgamma(k as f64 + 1.0) - lgamma((n - k) as f64 + 1.0)
}

/// Kolmogorov-Smirnov statistic of `samples` against the standard normal.
pub fn ks_statistic_normal(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance 0.01 for `n` samples.
pub fn ks_critical_01(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tails() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let q1 = q_function(1.0);
        assert!((q1 - 0.158_655_253_931_457_05).abs() < 1e-12, "{q1}");
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
        assert!((ln_binomial(10, 3) - 120f64.ln()).abs() < 1e-12);
        assert_eq!(ln_binomial(7, 0), 0.0);
    }

    #[test]
    fn ks_of_uniform_grid_is_small() {
        // Quantiles of the normal at (i + 0.5) / n give D = 0.5 / n.
        let n = 200;
        let xs: Vec<f64> = (0..n)
            .map(|i| {
                let target = (i as f64 + 0.5) / n as f64;
                let (mut lo, mut hi) = (-10.0, 10.0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if normal_cdf(mid) < target { lo = mid } else { hi = mid }
                }
                0.5 * (lo + hi)
            })
            .collect();
        assert!((ks_statistic_normal(&xs) - 0.5 / n as f64).abs() < 1e-9);
    }
}
