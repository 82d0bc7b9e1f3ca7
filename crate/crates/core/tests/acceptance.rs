//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use gshannon::analysis::{de_threshold, vote_error_chernoff, vote_error_exact};
use gshannon::cascade::{self, ExtractionStatus, PipelineConfig, Variant};
use gshannon::channel::{ChannelSpec, Stage};
use gshannon::detect::{bit_threshold, detect};
use gshannon::harness::{self, ExperimentConfig, Sweep, SweepParam};
use gshannon::ldpc::LdpcCode;
use gshannon::modem::{LatentShape, SecretKey};
use gshannon::stats::{ks_critical_01, ks_statistic_normal};
use num_bigint::BigUint;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn default_code() -> Arc<LdpcCode> {
    Arc::new(LdpcCode::build(1024, 256, 3, 4, harness::DEFAULT_CODE_SEED).unwrap())
}

fn random_bits(rng: &mut impl Rng, k: usize) -> Vec<u8> {
    (0..k).map(|_| rng.random_range(0..2u8)).collect()
}

fn noiseless_round_trip() -> Outcome {
    let start = Instant::now();
    let code = default_code();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut ok = 0;
    for _ in 0..200 {
        let cfg = PipelineConfig::new(code.clone(), 16, SecretKey::random(&mut rng), 0.0, LatentShape::default()).unwrap();
        let info = random_bits(&mut rng, 256);
        let z = cascade::embed(&info, &cfg, &mut rng).unwrap();
        let res = cascade::extract(&z, &cfg).unwrap();
        ok += usize::from(matches!(res.status, ExtractionStatus::ExactSingle { .. }) && res.info_bits == info);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(ok == 200 && secs < 60.0, format!("{ok}/200 ExactSingle in {secs:.2} s (limit 60 s)"))
}

fn vote_formula_vs_monte_carlo() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let trials = 100_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for (m, p) in [(16, 0.2), (15, 0.3), (7, 0.1)] {
        let exact = vote_error_exact(m, p);
        // Ties count as errors, matching the formula.
        let errors = (0..trials)
            .filter(|_| 2 * (0..m).filter(|_| rng.random_bool(p)).count() >= m)
            .count();
        let mc = errors as f64 / trials as f64;
        let z = (mc - exact).abs() / (exact * (1.0 - exact) / trials as f64).sqrt();
        pass &= z <= 3.0;
        parts.push(format!("({m},{p}) exact {exact:.5} mc {mc:.5} z {z:.2}"));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(pass && secs < 30.0, format!("{} in {secs:.2} s (limit 30 s)", parts.join("; ")))
}

fn chernoff_dominance() -> Outcome {
    let mut violations = 0;
    for m in 1..=31 {
        for i in 1..=9 {
            let p = i as f64 * 0.05;
            if vote_error_chernoff(m, p).unwrap() < vote_error_exact(m, p) {
                violations += 1;
            }
        }
        if vote_error_chernoff(m, 0.5).unwrap() != 1.0 {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations over 310 points"))
}

fn cascade_synergy() -> Outcome {
    let cfg = ExperimentConfig {
        trials: 200,
        base_seed: 104,
        channel: ChannelSpec::new(vec![
            Stage::Burst {
                start_index: 0,
                length: 4096,
                flip_p: 0.5,
            },
            Stage::RandomFlip { p: 0.12 },
        ]),
        ..ExperimentConfig::default()
    };
    let rows = harness::run_tradeoff(&cfg).unwrap();
    let rate = |v: Variant| rows.iter().find(|r| r.variant == v).unwrap().exact_rate;
    let (c, d, v) = (rate(Variant::Cascade), rate(Variant::DecodeOnly), rate(Variant::VoteOnly));
    outcome(
        c >= 0.95 && c >= d && c >= v,
        format!("cascade {c:.3}, decode-only {d:.3}, vote-only {v:.3}"),
    )
}

fn distribution_preservation() -> Outcome {
    let code = default_code();
    let critical = ks_critical_01(16384);
    let mut passes = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let cfg = PipelineConfig::new(code.clone(), 16, SecretKey::random(&mut rng), 0.0, LatentShape::default()).unwrap();
        let z = cascade::embed(&random_bits(&mut rng, 256), &cfg, &mut rng).unwrap();
        passes += usize::from(ks_statistic_normal(z.values()) < critical);
    }
    outcome(passes >= 9, format!("{passes}/10 seeds pass KS at 0.01 (D < {critical:.5})"))
}

/// Smallest t with sum_{i >= t} C(k, i) <= fpr_inv^-1 * 2^k, in exact integers.
fn threshold_oracle(k: usize, fpr_inv: u64) -> usize {
    let total = BigUint::one() << k;
    let mut binom = vec![BigUint::one()];
    for i in 1..=k {
        let next = &binom[i - 1] * BigUint::from(k - i + 1) / BigUint::from(i);
        binom.push(next);
    }
    let mut tail = BigUint::from(0u8);
    for t in (0..=k).rev() {
        tail += &binom[t];
        if &tail * BigUint::from(fpr_inv) > total {
            return t + 1;
        }
    }
    0
}

fn detection_threshold() -> Outcome {
    let got = bit_threshold(256, 1e-6).unwrap();
    let want = threshold_oracle(256, 1_000_000);
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let hits = (0..10_000)
        .filter(|_| {
            let (a, b) = (random_bits(&mut rng, 256), random_bits(&mut rng, 256));
            detect(&a, &b, 1e-6).unwrap().detected
        })
        .count();
    outcome(
        got == want && hits <= 1,
        format!("threshold {got} (oracle {want}), null detections {hits}/10000"),
    )
}

fn traceability() -> Outcome {
    let cfg = ExperimentConfig {
        trials: 500,
        base_seed: 107,
        users: Some(10_000),
        channel: ChannelSpec::new(vec![Stage::RandomFlip { p: 0.1 }]),
        ..ExperimentConfig::default()
    };
    let acc = harness::run_experiment(&cfg).unwrap()[0].trace_accuracy.unwrap();
    outcome(acc >= 0.98, format!("identification accuracy {acc:.4} over 500 trials, 10000 users"))
}

fn frame_success(code: &LdpcCode, snr_db: f64, frames: usize, rng: &mut ChaCha8Rng) -> f64 {
    let sigma = 10f64.powf(-snr_db / 20.0);
    let noise = Normal::new(0.0, sigma).unwrap();
    let ok = (0..frames)
        .filter(|_| {
            let c = code.encode(&random_bits(rng, code.k())).unwrap();
            let llr: Vec<f64> = c
                .iter()
                .map(|&b| 2.0 * (if b == 0 { 1.0 } else { -1.0 } + rng.sample(noise)) / (sigma * sigma))
                .collect();
            code.decode(&llr, 50).unwrap().codeword.as_deref() == Some(&c[..])
        })
        .count();
    ok as f64 / frames as f64
}

fn de_decoder_consistency() -> Outcome {
    let thr = de_threshold(3, 4, 0.01, 500).unwrap().threshold_snr_db;
    let code = default_code();
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let above = frame_success(&code, thr + 2.0, 1000, &mut rng);
    let below = frame_success(&code, thr - 2.0, 1000, &mut rng);
    outcome(
        thr > -10.0 && thr < 10.0 && thr <= 0.0 && above >= 0.99 && below <= 0.5,
        format!("threshold {thr:.3} dB, success {above:.3} at +2 dB, {below:.3} at -2 dB"),
    )
}

fn sweep(cfg: ExperimentConfig) -> Vec<f64> {
    harness::run_experiment(&cfg).unwrap().iter().map(|r| r.tpr_exact).collect()
}

fn ablation_shapes() -> Outcome {
    let red = sweep(ExperimentConfig {
        trials: 100,
        base_seed: 109,
        channel: ChannelSpec::new(vec![Stage::RandomFlip { p: 0.3 }]),
        sweep: Some(Sweep {
            param: SweepParam::Redundancy,
            values: vec![1.0, 2.0, 4.0, 8.0, 16.0],
        }),
        ..ExperimentConfig::default()
    });
    let snr = sweep(ExperimentConfig {
        trials: 100,
        base_seed: 110,
        channel: ChannelSpec::new(vec![Stage::RandomFlip { p: 0.33 }]),
        sweep: Some(Sweep {
            param: SweepParam::AssumedSnrDb,
            values: vec![-10.0, -2.0, 0.0, 2.0, 10.0],
        }),
        ..ExperimentConfig::default()
    });
    let red_ok = red.windows(2).all(|w| w[0] <= w[1]) && red[0] < red[4];
    let interior = snr[1..4].iter().copied().fold(0.0, f64::max);
    let snr_ok = interior > snr[0] && interior > snr[4];
    outcome(
        red_ok && snr_ok,
        format!("redundancy m=1,2,4,8,16 -> {red:?}; assumed SNR -10,-2,0,2,10 dB -> {snr:?}"),
    )
}

fn reproducibility() -> Outcome {
    let cfg = ExperimentConfig {
        trials: 40,
        base_seed: 111,
        users: Some(100),
        channel: ChannelSpec::new(vec![Stage::Awgn { sigma: 0.7 }]),
        sweep: Some(Sweep {
            param: SweepParam::RandomFlip,
            values: vec![0.1, 0.25, 0.35],
        }),
        ..ExperimentConfig::default()
    };
    let csv = |threads| {
        let rows = harness::with_threads(threads, || harness::run_experiment(&cfg)).unwrap().unwrap();
        let mut out = Vec::new();
        harness::write_csv(&cfg, &rows, &mut out).unwrap();
        out
    };
    let (a, b) = (csv(1), csv(4));
    outcome(a == b, format!("{} CSV bytes, 1 vs 4 threads identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("noiseless round trip", noiseless_round_trip),
        ("vote formula vs Monte Carlo", vote_formula_vs_monte_carlo),
        ("Chernoff dominance", chernoff_dominance),
        ("cascade synergy", cascade_synergy),
        ("distribution preservation", distribution_preservation),
        ("detection threshold", detection_threshold),
        ("traceability", traceability),
        ("DE/decoder consistency", de_decoder_consistency),
        ("ablation shapes", ablation_shapes),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "[{}] criterion {:>2} {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
