//! Seeded Monte Carlo experiments over the latent channel model.
//!
//! Trial `t` of sweep point `i` draws everything (key, payload, latent noise,
//! channel noise) from a generator seeded with
//! `derive_seed(base_seed, [i, t])`, so results do not depend on how trials
//! are scheduled across threads. Per-trial outcomes are reduced in trial
//! order.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{self, PipelineConfig, Variant};
use crate::channel::{apply_channel, ChannelSpec, Stage};
use crate::detect::{self, ThresholdMode, UserEntry, UserTable};
use crate::ldpc::{LdpcCode, DEFAULT_MAX_ITER};
use crate::modem::{LatentShape, SecretKey};
use crate::{derive_seed, Error, Result};

/// Version tag written in the first line of every results CSV.
pub const CSV_SCHEMA: &str = "# gshannon-results v1";
/// Seed of the default (1024, 256) code.
pub const DEFAULT_CODE_SEED: u64 = 0;
pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_FPR: f64 = 1e-6;
/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "GS_THREADS";

fn default_k() -> usize {
    256
}
fn default_n() -> usize {
    1024
}
fn default_wc() -> usize {
    3
}
fn default_wr() -> usize {
    4
}
fn default_m() -> usize {
    cascade::DEFAULT_REDUNDANCY
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}
fn default_fpr() -> f64 {
    DEFAULT_FPR
}
fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}
fn default_variant() -> Variant {
    Variant::Cascade
}

/// Code and pipeline parameters. The latent shape is derived from `n * m`
/// when absent, and always when the sweep changes `n` or `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_wc")]
    pub wc: usize,
    #[serde(default = "default_wr")]
    pub wr: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub assumed_snr_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<LatentShape>,
    #[serde(default)]
    pub code_seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            k: default_k(),
            n: default_n(),
            wc: default_wc(),
            wr: default_wr(),
            m: default_m(),
            assumed_snr_db: cascade::DEFAULT_SNR_DB,
            shape: None,
            code_seed: DEFAULT_CODE_SEED,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl PipelineParams {
    fn latent_shape(&self) -> LatentShape {
        self.shape.unwrap_or_else(|| LatentShape::for_len(self.n * self.m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BitAcc,
    TprFpr,
    TprExact,
    VoteRate,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::TprFpr, Metric::BitAcc, Metric::TprExact, Metric::VoteRate];

    fn column(self) -> &'static str {
        match self {
            Metric::BitAcc => "mean_bit_acc",
            Metric::TprFpr => "tpr_at_fpr",
            Metric::TprExact => "tpr_exact",
            Metric::VoteRate => "vote_rate",
        }
    }
}

/// Parameter varied across sweep points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Appends `RandomFlip { p: value }` to the base channel.
    RandomFlip,
    /// Appends `Awgn { sigma: value }` to the base channel.
    Awgn,
    /// Appends `Drop { p: value }` to the base channel.
    Drop,
    /// Sets the redundancy `m`.
    Redundancy,
    /// Sets the assumed SNR used for decoder LLRs.
    AssumedSnrDb,
    /// Sets the code rate; picks the smallest odd column weight giving an
    /// integral row weight and the largest `m` fitting the base latent size.
    CodeRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub pipeline: PipelineParams,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// When set, each trial embeds the watermark of a random user from a
    /// table of this many users and reports tracing accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<usize>,
    #[serde(default = "default_fpr")]
    pub fpr: f64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trials: DEFAULT_TRIALS,
            base_seed: 0,
            pipeline: PipelineParams::default(),
            channel: ChannelSpec::identity(),
            sweep: None,
            metrics: default_metrics(),
            users: None,
            fpr: DEFAULT_FPR,
            variant: Variant::Cascade,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::ConfigMismatch("trials must be at least 1".into()));
        }
        if !(self.fpr > 0.0 && self.fpr < 1.0) {
            return Err(Error::ConfigMismatch(format!("fpr = {} outside (0, 1)", self.fpr)));
        }
        if self.users == Some(0) {
            return Err(Error::ConfigMismatch("users must be at least 1".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::ConfigMismatch("no metrics selected".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::ConfigMismatch("sweep has no values".into()));
            }
        }
        Ok(())
    }

    /// Number of sweep points (1 without a sweep).
    pub fn points(&self) -> usize {
        self.sweep.as_ref().map_or(1, |s| s.values.len())
    }

    fn point(&self, index: usize) -> Result<Point> {
        let mut pipeline = self.pipeline.clone();
        let mut channel = self.channel.clone();
        let Some(sweep) = &self.sweep else {
            return Ok(Point {
                value: None,
                pipeline,
                channel,
            });
        };
        let v = sweep.values[index];
        match sweep.param {
            SweepParam::RandomFlip => channel.stages.push(Stage::RandomFlip { p: v }),
            SweepParam::Awgn => channel.stages.push(Stage::Awgn { sigma: v }),
            SweepParam::Drop => channel.stages.push(Stage::Drop { p: v }),
            SweepParam::AssumedSnrDb => pipeline.assumed_snr_db = v,
            SweepParam::Redundancy => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::ConfigMismatch(format!("redundancy {v} is not a positive integer")));
                }
                pipeline.m = v as usize;
                pipeline.shape = None;
            }
            SweepParam::CodeRate => {
                let capacity = pipeline.latent_shape().len();
                let (n, wc, wr) = code_for_rate(pipeline.k, v)?;
                let m = capacity / n;
                if m == 0 {
                    return Err(Error::ConfigMismatch(format!(
                        "rate {v} gives n = {n} larger than the latent ({capacity})"
                    )));
                }
                pipeline.n = n;
                pipeline.wc = wc;
                pipeline.wr = wr;
                pipeline.m = m;
                pipeline.shape = None;
            }
        }
        Ok(Point {
            value: Some(v),
            pipeline,
            channel,
        })
    }
}

/// `(n, wc, wr)` for information length `k` at `rate = 1 - wc / wr`.
fn code_for_rate(k: usize, rate: f64) -> Result<(usize, usize, usize)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::ConfigMismatch(format!("code rate {rate} outside (0, 1)")));
    }
    let n_real = k as f64 / rate;
    let n = n_real.round() as usize;
    if (n_real - n as f64).abs() > 1e-9 {
        return Err(Error::ConfigMismatch(format!("k / rate = {n_real} is not an integer")));
    }
    for wc in (3..=15).step_by(2) {
        let wr_real = wc as f64 / (1.0 - rate);
        let wr = wr_real.round() as usize;
        if (wr_real - wr as f64).abs() < 1e-9 && (n * wc) % wr == 0 && n - k == n * wc / wr {
            return Ok((n, wc, wr));
        }
    }
    Err(Error::InfeasibleParameters(format!(
        "no odd column weight up to 15 realizes rate {rate} with k = {k}"
    )))
}

struct Point {
    value: Option<f64>,
    pipeline: PipelineParams,
    channel: ChannelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub sweep_value: Option<f64>,
    pub tpr_at_fpr: f64,
    pub mean_bit_acc: f64,
    pub tpr_exact: f64,
    pub vote_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_accuracy: Option<f64>,
    pub trials: usize,
    pub wall_time_ms: u64,
}

impl ResultRow {
    fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::BitAcc => self.mean_bit_acc,
            Metric::TprFpr => self.tpr_at_fpr,
            Metric::TprExact => self.tpr_exact,
            Metric::VoteRate => self.vote_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub sweep_value: Option<f64>,
    pub variant: Variant,
    pub exact_rate: f64,
    pub trials: usize,
}

struct TrialOutcome {
    detected: bool,
    bit_accuracy: f64,
    exact: bool,
    vote_invoked: bool,
    traced: Option<bool>,
}

struct Prepared {
    pipeline: PipelineConfig,
    channel: ChannelSpec,
    table: Option<Arc<UserTable>>,
}

#[derive(Default)]
struct CodeCache(HashMap<(usize, usize, usize, usize, u64), Arc<LdpcCode>>);

impl CodeCache {
    fn get(&mut self, p: &PipelineParams) -> Result<Arc<LdpcCode>> {
        let key = (p.n, p.k, p.wc, p.wr, p.code_seed);
        if let Some(code) = self.0.get(&key) {
            return Ok(code.clone());
        }
        let code = Arc::new(LdpcCode::build(p.n, p.k, p.wc, p.wr, p.code_seed)?);
        self.0.insert(key, code.clone());
        Ok(code)
    }
}

fn user_table(cfg: &ExperimentConfig) -> Result<Option<Arc<UserTable>>> {
    let Some(users) = cfg.users else {
        return Ok(None);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.base_seed, &[u64::MAX]));
    let entries = (0..users as u64)
        .map(|user_id| UserEntry {
            user_id,
            watermark: random_bits(&mut rng, cfg.pipeline.k),
        })
        .collect();
    Ok(Some(Arc::new(UserTable::new(entries)?)))
}

fn prepare(cfg: &ExperimentConfig, index: usize, cache: &mut CodeCache, table: &Option<Arc<UserTable>>) -> Result<(Option<f64>, Prepared)> {
    let point = cfg.point(index)?;
    let shape = point.pipeline.latent_shape();
    point.channel.validate(shape.len())?;
    let code = cache.get(&point.pipeline)?;
    // The key is replaced per trial.
    let mut pipeline = PipelineConfig::new(code, point.pipeline.m, SecretKey([0; 32]), point.pipeline.assumed_snr_db, shape)?;
    pipeline.max_iter = point.pipeline.max_iter;
    if let Some(t) = table {
        if t.k() != pipeline.code.k() {
            return Err(Error::ConfigMismatch("user watermarks do not match k".into()));
        }
    }
    Ok((
        point.value,
        Prepared {
            pipeline,
            channel: point.channel,
            table: table.clone(),
        },
    ))
}

fn random_bits(rng: &mut impl Rng, k: usize) -> Vec<u8> {
    (0..k).map(|_| rng.random_range(0..2u8)).collect()
}

/// Per-trial setup shared by the experiment and tradeoff runners. Returns the
/// truth bits and the received latent.
fn simulate_trial(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    index: usize,
    trial: usize,
) -> Result<(Vec<u8>, Option<u64>, PipelineConfig, crate::modem::LatentTensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.base_seed, &[index as u64, trial as u64]));
    let mut pipeline = prep.pipeline.clone();
    pipeline.key = SecretKey::random(&mut rng);
    let (truth, user) = match &prep.table {
        Some(table) => {
            let entry = &table.entries()[rng.random_range(0..table.len())];
            (entry.watermark.clone(), Some(entry.user_id))
        }
        None => (random_bits(&mut rng, pipeline.code.k()), None),
    };
    let z = cascade::embed(&truth, &pipeline, &mut rng)?;
    let received = apply_channel(&z, &prep.channel, &mut rng)?;
    Ok((truth, user, pipeline, received))
}

fn run_trial(cfg: &ExperimentConfig, prep: &Prepared, index: usize, trial: usize) -> Result<TrialOutcome> {
    let (truth, user, pipeline, received) = simulate_trial(cfg, prep, index, trial)?;
    let result = cascade::extract_with(&received, &pipeline, cfg.variant)?;
    let report = detect::detect(&result.info_bits, &truth, cfg.fpr)?;
    let traced = match (&prep.table, user) {
        (Some(table), Some(user)) => {
            let hit = table.trace(&result.info_bits, cfg.fpr, ThresholdMode::Bonferroni)?;
            Some(hit.map(|h| h.user_id) == Some(user))
        }
        _ => None,
    };
    Ok(TrialOutcome {
        detected: report.detected,
        bit_accuracy: report.bit_accuracy,
        exact: report.exact,
        vote_invoked: result.vote_invoked,
        traced,
    })
}

/// Runs every sweep point on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut cache = CodeCache::default();
    let table = user_table(cfg)?;
    let mut rows = Vec::with_capacity(cfg.points());
    for index in 0..cfg.points() {
        let start = Instant::now();
        let (value, prep) = prepare(cfg, index, &mut cache, &table)?;
        let outcomes = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, &prep, index, t))
            .collect::<Result<Vec<_>>>()?;
        let trials = outcomes.len();
        let frac = |f: &dyn Fn(&TrialOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / trials as f64;
        rows.push(ResultRow {
            sweep_value: value,
            tpr_at_fpr: frac(&|o| o.detected),
            mean_bit_acc: outcomes.iter().map(|o| o.bit_accuracy).sum::<f64>() / trials as f64,
            tpr_exact: frac(&|o| o.exact),
            vote_rate: frac(&|o| o.vote_invoked),
            trace_accuracy: table.as_ref().map(|_| frac(&|o| o.traced == Some(true))),
            trials,
            wall_time_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok(rows)
}

/// Paired comparison of the three extraction variants: every variant sees
/// the same received latents.
pub fn run_tradeoff(cfg: &ExperimentConfig) -> Result<Vec<TradeoffRow>> {
    cfg.validate()?;
    let mut cache = CodeCache::default();
    let mut rows = Vec::new();
    for index in 0..cfg.points() {
        let (value, prep) = prepare(cfg, index, &mut cache, &None)?;
        let exact = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let (truth, _, pipeline, received) = simulate_trial(cfg, &prep, index, t)?;
                let all = cascade::extract_variants(&received, &pipeline)?;
                Ok(Variant::ALL.map(|v| all.get(v).info_bits == truth))
            })
            .collect::<Result<Vec<[bool; 3]>>>()?;
        for (i, variant) in Variant::ALL.into_iter().enumerate() {
            rows.push(TradeoffRow {
                sweep_value: value,
                variant,
                exact_rate: exact.iter().filter(|e| e[i]).count() as f64 / exact.len() as f64,
                trials: exact.len(),
            });
        }
    }
    Ok(rows)
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::ConfigMismatch(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Thread cap from `GS_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes rows as CSV. Timing is deliberately left out so that identical
/// configs produce identical bytes; it is in the JSON summary instead.
pub fn write_csv<W: Write>(cfg: &ExperimentConfig, rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_SCHEMA}")?;
    let mut header = vec!["sweep_value".to_string(), "trials".to_string()];
    header.extend(cfg.metrics.iter().map(|m| m.column().to_string()));
    if cfg.users.is_some() {
        header.push("trace_accuracy".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let mut fields = vec![fmt_value(row.sweep_value), row.trials.to_string()];
        fields.extend(cfg.metrics.iter().map(|&m| format!("{:.6}", row.metric(m))));
        if let Some(acc) = row.trace_accuracy {
            fields.push(format!("{acc:.6}"));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn write_tradeoff_csv<W: Write>(rows: &[TradeoffRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_SCHEMA}")?;
    writeln!(out, "sweep_value,variant,trials,exact_rate")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{:.6}",
            fmt_value(row.sweep_value),
            row.variant.name(),
            row.trials,
            row.exact_rate
        )?;
    }
    Ok(())
}

/// JSON summary: the config echo plus every row.
pub fn summary_json(cfg: &ExperimentConfig, rows: &[ResultRow]) -> serde_json::Value {
    serde_json::json!({ "config": cfg, "rows": rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            trials: 8,
            pipeline: PipelineParams {
                k: 64,
                n: 256,
                m: 4,
                ..PipelineParams::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_trials_is_config_error() {
        let cfg = ExperimentConfig {
            trials: 0,
            ..small_cfg()
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn identity_channel_recovers_everything() {
        let rows = run_experiment(&small_cfg()).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!((r.tpr_exact, r.tpr_at_fpr, r.mean_bit_acc, r.vote_rate), (1.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn config_json_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"trials": 5, "sweep": {"param": "random_flip", "values": [0.1]}}"#)
            .unwrap();
        assert_eq!(cfg.pipeline, PipelineParams::default());
        assert_eq!(cfg.fpr, 1e-6);
        assert_eq!(cfg.metrics, Metric::ALL.to_vec());
        assert!(ExperimentConfig::from_json(r#"{"trials": 5, "bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"trials": 0}"#).is_err());
    }

    #[test]
    fn rate_mapping() {
        assert_eq!(code_for_rate(256, 0.25).unwrap(), (1024, 3, 4));
        assert_eq!(code_for_rate(256, 0.5).unwrap(), (512, 3, 6));
        assert_eq!(code_for_rate(256, 1.0 / 6.0).unwrap(), (1536, 5, 6));
        assert!(code_for_rate(256, 1.0 / 3.0).is_err());
    }

    #[test]
    fn redundancy_sweep_derives_shapes() {
        let cfg = ExperimentConfig {
            sweep: Some(Sweep {
                param: SweepParam::Redundancy,
                values: vec![1.0, 2.0],
            }),
            ..small_cfg()
        };
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.tpr_exact == 1.0));
        let bad = ExperimentConfig {
            sweep: Some(Sweep {
                param: SweepParam::Redundancy,
                values: vec![1.5],
            }),
            ..small_cfg()
        };
        assert!(run_experiment(&bad).is_err());
    }

    #[test]
    fn csv_layout() {
        let cfg = small_cfg();
        let rows = vec![ResultRow {
            sweep_value: Some(0.1),
            tpr_at_fpr: 1.0,
            mean_bit_acc: 0.5,
            tpr_exact: 0.25,
            vote_rate: 0.0,
            trace_accuracy: None,
            trials: 8,
            wall_time_ms: 3,
        }];
        let mut buf = Vec::new();
        write_csv(&cfg, &rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# gshannon-results v1\nsweep_value,trials,tpr_at_fpr,mean_bit_acc,tpr_exact,vote_rate\n0.1,8,1.000000,0.500000,0.250000,0.000000\n"
        );
    }
}
