use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gshannon::cascade::{self, PipelineConfig, DEFAULT_REDUNDANCY};
use gshannon::channel::{apply_channel, ChannelSpec};
use gshannon::detect::{ThresholdMode, UserTable};
use gshannon::harness::{self, ExperimentConfig, DEFAULT_CODE_SEED};
use gshannon::ldpc::LdpcCode;
use gshannon::modem::{LatentShape, LatentTensor, SecretKey};
use gshannon::payload::{pack_record, unpack_record, WatermarkPayload};
use gshannon::{analysis, bits};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "gshannon", version, about = "Gaussian-preserving latent watermarking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pack a JSON record into 64 hex characters.
    Pack {
        #[arg(long)]
        record: PathBuf,
    },
    /// Unpack a 256-bit hex payload into a JSON record.
    Unpack {
        #[arg(long)]
        hex: String,
    },
    /// Write a fresh secret key as hex.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Derive the key from a seed instead of OS randomness.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Embed a record into a freshly sampled latent.
    Embed {
        #[arg(long)]
        record: PathBuf,
        #[command(flatten)]
        key: KeyArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Extract the payload from a latent and print the result as JSON.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        key: KeyArg,
        #[arg(long, default_value_t = cascade::DEFAULT_SNR_DB, allow_hyphen_values = true)]
        snr_db: f64,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Extract and identify the matching user in a CSV table.
    Trace {
        #[arg(long)]
        table: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        key: KeyArg,
        #[arg(long, default_value_t = harness::DEFAULT_FPR)]
        fpr: f64,
        #[arg(long, default_value_t = cascade::DEFAULT_SNR_DB, allow_hyphen_values = true)]
        snr_db: f64,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Pass a latent through a channel described by a JSON stage list.
    Channel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    #[command(subcommand)]
    Analyze(Analyze),
    #[command(subcommand)]
    Simulate(Simulate),
}

#[derive(Subcommand)]
enum Analyze {
    /// Exact and Chernoff majority-vote error for m copies at flip rate p.
    Vote {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        p: f64,
    },
    /// Density-evolution threshold of a (wc, wr)-regular ensemble.
    DeThreshold {
        #[arg(long, default_value_t = 3)]
        wc: usize,
        #[arg(long, default_value_t = 4)]
        wr: usize,
        #[arg(long, default_value_t = 0.01)]
        tol_db: f64,
        #[arg(long, default_value_t = analysis::DE_MAX_ITERATIONS)]
        max_iter: usize,
    },
}

#[derive(Subcommand)]
enum Simulate {
    /// Run an experiment config and write result rows as CSV.
    Sweep(SimArgs),
    /// Compare cascade, decode-only and vote-only on the same trials.
    Tradeoff(SimArgs),
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a JSON summary (config echo, rows, timings).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Worker threads; overrides GS_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct KeyArg {
    /// Key as 64 hex characters, or a path to a file containing them.
    #[arg(long)]
    key: String,
}

#[derive(Args)]
struct CodeArgs {
    #[arg(long, default_value_t = DEFAULT_CODE_SEED)]
    code_seed: u64,
}

/// Errors caused by bad input rather than a failed computation.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<gshannon::Error>() {
            return if e.is_config_error() { 2 } else { 3 };
        }
    }
    3
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))
}

fn load_key(arg: &KeyArg) -> Result<SecretKey> {
    let path = Path::new(&arg.key);
    let text = if path.is_file() { read_text(path)? } else { arg.key.clone() };
    Ok(SecretKey::from_hex(text.trim())?)
}

fn load_latent(path: &Path) -> Result<LatentTensor> {
    let file = File::open(path).map_err(|e| config_err(format!("cannot open {}: {e}", path.display())))?;
    Ok(LatentTensor::read_from(BufReader::new(file))?)
}

fn save_latent(z: &LatentTensor, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    z.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn default_code(code: &CodeArgs) -> Result<Arc<LdpcCode>> {
    Ok(Arc::new(LdpcCode::build(1024, 256, 3, 4, code.code_seed)?))
}

/// Pipeline config matching a received latent: `m` follows from its length.
fn pipeline_for(z: &LatentTensor, key: SecretKey, snr_db: f64, code: &CodeArgs) -> Result<PipelineConfig> {
    let code = default_code(code)?;
    if z.len() % code.n() != 0 {
        return Err(config_err(format!(
            "latent length {} is not a multiple of n = {}",
            z.len(),
            code.n()
        )));
    }
    let m = z.len() / code.n();
    Ok(PipelineConfig::new(code, m, key, snr_db, z.shape())?)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn simulate(args: &SimArgs, tradeoff: bool) -> Result<()> {
    let cfg = ExperimentConfig::from_json(&read_text(&args.config)?)?;
    let threads = args.threads.or_else(harness::threads_from_env);
    let run = || -> gshannon::Result<_> {
        if tradeoff {
            Ok((None, Some(harness::run_tradeoff(&cfg)?)))
        } else {
            Ok((Some(harness::run_experiment(&cfg)?), None))
        }
    };
    let (rows, trade) = match threads {
        Some(n) => harness::with_threads(n, run)??,
        None => run()?,
    };
    if let Some(rows) = &rows {
        write_file(&args.out, |w| Ok(harness::write_csv(&cfg, rows, w)?))?;
        if let Some(path) = &args.summary {
            write_file(path, |w| {
                serde_json::to_writer_pretty(&mut *w, &harness::summary_json(&cfg, rows))?;
                Ok(writeln!(w)?)
            })?;
        }
    }
    if let Some(trade) = &trade {
        write_file(&args.out, |w| Ok(harness::write_tradeoff_csv(trade, w)?))?;
        if let Some(path) = &args.summary {
            write_file(path, |w| {
                let v = serde_json::json!({ "config": &cfg, "rows": trade });
                serde_json::to_writer_pretty(&mut *w, &v)?;
                Ok(writeln!(w)?)
            })?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pack { record } => {
            let rec: WatermarkPayload = serde_json::from_str(&read_text(&record)?)?;
            println!("{}", bits::to_hex(&pack_record(&rec)));
        }
        Command::Unpack { hex } => {
            let rec = unpack_record(&bits::from_hex(&hex)?)?;
            print_json(&rec)?;
        }
        Command::Keygen { out, seed } => {
            let key = match seed {
                Some(s) => SecretKey::random(&mut ChaCha8Rng::seed_from_u64(s)),
                None => SecretKey::random(&mut rand::rng()),
            };
            fs::write(&out, format!("{}\n", key.to_hex())).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Embed {
            record,
            key,
            out,
            seed,
            code,
        } => {
            let rec: WatermarkPayload = serde_json::from_str(&read_text(&record)?)?;
            let info = pack_record(&rec);
            let code = default_code(&code)?;
            let shape = LatentShape::for_len(code.n() * DEFAULT_REDUNDANCY);
            let cfg = PipelineConfig::new(code, DEFAULT_REDUNDANCY, load_key(&key)?, cascade::DEFAULT_SNR_DB, shape)?;
            let z = match seed {
                Some(s) => cascade::embed(&info, &cfg, &mut ChaCha8Rng::seed_from_u64(s))?,
                None => cascade::embed(&info, &cfg, &mut rand::rng())?,
            };
            save_latent(&z, &out)?;
        }
        Command::Extract {
            input,
            key,
            snr_db,
            code,
        } => {
            let z = load_latent(&input)?;
            let cfg = pipeline_for(&z, load_key(&key)?, snr_db, &code)?;
            let result = cascade::extract(&z, &cfg)?;
            let mut value = serde_json::to_value(&result)?;
            value["record"] = match (result.is_exact(), unpack_record(&result.info_bits)) {
                (true, Ok(rec)) => serde_json::to_value(rec)?,
                _ => serde_json::Value::Null,
            };
            print_json(&value)?;
        }
        Command::Trace {
            table,
            input,
            key,
            fpr,
            snr_db,
            code,
        } => {
            let file = File::open(&table).map_err(|e| config_err(format!("cannot open {}: {e}", table.display())))?;
            let table = UserTable::from_csv(BufReader::new(file))?;
            let z = load_latent(&input)?;
            let cfg = pipeline_for(&z, load_key(&key)?, snr_db, &code)?;
            let result = cascade::extract(&z, &cfg)?;
            let hit = table.trace(&result.info_bits, fpr, ThresholdMode::Bonferroni)?;
            print_json(&serde_json::json!({ "status": result.status, "match": hit }))?;
        }
        Command::Channel { input, spec, out, seed } => {
            let spec: ChannelSpec = serde_json::from_str(&read_text(&spec)?)?;
            let z = load_latent(&input)?;
            let noisy = apply_channel(&z, &spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
            save_latent(&noisy, &out)?;
        }
        Command::Analyze(Analyze::Vote { m, p }) => {
            if m == 0 || !(0.0..=1.0).contains(&p) {
                return Err(config_err("need m >= 1 and p in [0, 1]"));
            }
            let exact = analysis::vote_error_exact(m, p);
            let chernoff = analysis::vote_error_chernoff(m, p)?;
            print_json(&serde_json::json!({ "m": m, "p": p, "exact": exact, "chernoff": chernoff }))?;
        }
        Command::Analyze(Analyze::DeThreshold {
            wc,
            wr,
            tol_db,
            max_iter,
        }) => {
            print_json(&analysis::de_threshold(wc, wr, tol_db, max_iter)?)?;
        }
        Command::Simulate(Simulate::Sweep(args)) => simulate(&args, false)?,
        Command::Simulate(Simulate::Tradeoff(args)) => simulate(&args, true)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = harness::threads_from_env() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
