//! The `tfl` command-line tool.
//!
//! Every tunable can come from a command-line flag, from a `key=value` file
//! given with `--config` (keys are flag names without the leading dashes), or
//! from its default, in that order of precedence. `TFL_SEED` is consulted for
//! the seed before falling back to the default. The resolved settings of each
//! run are written next to its outputs so the run can be repeated with
//! `--config`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::dataset::{
    load_csv, make_windows, prepare_split, summary_stats, synth, write_csv, ScalerParams, SynthProfile, TimeSeries,
    WindowedDataset, DEFAULT_INTERVAL,
};
use crate::error::{Error, FieldDiff};
use crate::evaluation::{
    accuracy, emit_report, improvements, per_step_table, persistence_forecast, predict_all, read_metrics_csv, Report,
};
use crate::model_file::{file_hash, hex, load_model, save_model, Provenance};
use crate::numeric::Rng;
use crate::seq2seq::{ModelConfig, Seq2SeqModel};
use crate::training::{train, transfer, HuberConfig, TrainConfig, TransferConfig};
use crate::wavelet::{expand_dataset, write_provenance_csv, AugmentConfig, Extension, FactorMode, WaveletFilter};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const SEED_ENV: &str = "TFL_SEED";
const DEFAULT_SEED: u64 = 42;
const DEFAULT_START: i64 = 1_672_531_200;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(Error::InvalidArgument(_) | Error::ConfigMismatch(_)) => EXIT_USAGE,
            CliError::Lib(Error::NonFinite(_)) => EXIT_NUMERIC,
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Comma-separated list of counts, e.g. `6,9,12`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountList(pub Vec<usize>);

impl FromStr for CountList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| format!("'{p}' is not a count")))
            .collect::<Result<Vec<_>, _>>()
            .and_then(|v| if v.is_empty() { Err("empty list".into()) } else { Ok(CountList(v)) })
    }
}

impl Display for CountList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Parser, Debug)]
#[command(name = "tfl", version, about = "Traffic forecasting with LSTM encoder-decoders")]
pub struct Cli {
    /// key=value settings file; flags given on the command line take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for independent models / horizons
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic seasonal traffic series
    Synth(SynthArgs),
    /// Print summary statistics of a series
    Stats(StatsArgs),
    /// Write wavelet-augmented copies of a series
    Augment(AugmentArgs),
    /// Train forecasters from scratch
    Train(TrainArgs),
    /// Fine-tune a trained model on a target series
    Transfer(TransferArgs),
    /// Per-step metric tables for one or more models
    Evaluate(EvaluateArgs),
    /// Improvement deltas and quartile summary between two metric tables
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    base_bps: Option<f64>,
    #[arg(long)]
    daily_amp: Option<f64>,
    #[arg(long)]
    weekly_amp: Option<f64>,
    #[arg(long)]
    trend_per_day: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Epoch seconds of the first sample
    #[arg(long)]
    start: Option<i64>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optional CSV destination for the statistics
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct AugmentOpts {
    /// haar or db4
    #[arg(long)]
    wavelet: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    factor_lo: Option<f64>,
    #[arg(long)]
    factor_hi: Option<f64>,
    /// Comma-separated 1-based detail levels to perturb (default: all)
    #[arg(long)]
    perturb_levels: Option<CountList>,
    /// per-coefficient or per-band
    #[arg(long)]
    factor_mode: Option<String>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    copies: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    aug: AugmentOpts,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model path; with several horizons `_h<n>` is appended to the stem
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_past: Option<usize>,
    /// Single horizon; conflicts with --horizons
    #[arg(long)]
    n_future: Option<usize>,
    /// Comma-separated horizons, one model each (default 6,9,12)
    #[arg(long)]
    horizons: Option<CountList>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    attention: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    shuffle: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of the series used for training
    #[arg(long)]
    split: Option<f64>,
    /// Wavelet-augmented copies of the training split added to the corpus
    #[arg(long)]
    augment_copies: Option<usize>,
    #[command(flatten)]
    aug: AugmentOpts,
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[arg(long)]
    source_model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Expected horizon; checked against the source model
    #[arg(long)]
    n_future: Option<usize>,
    #[arg(long)]
    n_past: Option<usize>,
    #[arg(long)]
    phase1_lr: Option<f64>,
    #[arg(long)]
    phase2_lr: Option<f64>,
    #[arg(long)]
    phase1_epochs: Option<usize>,
    #[arg(long)]
    phase2_epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split: Option<f64>,
    /// `target` refits min-max scaling on the target training split,
    /// `source` keeps the source model's scaling
    #[arg(long)]
    scaler: Option<String>,
    #[arg(long)]
    augment_copies: Option<usize>,
    #[command(flatten)]
    aug: AugmentOpts,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model file; repeat for several models
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    split: Option<f64>,
    /// Only accept models with these horizons
    #[arg(long)]
    horizons: Option<CountList>,
    /// Also tabulate the repeat-last-value baseline
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    baseline: Option<bool>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Metrics CSV of the reference model
    #[arg(long)]
    before: Option<PathBuf>,
    /// Metrics CSV of the improved model
    #[arg(long)]
    after: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
}

/// Flag values layered over a config file, recording what was resolved.
struct Settings {
    file: BTreeMap<String, String>,
    consumed: RefCell<Vec<String>>,
    resolved: RefCell<Vec<(String, String)>>,
    env_seed: Option<String>,
}

impl Settings {
    fn new(config: Option<&Path>) -> CliResult<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(usage(format!("{}:{}: expected key=value", path.display(), i + 1)));
                };
                file.insert(k.trim().replace('_', "-"), v.trim().to_string());
            }
        }
        Ok(Settings {
            file,
            consumed: RefCell::new(Vec::new()),
            resolved: RefCell::new(Vec::new()),
            env_seed: std::env::var(SEED_ENV).ok(),
        })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        let Some(v) = self.file.get(key) else {
            return Ok(None);
        };
        self.consumed.borrow_mut().push(key.to_string());
        v.parse()
            .map(Some)
            .map_err(|_| usage(format!("config key '{key}': cannot parse '{v}'")))
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().push((key.to_string(), value));
    }

    fn opt<T: FromStr + Display>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        let v = match flag {
            Some(v) => {
                self.file_value::<String>(key)?;
                Some(v)
            }
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    fn get<T: FromStr + Display>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        let v = match flag {
            Some(v) => {
                self.file_value::<String>(key)?;
                v
            }
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    fn path(&self, key: &str, flag: Option<PathBuf>) -> CliResult<PathBuf> {
        self.opt_path(key, flag)?
            .ok_or_else(|| usage(format!("--{key} is required")))
    }

    fn opt_path(&self, key: &str, flag: Option<PathBuf>) -> CliResult<Option<PathBuf>> {
        let s = self.opt(key, flag.map(|p| p.display().to_string()))?;
        Ok(s.map(PathBuf::from))
    }

    fn seed(&self, flag: Option<u64>) -> CliResult<u64> {
        let env = match &self.env_seed {
            Some(s) => Some(
                s.trim()
                    .parse()
                    .map_err(|_| usage(format!("{SEED_ENV}='{s}' is not an unsigned integer")))?,
            ),
            None => None,
        };
        let flag_or_env = match flag {
            Some(v) => Some(v),
            None if self.file.contains_key("seed") => None,
            None => env,
        };
        self.get("seed", flag_or_env, DEFAULT_SEED)
    }

    /// Fails on config keys that no setting of this command consumed.
    fn finish(&self) -> CliResult<()> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<&String> = self.file.keys().filter(|k| !consumed.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(usage(format!(
                "unknown config key(s): {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }

    fn write_echo(&self, command: &str, path: &Path) -> CliResult<()> {
        let mut s = format!("# tfl {command}\n");
        for (k, v) in self.resolved.borrow().iter() {
            s.push_str(&format!("{k}={v}\n"));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn out_dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn echo_path_for(out: &Path, command: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out_dir_of(out).join(format!("{stem}.{command}.config"))
}

fn load_series(path: &Path) -> CliResult<TimeSeries> {
    let loaded = load_csv(path, DEFAULT_INTERVAL)?;
    if loaded.gaps_filled > 0 {
        eprintln!(
            "warning: {}: {} missing samples filled by interpolation",
            path.display(),
            loaded.gaps_filled
        );
    }
    Ok(loaded.series)
}

fn augment_config(s: &Settings, opts: &AugmentOpts, seed: u64) -> CliResult<AugmentConfig> {
    let d = AugmentConfig::default();
    let wavelet = s.get("wavelet", opts.wavelet.clone(), d.filter.name().to_string())?;
    let levels = s.get("levels", opts.levels, d.levels)?;
    let lo = s.get("factor-lo", opts.factor_lo, d.factor_range.0)?;
    let hi = s.get("factor-hi", opts.factor_hi, d.factor_range.1)?;
    let perturb_levels = s.opt("perturb-levels", opts.perturb_levels.clone())?;
    let mode: FactorMode = s.get("factor-mode", opts.factor_mode.clone(), d.mode.to_string())?.parse()?;
    let cfg = AugmentConfig {
        filter: WaveletFilter::by_name(&wavelet)?,
        levels,
        factor_range: (lo, hi),
        seed,
        perturb_levels: perturb_levels.map(|l| l.0),
        mode,
        extension: Extension::Symmetric,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_loss_history(path: &Path, history: &[f64]) -> CliResult<()> {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, l));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| usage(format!("cannot start {jobs} worker threads: {e}")))
}

/// Scaled training windows, optionally with wavelet-augmented copies of the
/// raw training split.
fn training_windows(
    train_raw: &TimeSeries,
    scaler: &ScalerParams,
    n_past: usize,
    n_future: usize,
    copies: usize,
    aug: &AugmentConfig,
) -> CliResult<WindowedDataset> {
    if copies == 0 {
        return Ok(make_windows(&scaler.scale(&train_raw.values), n_past, n_future)?);
    }
    let corpus = expand_dataset(train_raw, aug, copies)?;
    let clamped: usize = corpus.provenance.iter().map(|p| p.clamped).sum();
    if clamped > 0 {
        eprintln!("warning: {clamped} augmented samples were negative and clamped to zero");
    }
    let scaled: Vec<Vec<f64>> = corpus.series.iter().map(|s| scaler.scale(&s.values)).collect();
    Ok(WindowedDataset::from_series(scaled.iter().map(|v| v.as_slice()), n_past, n_future)?)
}

fn horizon_path(out: &Path, h: usize, several: bool) -> PathBuf {
    if !several {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_h{h}.{}", ext.to_string_lossy()),
        None => format!("{stem}_h{h}"),
    };
    out_dir_of(out).join(name)
}

fn loss_path(model_path: &Path) -> PathBuf {
    let stem = model_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out_dir_of(model_path).join(format!("{stem}.loss.csv"))
}

fn cmd_synth(a: SynthArgs, s: &Settings) -> CliResult<()> {
    let out = s.path("out", a.out)?;
    let d = SynthProfile::default();
    let length = s.get("length", a.length, 20_000)?;
    let profile = SynthProfile {
        base_bps: s.get("base-bps", a.base_bps, d.base_bps)?,
        daily_amp: s.get("daily-amp", a.daily_amp, d.daily_amp)?,
        weekly_amp: s.get("weekly-amp", a.weekly_amp, d.weekly_amp)?,
        trend_per_day: s.get("trend-per-day", a.trend_per_day, d.trend_per_day)?,
        noise_std: s.get("noise-std", a.noise_std, d.noise_std)?,
        seed: s.seed(a.seed)?,
    };
    let start = s.get("start", a.start, DEFAULT_START)?;
    s.finish()?;
    let series = synth(&profile, length, start)?;
    ensure_dir(&out_dir_of(&out))?;
    write_csv(&series, &out)?;
    s.write_echo("synth", &echo_path_for(&out, "synth"))?;
    println!("wrote {} samples to {}", series.len(), out.display());
    Ok(())
}

fn cmd_stats(a: StatsArgs, s: &Settings) -> CliResult<()> {
    let data = s.path("data", a.data)?;
    let out = s.opt_path("out", a.out)?;
    s.finish()?;
    let series = load_series(&data)?;
    let st = summary_stats(&series.values)?;
    let skew = st.skewness.map(|v| v.to_string()).unwrap_or_else(|| "undefined".into());
    println!("samples  {}", series.len());
    println!("mean     {}", st.mean);
    println!("std      {}", st.std);
    println!("var      {}", st.var);
    println!("skewness {skew}");
    if let Some(out) = out {
        ensure_dir(&out_dir_of(&out))?;
        let text = format!("samples,mean,std,var,skewness\n{},{},{},{},{}\n", series.len(), st.mean, st.std, st.var, skew);
        std::fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
        s.write_echo("stats", &echo_path_for(&out, "stats"))?;
    }
    Ok(())
}

fn cmd_augment(a: AugmentArgs, s: &Settings) -> CliResult<()> {
    let data = s.path("data", a.data)?;
    let out_dir = s.path("out-dir", a.out_dir)?;
    let copies = s.get("copies", a.copies, 3)?;
    let seed = s.seed(a.seed)?;
    let cfg = augment_config(s, &a.aug, seed)?;
    s.finish()?;
    let series = load_series(&data)?;
    let corpus = expand_dataset(&series, &cfg, copies)?;
    ensure_dir(&out_dir)?;
    for (i, ts) in corpus.series.iter().enumerate().skip(1) {
        write_csv(ts, out_dir.join(format!("augmented_{i}.csv")))?;
    }
    write_provenance_csv(&corpus.provenance, out_dir.join("provenance.csv"))?;
    s.write_echo("augment", &out_dir.join("augment.config"))?;
    println!("wrote {copies} augmented series to {}", out_dir.display());
    Ok(())
}

struct TrainJob {
    horizon: usize,
    path: PathBuf,
}

fn cmd_train(a: TrainArgs, s: &Settings, jobs: usize) -> CliResult<()> {
    let data = s.path("data", a.data)?;
    let out = s.path("out", a.out)?;
    let n_past = s.get("n-past", a.n_past, 12)?;
    let n_future = s.opt("n-future", a.n_future)?;
    let horizons = s.opt("horizons", a.horizons)?;
    let horizons = match (n_future, horizons) {
        (Some(_), Some(_)) => return Err(usage("--n-future and --horizons are mutually exclusive")),
        (Some(h), None) => vec![h],
        (None, Some(l)) => l.0,
        (None, None) => {
            s.record("horizons", "6,9,12".into());
            vec![6, 9, 12]
        }
    };
    let hidden = s.get("hidden", a.hidden, 100)?;
    let attention = s.get("attention", a.attention, false)?;
    let d = TrainConfig::default();
    let epochs = s.get("epochs", a.epochs, d.epochs)?;
    let batch = s.get("batch", a.batch, d.batch)?;
    let lr = s.get("lr", a.lr, d.lr)?;
    let shuffle = s.get("shuffle", a.shuffle, d.shuffle)?;
    let seed = s.seed(a.seed)?;
    let split = s.get("split", a.split, 0.8)?;
    let copies = s.get("augment-copies", a.augment_copies, 0)?;
    let aug = augment_config(s, &a.aug, seed)?;
    s.finish()?;

    let cfg = TrainConfig {
        epochs,
        batch,
        lr,
        seed,
        shuffle,
    };
    cfg.validate()?;
    for &h in &horizons {
        ModelConfig::new(n_past, h, hidden, attention)?;
    }
    let series = load_series(&data)?;
    ensure_dir(&out_dir_of(&out))?;
    let several = horizons.len() > 1;
    let plan: Vec<TrainJob> = horizons
        .iter()
        .map(|&h| TrainJob {
            horizon: h,
            path: horizon_path(&out, h, several),
        })
        .collect();

    let run = |job: &TrainJob| -> CliResult<String> {
        let prep = prepare_split(&series, split, n_past, job.horizon, None)?;
        let windows = training_windows(&prep.train, &prep.scaler, n_past, job.horizon, copies, &aug)?;
        let mcfg = ModelConfig::new(n_past, job.horizon, hidden, attention)?;
        let mut model = Seq2SeqModel::init(mcfg, &mut Rng::new(seed))?;
        let history = train(&mut model, &windows, &cfg, &HuberConfig::default())?;
        let prov = Provenance {
            seed,
            epochs: epochs as u32,
            parent_hash: None,
        };
        save_model(&model, &prep.scaler, &prov, &job.path)?;
        write_loss_history(&loss_path(&job.path), &history)?;
        let preds = predict_all(&model, &prep.test_windows)?;
        let table = per_step_table(&preds, &prep.test_windows.targets)?;
        Ok(format!(
            "h={} windows={} loss {:.6} -> {:.6} test WAPE {:.3}% -> {}",
            job.horizon,
            windows.len(),
            history[0],
            history[history.len() - 1],
            table.average.wape,
            job.path.display()
        ))
    };
    let lines: Vec<CliResult<String>> = thread_pool(jobs)?.install(|| plan.par_iter().map(run).collect());
    for l in lines {
        println!("{}", l?);
    }
    s.write_echo("train", &echo_path_for(&out, "train"))?;
    Ok(())
}

fn cmd_transfer(a: TransferArgs, s: &Settings) -> CliResult<()> {
    let source_path = s.path("source-model", a.source_model)?;
    let data = s.path("data", a.data)?;
    let out = s.path("out", a.out)?;
    let n_future = s.opt("n-future", a.n_future)?;
    let n_past = s.opt("n-past", a.n_past)?;
    let d = TransferConfig::default();
    let phase1_lr = s.get("phase1-lr", a.phase1_lr, d.phase1.lr)?;
    let phase2_lr = s.get("phase2-lr", a.phase2_lr, d.phase2.lr)?;
    let phase1_epochs = s.get("phase1-epochs", a.phase1_epochs, d.phase1.epochs)?;
    let phase2_epochs = s.get("phase2-epochs", a.phase2_epochs, d.phase2.epochs)?;
    let batch = s.get("batch", a.batch, d.phase1.batch)?;
    let seed = s.seed(a.seed)?;
    let split = s.get("split", a.split, 0.8)?;
    let scaler_policy = s.get("scaler", a.scaler, "target".to_string())?;
    let copies = s.get("augment-copies", a.augment_copies, 0)?;
    let aug = augment_config(s, &a.aug, seed)?;
    s.finish()?;

    let source = load_model(&source_path)?;
    let scfg = source.model.config;
    let mut diffs = Vec::new();
    for (field, want, have) in [("n_future", n_future, scfg.n_future), ("n_past", n_past, scfg.n_past)] {
        if let Some(w) = want.filter(|&w| w != have) {
            diffs.push(FieldDiff {
                field,
                expected: have.to_string(),
                found: w.to_string(),
            });
        }
    }
    if !diffs.is_empty() {
        return Err(Error::ConfigMismatch(diffs).into());
    }
    let fixed = match scaler_policy.as_str() {
        "target" => None,
        "source" => Some(source.scaler),
        other => return Err(usage(format!("--scaler must be 'target' or 'source', got '{other}'"))),
    };
    let series = load_series(&data)?;
    let prep = prepare_split(&series, split, scfg.n_past, scfg.n_future, fixed)?;
    let windows = training_windows(&prep.train, &prep.scaler, scfg.n_past, scfg.n_future, copies, &aug)?;
    let phase = |epochs, lr| TrainConfig {
        epochs,
        batch,
        lr,
        seed,
        shuffle: true,
    };
    let tcfg = TransferConfig {
        phase1: phase(phase1_epochs, phase1_lr),
        phase2: phase(phase2_epochs, phase2_lr),
    };
    for p in [&tcfg.phase1, &tcfg.phase2] {
        if p.epochs > 0 {
            p.validate()?;
        }
    }
    let outcome = transfer(&source.model, &windows, &tcfg, &HuberConfig::default())?;
    let prov = Provenance {
        seed,
        epochs: (phase1_epochs + phase2_epochs) as u32,
        parent_hash: Some(file_hash(&source_path)?),
    };
    ensure_dir(&out_dir_of(&out))?;
    save_model(&outcome.model, &prep.scaler, &prov, &out)?;
    let history: Vec<f64> = outcome.phase1_loss.iter().chain(&outcome.phase2_loss).copied().collect();
    write_loss_history(&loss_path(&out), &history)?;
    s.write_echo("transfer", &echo_path_for(&out, "transfer"))?;
    let preds = predict_all(&outcome.model, &prep.test_windows)?;
    let table = per_step_table(&preds, &prep.test_windows.targets)?;
    println!(
        "transferred {} -> {} (parent {}) test WAPE {:.3}%",
        source_path.display(),
        out.display(),
        &hex(&prov.parent_hash.unwrap_or_default())[..12],
        table.average.wape
    );
    Ok(())
}

struct Evaluated {
    label: String,
    horizon: usize,
    scaled: crate::evaluation::MetricsTable,
    raw: crate::evaluation::MetricsTable,
    baseline: Option<(crate::evaluation::MetricsTable, crate::evaluation::MetricsTable)>,
}

fn cmd_evaluate(a: EvaluateArgs, s: &Settings, jobs: usize) -> CliResult<()> {
    let models: Vec<PathBuf> = if a.models.is_empty() {
        match s.file_value::<String>("model")? {
            Some(list) => list.split(',').map(|p| PathBuf::from(p.trim())).collect(),
            None => return Err(usage("at least one --model is required")),
        }
    } else {
        a.models
    };
    s.record(
        "model",
        models.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
    );
    let data = s.path("data", a.data)?;
    let out_dir = s.path("out-dir", a.out_dir)?;
    let split = s.get("split", a.split, 0.8)?;
    let horizons = s.opt("horizons", a.horizons)?;
    let baseline = s.get("baseline", a.baseline, true)?;
    s.finish()?;

    let mut labels: Vec<String> = Vec::new();
    for m in &models {
        let label = m.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if labels.contains(&label) {
            return Err(usage(format!("two models share the name '{label}'")));
        }
        labels.push(label);
    }
    let series = load_series(&data)?;

    let eval_one = |(path, label): (&PathBuf, &String)| -> CliResult<Evaluated> {
        let saved = load_model(path)?;
        let cfg = saved.model.config;
        if let Some(h) = &horizons {
            if !h.0.contains(&cfg.n_future) {
                return Err(Error::ConfigMismatch(vec![FieldDiff {
                    field: "n_future",
                    expected: h.to_string(),
                    found: cfg.n_future.to_string(),
                }])
                .into());
            }
        }
        let prep = prepare_split(&series, split, cfg.n_past, cfg.n_future, Some(saved.scaler))?;
        let test = &prep.test_windows;
        let preds = predict_all(&saved.model, test)?;
        let scaled = per_step_table(&preds, &test.targets)?;
        let inv = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> { rows.iter().map(|r| saved.scaler.inverse(r)).collect() };
        let raw = per_step_table(&inv(&preds), &inv(&test.targets))?;
        let baseline = if baseline {
            let p = persistence_forecast(test);
            Some((per_step_table(&p, &test.targets)?, per_step_table(&inv(&p), &inv(&test.targets))?))
        } else {
            None
        };
        Ok(Evaluated {
            label: label.clone(),
            horizon: cfg.n_future,
            scaled,
            raw,
            baseline,
        })
    };
    let results: Vec<CliResult<Evaluated>> =
        thread_pool(jobs)?.install(|| models.par_iter().zip(labels.par_iter()).map(eval_one).collect());

    let mut report = Report::default();
    let mut summary = String::from("model,horizon,wape,accuracy,wape_raw,accuracy_raw\n");
    let mut seen_baseline = Vec::new();
    for r in results {
        let e = r?;
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.label,
            e.horizon,
            crate::evaluation::fmt_sig6(e.scaled.average.wape),
            crate::evaluation::fmt_sig6(e.scaled.accuracy()),
            crate::evaluation::fmt_sig6(e.raw.average.wape),
            crate::evaluation::fmt_sig6(accuracy(e.raw.average.wape)),
        ));
        println!(
            "{}: horizon {} WAPE {:.3}% (raw {:.3}%) accuracy {:.2}%",
            e.label,
            e.horizon,
            e.scaled.average.wape,
            e.raw.average.wape,
            e.scaled.accuracy()
        );
        if let Some((b, braw)) = e.baseline {
            if !seen_baseline.contains(&e.horizon) {
                seen_baseline.push(e.horizon);
                report.tables.push((format!("persistence_h{}", e.horizon), b.clone()));
                report.tables.push((format!("persistence_h{}_raw", e.horizon), braw));
            }
            if e.horizon >= 4 {
                report.comparisons.push((format!("{}_vs_persistence", e.label), improvements(&b, &e.scaled)?));
            }
        }
        report.tables.push((e.label.clone(), e.scaled));
        report.tables.push((format!("{}_raw", e.label), e.raw));
    }
    let files = emit_report(&report, &out_dir)?;
    let acc = out_dir.join("accuracy.csv");
    std::fs::write(&acc, summary).map_err(|e| Error::io(&acc, e))?;
    s.write_echo("evaluate", &out_dir.join("evaluate.config"))?;
    println!("wrote {} files to {}", files.len() + 2, out_dir.display());
    Ok(())
}

fn cmd_report(a: ReportArgs, s: &Settings) -> CliResult<()> {
    let before = s.path("before", a.before)?;
    let after = s.path("after", a.after)?;
    let out_dir = s.path("out-dir", a.out_dir)?;
    let label = s.get("label", a.label, "comparison".to_string())?;
    s.finish()?;
    let b = read_metrics_csv(&before)?;
    let t = read_metrics_csv(&after)?;
    let stats = improvements(&b, &t)?;
    let report = Report {
        tables: Vec::new(),
        comparisons: vec![(label.clone(), stats.clone())],
    };
    emit_report(&report, &out_dir)?;
    s.write_echo("report", &out_dir.join("report.config"))?;
    println!(
        "{label}: mean WAPE improvement {:.3} pp, IQR {:.4}, {} outlier step(s)",
        stats.mean_delta(),
        stats.iqr,
        stats.outliers.len()
    );
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let s = Settings::new(cli.config.as_deref())?;
    let jobs = s.get("jobs", cli.jobs, 1)?;
    if jobs == 0 {
        return Err(usage("--jobs must be >= 1"));
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &s),
        Command::Stats(a) => cmd_stats(a, &s),
        Command::Augment(a) => cmd_augment(a, &s),
        Command::Train(a) => cmd_train(a, &s, jobs),
        Command::Transfer(a) => cmd_transfer(a, &s),
        Command::Evaluate(a) => cmd_evaluate(a, &s, jobs),
        Command::Report(a) => cmd_report(a, &s),
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_list_parsing() {
        assert_eq!("6,9,12".parse::<CountList>().unwrap(), CountList(vec![6, 9, 12]));
        assert_eq!(CountList(vec![1, 2]).to_string(), "1,2");
        assert!("6,x".parse::<CountList>().is_err());
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.config");
        std::fs::write(&path, "# comment\nhidden=16\nn_past = 8\nepochs=3\n").unwrap();
        let s = Settings::new(Some(&path)).unwrap();
        assert_eq!(s.get("hidden", Some(4usize), 100).unwrap(), 4);
        assert_eq!(s.get("n-past", None, 12usize).unwrap(), 8);
        assert_eq!(s.get("batch", None, 32usize).unwrap(), 32);
        assert!(s.finish().is_err());
        s.get("epochs", None, 1usize).unwrap();
        s.finish().unwrap();
        let echo = dir.path().join("echo");
        s.write_echo("train", &echo).unwrap();
        let text = std::fs::read_to_string(echo).unwrap();
        assert_eq!(text, "# tfl train\nhidden=4\nn-past=8\nbatch=32\nepochs=3\n");
    }

    #[test]
    fn bad_config_values_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c");
        std::fs::write(&path, "hidden=lots\n").unwrap();
        let s = Settings::new(Some(&path)).unwrap();
        assert_eq!(s.get("hidden", None, 1usize).unwrap_err().exit_code(), EXIT_USAGE);
        std::fs::write(&path, "no equals sign\n").unwrap();
        assert!(Settings::new(Some(&path)).is_err());
    }

    #[test]
    fn exit_code_mapping() {
        assert_eq!(CliError::Lib(Error::NonFinite("x")).exit_code(), EXIT_NUMERIC);
        assert_eq!(CliError::Lib(Error::Empty("x")).exit_code(), EXIT_DATA);
        assert_eq!(CliError::Lib(Error::ConfigMismatch(vec![])).exit_code(), EXIT_USAGE);
        assert_eq!(run(["tfl", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["tfl", "train"]), EXIT_USAGE);
    }

    #[test]
    fn horizon_paths() {
        let p = Path::new("out/m.tfl");
        assert_eq!(horizon_path(p, 6, false), PathBuf::from("out/m.tfl"));
        assert_eq!(horizon_path(p, 9, true), PathBuf::from("out/m_h9.tfl"));
        assert_eq!(loss_path(Path::new("m.tfl")), PathBuf::from("./m.loss.csv"));
    }
}
