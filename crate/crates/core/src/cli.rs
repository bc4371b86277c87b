//! Command-line front end: config resolution, dispatch and output files.
//!
//! Parameters resolve in three layers: built-in defaults, then an optional
//! `section.key = value` config file, then command-line flags. The resolved
//! key map is what a manifest stores and what `--manifest` replays.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::Dataset;
use crate::error::Error;
use crate::model::{Checkpoint, DEFAULT_JACOBIAN_CAP};
use crate::schedule::OscillationSchedule;
use crate::seeds::{derive_seed, stream};
use crate::spectral::{dense_hessian, hessian_top_k, ntk, ntk_top_eig, DEFAULT_DENSE_HESSIAN_CAP, DEFAULT_NTK_CAP};
use crate::sweep::{available_jobs, phase_diagram, threshold_scan, PhaseGrid, RunSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DYNLOSS_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Every recognised key with its default value.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("data.n_per_class", "100"),
    ("data.classes", "3"),
    ("data.noise_sd", "0.2"),
    ("model.width", "100"),
    ("train.eta", "1"),
    ("train.steps", "35000"),
    ("train.A", "1"),
    ("train.T", "200"),
    ("train.stop_step", "none"),
    ("train.stop_last_period", "false"),
    ("train.spectra_stride", "none"),
    ("train.top_k", "3"),
    ("train.lanczos_iters", "60"),
    ("train.ntk", "true"),
    ("train.val_stride", "100"),
    ("train.jump", "0.1"),
    ("sweep.T", "50,100,200,300,500,700,1000,2000,5000"),
    ("sweep.A", "1,2,5,10,20,30,50,70,100"),
    ("sweep.seeds", "10"),
    ("scan.etas", "0.25,0.5,1,2"),
    ("spectra.checkpoint", ""),
    ("spectra.step", "0"),
    ("spectra.dump", "false"),
];

pub const HELP_FORMATS: &str = "\
OUTPUT FILES (written to --out, default $DYNLOSS_OUT or ./out)

manifest.json   every command
  {tool, version, command, config: {key: value}, seeds: {...}, artifacts: [...]}
  `dynloss --manifest manifest.json` re-runs the command with the same config.

trace.csv       train; one row per step
  step        step index t (weights applied at t, before the update)
  loss        weighted cross entropy at t
  delta_loss  loss[t] - loss[t-1]; empty at t = 0
  train_acc   training accuracy at t
  val_acc     validation accuracy; empty except every train.val_stride steps
  gamma_i     class weight of class i at t
  hess_i      i-th largest Hessian eigenvalue; empty except every
              train.spectra_stride steps
  ntk_top     largest NTK eigenvalue; empty unless recorded
  Floats use Rust `{:e}` formatting (shortest round-trip).

summary.json    train
  final accuracies, final loss, instability intervals (step ranges),
  threshold_estimate, diverged_at, spectra_stride, jump_threshold

params.ckpt     train; final parameters
  line 1: dynloss-ckpt v1 width=<w> in_dim=<d> C=<c> seed=<s>
  then one parameter per line in the order W1 (width x in_dim, row-major),
  b1, W2 (C x width, row-major), b2

phase.csv       sweep; one row per run
  T,A,seed,train_acc,val_acc
phase.json      sweep; per-cell mean/sd/divergence counts plus all runs

scan.csv        threshold-scan
  width,eta,T,steps,threshold,n_intervals   (threshold empty if none detected)
scan.json       threshold-scan; points plus fitted exponent

train.csv, val.csv   spiral-gen
  header x0,x1,label,C=<classes>; one point per row

spectra.json    spectra; hessian_top (descending), ntk_top, iterations
hessian.bin, ntk.bin   spectra with spectra.dump = true
  8-byte magic DLMAT1\\0\\0, u64 LE rows, u64 LE cols, rows*cols f64 LE row-major

CONFIG FILE
  One `key = value` per line; `#` starts a comment. Keys:
";

#[derive(Debug, Parser)]
#[command(name = "dynloss", version, about = "Oscillating class-weighted losses on spiral data")]
pub struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for sweeps and scans.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Replay the run described by a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Describe output file formats and config keys.
    #[arg(long)]
    pub help_formats: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a training and a validation spiral dataset.
    SpiralGen(RunFlags),
    /// Train one network.
    Train(RunFlags),
    /// (T, A) phase diagram.
    Sweep(SweepFlags),
    /// Instability threshold against learning rate.
    ThresholdScan(ScanFlags),
    /// Hessian and NTK spectra of a checkpoint.
    Spectra(SpectraFlags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SpiralGen(_) => "spiral-gen",
            Command::Train(_) => "train",
            Command::Sweep(_) => "sweep",
            Command::ThresholdScan(_) => "threshold-scan",
            Command::Spectra(_) => "spectra",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_per_class: Option<String>,
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub noise_sd: Option<String>,
    #[arg(long)]
    pub width: Option<String>,
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    /// Oscillation amplitude.
    #[arg(long = "A")]
    pub amplitude: Option<String>,
    /// Oscillation period in steps.
    #[arg(long = "T")]
    pub period: Option<String>,
    #[arg(long)]
    pub stop_step: Option<String>,
    #[arg(long)]
    pub stop_last_period: Option<String>,
    #[arg(long)]
    pub spectra_stride: Option<String>,
    #[arg(long)]
    pub top_k: Option<String>,
    #[arg(long)]
    pub lanczos_iters: Option<String>,
    #[arg(long)]
    pub ntk: Option<String>,
    #[arg(long)]
    pub val_stride: Option<String>,
    #[arg(long)]
    pub jump: Option<String>,
    /// Raw `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepFlags {
    #[command(flatten)]
    pub run: RunFlags,
    /// Comma-separated periods.
    #[arg(long = "T-values")]
    pub t_values: Option<String>,
    /// Comma-separated amplitudes.
    #[arg(long = "A-values")]
    pub a_values: Option<String>,
    /// Replicates per cell.
    #[arg(long)]
    pub seeds: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScanFlags {
    #[command(flatten)]
    pub run: RunFlags,
    /// Comma-separated learning rates.
    #[arg(long)]
    pub etas: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SpectraFlags {
    #[command(flatten)]
    pub run: RunFlags,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Step whose class weights define the loss.
    #[arg(long)]
    pub step: Option<String>,
    /// Also write dense hessian.bin and ntk.bin.
    #[arg(long)]
    pub dump: bool,
}

/// Failure with its exit code and a one-line message.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Resolved `key -> value` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config(pub BTreeMap<String, String>);

impl Default for Config {
    fn default() -> Self {
        Self(KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }
}

fn static_key(key: &str) -> CliResult<&'static str> {
    KEYS.iter()
        .map(|(k, _)| *k)
        .find(|k| *k == key)
        .ok_or_else(|| CliError::usage(format!("unknown config key `{key}`")))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = static_key(key)?;
        self.0.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies a config file: `key = value` lines, `#` comments.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{origin} line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    fn raw(&self, key: &'static str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, key: &'static str) -> CliResult<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| CliError::from(Error::invalid(key, format!("cannot parse `{raw}`"))))
    }

    fn parse_opt<T: std::str::FromStr>(&self, key: &'static str) -> CliResult<Option<T>> {
        match self.raw(key) {
            "" | "none" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &'static str) -> CliResult<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::from(Error::invalid(key, format!("cannot parse `{s}`"))))
            })
            .collect()
    }

    /// Keys in effect for `command`, used for the manifest.
    pub fn for_command(&self, command: &str) -> Config {
        let sections: &[&str] = match command {
            "spiral-gen" => &["data."],
            "train" => &["data.", "model.", "train."],
            "sweep" => &["data.", "model.", "train.", "sweep."],
            "threshold-scan" => &["data.", "model.", "train.", "scan."],
            _ => &["data.", "train.", "spectra."],
        };
        Config(
            self.0
                .iter()
                .filter(|(k, _)| *k == "seed" || sections.iter().any(|s| k.starts_with(s)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }

    pub fn run_spec(&self) -> CliResult<RunSpec> {
        let spec = RunSpec {
            width: self.parse("model.width")?,
            n_per_class: self.parse("data.n_per_class")?,
            num_classes: self.parse("data.classes")?,
            noise_sd: self.parse("data.noise_sd")?,
            eta: self.parse("train.eta")?,
            total_steps: self.parse("train.steps")?,
            amplitude: self.parse("train.A")?,
            period: self.parse("train.T")?,
            stop_step: self.parse_opt("train.stop_step")?,
            stop_last_period: self.parse("train.stop_last_period")?,
            spectra_stride: self.parse_opt("train.spectra_stride")?,
            hessian_top_k: self.parse("train.top_k")?,
            lanczos_iters: self.parse("train.lanczos_iters")?,
            record_ntk: self.parse("train.ntk")?,
            val_stride: self.parse("train.val_stride")?,
            jump_threshold: self.parse("train.jump")?,
            seed: self.parse("seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl RunFlags {
    fn apply(&self, cfg: &mut Config) -> CliResult<()> {
        let pairs: [(&str, Option<String>); 17] = [
            ("seed", self.seed.map(|s| s.to_string())),
            ("data.n_per_class", self.n_per_class.clone()),
            ("data.classes", self.classes.clone()),
            ("data.noise_sd", self.noise_sd.clone()),
            ("model.width", self.width.clone()),
            ("train.eta", self.eta.clone()),
            ("train.steps", self.steps.clone()),
            ("train.A", self.amplitude.clone()),
            ("train.T", self.period.clone()),
            ("train.stop_step", self.stop_step.clone()),
            ("train.stop_last_period", self.stop_last_period.clone()),
            ("train.spectra_stride", self.spectra_stride.clone()),
            ("train.top_k", self.top_k.clone()),
            ("train.lanczos_iters", self.lanczos_iters.clone()),
            ("train.ntk", self.ntk.clone()),
            ("train.val_stride", self.val_stride.clone()),
            ("train.jump", self.jump.clone()),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(())
    }
}

impl Command {
    fn apply(&self, cfg: &mut Config) -> CliResult<()> {
        match self {
            Command::SpiralGen(f) | Command::Train(f) => f.apply(cfg),
            Command::Sweep(f) => {
                f.run.apply(cfg)?;
                opt_set(cfg, "sweep.T", &f.t_values)?;
                opt_set(cfg, "sweep.A", &f.a_values)?;
                opt_set(cfg, "sweep.seeds", &f.seeds)
            }
            Command::ThresholdScan(f) => {
                f.run.apply(cfg)?;
                opt_set(cfg, "scan.etas", &f.etas)
            }
            Command::Spectra(f) => {
                f.run.apply(cfg)?;
                opt_set(cfg, "spectra.checkpoint", &f.checkpoint)?;
                opt_set(cfg, "spectra.step", &f.step)?;
                if f.dump {
                    cfg.set("spectra.dump", "true")?;
                }
                Ok(())
            }
        }
    }
}

fn opt_set(cfg: &mut Config, key: &str, v: &Option<String>) -> CliResult<()> {
    match v {
        Some(v) => cfg.set(key, v),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Config,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("manifest {}: {e}", path.display())))
    }
}

fn seed_table(seed: u64) -> BTreeMap<String, u64> {
    BTreeMap::from([
        ("seed".to_string(), seed),
        ("train_data".to_string(), derive_seed(seed, &[stream::TRAIN_DATA])),
        ("val_data".to_string(), derive_seed(seed, &[stream::VAL_DATA])),
        ("init".to_string(), derive_seed(seed, &[stream::INIT])),
        ("lanczos".to_string(), derive_seed(seed, &[stream::LANCZOS])),
    ])
}

/// Collects artifacts in one directory and writes the manifest last.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn create(dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn finish(mut self, command: &str, config: Config, seed: u64) -> CliResult<()> {
        let manifest = Manifest {
            tool: "dynloss".into(),
            version: VERSION.into(),
            command: command.into(),
            config,
            seeds: seed_table(seed),
            artifacts: {
                let mut a = self.written.clone();
                a.push("manifest.json".into());
                a
            },
        };
        self.json("manifest.json", &manifest)
    }
}

/// Parses `argv`, runs the command and returns the exit status.
pub fn run(argv: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            if code == EXIT_OK {
                print!("{e}");
            } else {
                let msg = e.to_string();
                eprintln!("{}", msg.lines().next().unwrap_or("usage error"));
            }
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if cli.help_formats {
        print!("{HELP_FORMATS}");
        for (k, v) in KEYS {
            println!("  {k} = {v}");
        }
        return Ok(());
    }
    let jobs = match cli.jobs {
        Some(0) => return Err(CliError::from(Error::invalid("jobs", "must be ≥ 1"))),
        Some(j) => j,
        None => available_jobs(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let (name, cfg) = match (&cli.manifest, &cli.command) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage("--manifest cannot be combined with a subcommand"))
        }
        (Some(path), None) => {
            let m = Manifest::load(path)?;
            let mut cfg = Config::default();
            for (k, v) in &m.config.0 {
                cfg.set(k, v)?;
            }
            (m.command, cfg)
        }
        (None, Some(cmd)) => {
            let mut cfg = Config::default();
            if let Some(path) = &cli.config {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                cfg.apply_text(&text, &path.display().to_string())?;
            }
            cmd.apply(&mut cfg)?;
            (cmd.name().to_string(), cfg)
        }
        (None, None) => return Err(CliError::usage("no subcommand given (try --help)")),
    };
    execute(&name, &cfg, out, jobs)
}

/// Runs a resolved command, writing all artifacts into `out`.
pub fn execute(command: &str, cfg: &Config, out: PathBuf, jobs: usize) -> CliResult<()> {
    let used = cfg.for_command(command);
    match command {
        "spiral-gen" => {
            let spec = RunSpec {
                n_per_class: cfg.parse("data.n_per_class")?,
                num_classes: cfg.parse("data.classes")?,
                noise_sd: cfg.parse("data.noise_sd")?,
                seed: cfg.parse("seed")?,
                ..RunSpec::default()
            };
            let (train, val) = spec.datasets()?;
            let mut o = Outputs::create(out)?;
            o.write("train.csv", &train.to_csv_string())?;
            o.write("val.csv", &val.to_csv_string())?;
            o.finish(command, used, spec.seed)
        }
        "train" => {
            let spec = cfg.run_spec()?;
            let mut o = Outputs::create(out)?;
            let outcome = spec.run()?;
            let tc = spec.train_config()?;
            let trace = &outcome.trace;
            o.write("trace.csv", &trace.to_csv_string(spec.num_classes, spec.hessian_top_k))?;
            o.json("summary.json", &trace.summary(&tc))?;
            let ck = Checkpoint { params: outcome.params, seed: spec.seed };
            let p = o.path("params.ckpt");
            ck.save(&p)?;
            o.finish(command, used, spec.seed)?;
            match trace.diverged_at {
                Some(step) => Err(CliError {
                    code: EXIT_DIVERGED,
                    message: format!("training diverged at step {step}"),
                }),
                None => Ok(()),
            }
        }
        "sweep" => {
            let base = cfg.run_spec()?;
            let grid = PhaseGrid {
                t_values: cfg.parse_list("sweep.T")?,
                a_values: cfg.parse_list("sweep.A")?,
            };
            let n_seeds: usize = cfg.parse("sweep.seeds")?;
            let mut o = Outputs::create(out)?;
            let pd = phase_diagram(&grid, &base, n_seeds, jobs)?;
            o.write("phase.csv", &pd.to_csv_string())?;
            o.json("phase.json", &pd)?;
            o.finish(command, used, base.seed)
        }
        "threshold-scan" => {
            let base = cfg.run_spec()?;
            let etas: Vec<f64> = cfg.parse_list("scan.etas")?;
            if etas.is_empty() {
                return Err(Error::invalid("scan.etas", "needs at least one learning rate").into());
            }
            let mut o = Outputs::create(out)?;
            let scan = threshold_scan(&etas, &base, jobs)?;
            o.write("scan.csv", &scan.to_csv_string())?;
            o.json("scan.json", &scan)?;
            o.finish(command, used, base.seed)
        }
        "spectra" => spectra(cfg, used, out),
        other => Err(CliError::usage(format!("unknown command `{other}`"))),
    }
}

fn spectra(cfg: &Config, used: Config, out: PathBuf) -> CliResult<()> {
    let path = cfg.raw("spectra.checkpoint").to_string();
    if path.is_empty() {
        return Err(Error::invalid("spectra.checkpoint", "a checkpoint path is required").into());
    }
    let top_k: usize = cfg.parse("train.top_k")?;
    let iters: usize = cfg.parse("train.lanczos_iters")?;
    let step: u64 = cfg.parse("spectra.step")?;
    let dump: bool = cfg.parse("spectra.dump")?;
    let ck = Checkpoint::load(&path)?;
    let layout = ck.params.layout();
    let spec = RunSpec {
        width: layout.width,
        num_classes: layout.num_classes,
        n_per_class: cfg.parse("data.n_per_class")?,
        noise_sd: cfg.parse("data.noise_sd")?,
        seed: ck.seed,
        ..RunSpec::default()
    };
    let schedule = OscillationSchedule::new(cfg.parse("train.A")?, cfg.parse("train.T")?, layout.num_classes)?;
    let gamma = schedule.weights(step);
    let (train, _): (Dataset, Dataset) = spec.datasets()?;
    let seed = derive_seed(ck.seed, &[stream::LANCZOS, step]);
    let est = hessian_top_k(&ck.params, &train, &gamma, top_k, iters, seed)?;
    let jac = ck.params.output_jacobian(&train, DEFAULT_JACOBIAN_CAP)?;
    let ntk_top = ntk_top_eig(&jac, iters, seed)?;

    let mut o = Outputs::create(out)?;
    if dump {
        let h = dense_hessian(&ck.params, &train, &gamma, DEFAULT_DENSE_HESSIAN_CAP)?;
        let p = o.path("hessian.bin");
        h.write_binary(&p)?;
        let k = ntk(&jac, DEFAULT_NTK_CAP)?;
        let p = o.path("ntk.bin");
        k.write_binary(&p)?;
    }
    let report = json!({
        "checkpoint": path,
        "step": step,
        "gamma": gamma.as_slice(),
        "hessian_top": est.top_eigs,
        "residual_norms": est.residual_norms,
        "iterations": est.iterations,
        "breakdown": est.breakdown,
        "ntk_top": ntk_top,
    });
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    o.json("spectra.json", &report)?;
    o.finish("spectra", used, ck.seed)
}
