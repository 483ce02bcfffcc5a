//! Command-line front end: `run`, `bench` and `demo`.
//!
//! Experiment settings come from a flat `key = value` file, overridden by
//! flags of the same name (`max_iter` ↔ `--max-iter`). `QSHIELD_SEED` is
//! used when neither sets `seed`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::fedcore::{
    run_experiment_with, AdversaryConfig, AdversaryKind, ChannelKind, DatasetKind,
    ExperimentConfig, ExperimentResult, FedError, KemMode, RoundMetrics, Summary,
    CSV_SCHEMA_VERSION,
};
use crate::pqcsuite::{bench_scheme, BenchRecord, PqcError, SchemeKind, SchemeRegistry};
use crate::qkd::{abort_decision, estimate_qber, run_bb84, EveModel};
use crate::qsim::Statevector;
use crate::symcrypto::OtpMode;
use crate::tpchannel::{
    outcome_fidelity, target_state, teleport_branches, teleport_once, TeleportMode,
    DEFAULT_TOMOGRAPHY_SHOTS, DEFAULT_VERIFY_CHECKS,
};
use crate::vqc::OptimizerKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const SEED_ENV: &str = "QSHIELD_SEED";
pub const DEFAULT_OUT_PATH: &str = "metrics.csv";

/// Every key accepted in a config file. Flags use the same names with `-`.
pub const CONFIG_KEYS: [&str; 25] = [
    "dataset",
    "devices",
    "rounds",
    "channel",
    "adversary",
    "adversary_fraction",
    "dp",
    "shots",
    "optimizer",
    "max_iter",
    "step",
    "seed",
    "qkd_block_n",
    "qber_threshold",
    "test_fraction",
    "otp_mode",
    "teleport_mode",
    "teleport_checks",
    "teleport_shots",
    "teleport_index",
    "kem_mode",
    "kem_scheme",
    "sig_scheme",
    "out_path",
    "summary_path",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {0:?} given twice")]
    Duplicate(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("no dataset given (use --dataset iris|synthetic_genomic)")]
    MissingDataset,
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Invalid(#[from] FedError),
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        if !CONFIG_KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Duplicate(k.to_string()));
        }
    }
    Ok(map)
}

/// A fully resolved `run` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub experiment: ExperimentConfig,
    pub out_path: PathBuf,
    /// JSON summary; defaults to `out_path` with a `.json` extension.
    pub summary_path: PathBuf,
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: v.to_string(),
        reason: e.to_string(),
    })
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T, ConfigError> {
    options
        .iter()
        .find(|(name, _)| *name == v)
        .map(|(_, t)| *t)
        .ok_or_else(|| ConfigError::Value {
            key: key.to_string(),
            value: v.to_string(),
            reason: format!(
                "expected one of {}",
                options
                    .iter()
                    .map(|(n, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        })
}

const OPTIMIZERS: [(&str, OptimizerKind); 2] = [
    ("nelder_mead", OptimizerKind::NelderMead),
    ("spsa", OptimizerKind::Spsa),
];
const OTP_MODES: [(&str, OtpMode); 2] = [
    ("double_shift", OtpMode::DoubleShift),
    ("xor", OtpMode::Xor),
];
const KEM_MODES: [(&str, KemMode); 2] = [
    ("digest", KemMode::Digest),
    ("encrypt_weights", KemMode::EncryptWeights),
];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], t: &T) -> &'static str {
    options
        .iter()
        .find(|(_, o)| o == t)
        .map(|(n, _)| *n)
        .expect("every variant is listed")
}

/// Builds run settings from merged key/value pairs. `env_seed` is consulted
/// only when `seed` is absent.
pub fn resolve_run_settings(
    pairs: &BTreeMap<String, String>,
    env_seed: Option<&str>,
) -> Result<RunSettings, ConfigError> {
    if let Some(k) = pairs.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(k.clone()));
    }
    let get = |k: &str| pairs.get(k).map(String::as_str);
    let mut cfg = ExperimentConfig {
        dataset: value::<DatasetKind>(
            "dataset",
            get("dataset").ok_or(ConfigError::MissingDataset)?,
        )?,
        ..ExperimentConfig::default()
    };
    if let Some(v) = get("devices") {
        cfg.devices = value("devices", v)?;
    }
    if let Some(v) = get("rounds") {
        cfg.rounds = value("rounds", v)?;
    }
    if let Some(v) = get("channel") {
        cfg.channel.kind = value::<ChannelKind>("channel", v)?;
    }
    let kind = match get("adversary") {
        Some(v) => value::<AdversaryKind>("adversary", v)?,
        None => AdversaryKind::None,
    };
    let fraction = match get("adversary_fraction") {
        Some(v) => value("adversary_fraction", v)?,
        None => AdversaryConfig::default().fraction,
    };
    cfg.adversary = AdversaryConfig::new(kind, fraction).map_err(|reason| ConfigError::Value {
        key: "adversary_fraction".into(),
        value: fraction.to_string(),
        reason,
    })?;
    if let Some(v) = get("dp") {
        cfg.channel.dp = value("dp", v)?;
    }
    if let Some(v) = get("shots") {
        cfg.train.shots = value("shots", v)?;
    }
    if let Some(v) = get("optimizer") {
        cfg.train.optimizer = choice("optimizer", v, &OPTIMIZERS)?;
    }
    if let Some(v) = get("max_iter") {
        cfg.train.max_iter = value("max_iter", v)?;
    }
    if let Some(v) = get("step") {
        cfg.train.step = value("step", v)?;
    }
    cfg.seed = match (get("seed"), env_seed) {
        (Some(v), _) => value("seed", v)?,
        (None, Some(v)) => value(SEED_ENV, v)?,
        (None, None) => 0,
    };
    if let Some(v) = get("qkd_block_n") {
        cfg.channel.qkd.block_n = value("qkd_block_n", v)?;
    }
    if let Some(v) = get("qber_threshold") {
        cfg.channel.qkd.qber_threshold = value("qber_threshold", v)?;
    }
    if let Some(v) = get("test_fraction") {
        cfg.channel.qkd.test_fraction = value("test_fraction", v)?;
    }
    if let Some(v) = get("otp_mode") {
        cfg.channel.otp_mode = choice("otp_mode", v, &OTP_MODES)?;
    }
    let checks = match get("teleport_checks") {
        Some(v) => value("teleport_checks", v)?,
        None => DEFAULT_VERIFY_CHECKS,
    };
    let shots = match get("teleport_shots") {
        Some(v) => value("teleport_shots", v)?,
        None => DEFAULT_TOMOGRAPHY_SHOTS,
    };
    cfg.channel.teleport_mode = match get("teleport_mode").unwrap_or("verify") {
        "verify" => TeleportMode::Verify { checks },
        "tomography" => TeleportMode::Tomography { shots },
        other => {
            return Err(ConfigError::Value {
                key: "teleport_mode".into(),
                value: other.into(),
                reason: "expected one of verify, tomography".into(),
            })
        }
    };
    if let Some(v) = get("teleport_index") {
        cfg.channel.teleport_index = value("teleport_index", v)?;
    }
    if let Some(v) = get("kem_mode") {
        cfg.channel.kem_mode = choice("kem_mode", v, &KEM_MODES)?;
    }
    if let Some(v) = get("kem_scheme") {
        cfg.channel.kem_scheme = v.to_string();
    }
    if let Some(v) = get("sig_scheme") {
        cfg.channel.sig_scheme = v.to_string();
    }
    let qkd = &cfg.channel.qkd;
    if qkd.block_n == 0 || !(qkd.test_fraction > 0.0 && qkd.test_fraction < 1.0) {
        return Err(ConfigError::Value {
            key: "qkd_block_n/test_fraction".into(),
            value: format!("{}/{}", qkd.block_n, qkd.test_fraction),
            reason: "block must be non-empty and test fraction in (0, 1)".into(),
        });
    }
    cfg.validate()?;

    let out_path = PathBuf::from(get("out_path").unwrap_or(DEFAULT_OUT_PATH));
    let summary_path = get("summary_path")
        .map(PathBuf::from)
        .unwrap_or_else(|| out_path.with_extension("json"));
    Ok(RunSettings {
        experiment: cfg,
        out_path,
        summary_path,
    })
}

/// Renders settings back to key/value pairs; `resolve_run_settings` of the
/// result reproduces them.
pub fn settings_to_pairs(s: &RunSettings) -> BTreeMap<String, String> {
    let c = &s.experiment;
    let (mode, checks, shots) = match c.channel.teleport_mode {
        TeleportMode::Verify { checks } => ("verify", checks, DEFAULT_TOMOGRAPHY_SHOTS),
        TeleportMode::Tomography { shots } => ("tomography", DEFAULT_VERIFY_CHECKS, shots),
    };
    let entries: [(&str, String); 25] = [
        ("dataset", c.dataset.as_str().into()),
        ("devices", c.devices.to_string()),
        ("rounds", c.rounds.to_string()),
        ("channel", c.channel.kind.to_string()),
        ("adversary", c.adversary.kind.as_str().into()),
        ("adversary_fraction", c.adversary.fraction.to_string()),
        ("dp", c.channel.dp.to_string()),
        ("shots", c.train.shots.to_string()),
        ("optimizer", name_of(&OPTIMIZERS, &c.train.optimizer).into()),
        ("max_iter", c.train.max_iter.to_string()),
        ("step", c.train.step.to_string()),
        ("seed", c.seed.to_string()),
        ("qkd_block_n", c.channel.qkd.block_n.to_string()),
        ("qber_threshold", c.channel.qkd.qber_threshold.to_string()),
        ("test_fraction", c.channel.qkd.test_fraction.to_string()),
        ("otp_mode", name_of(&OTP_MODES, &c.channel.otp_mode).into()),
        ("teleport_mode", mode.into()),
        ("teleport_checks", checks.to_string()),
        ("teleport_shots", shots.to_string()),
        ("teleport_index", c.channel.teleport_index.to_string()),
        ("kem_mode", name_of(&KEM_MODES, &c.channel.kem_mode).into()),
        ("kem_scheme", c.channel.kem_scheme.clone()),
        ("sig_scheme", c.channel.sig_scheme.clone()),
        ("out_path", s.out_path.display().to_string()),
        ("summary_path", s.summary_path.display().to_string()),
    ];
    entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    csv_schema_version: u32,
    config: &'a BTreeMap<String, String>,
    summary: &'a Summary,
    rounds: &'a [RoundMetrics],
    final_params: &'a [f64],
}

/// JSON companion to the metrics CSV.
pub fn summary_json(settings: &RunSettings, result: &ExperimentResult) -> String {
    let config = settings_to_pairs(settings);
    let doc = SummaryDocument {
        csv_schema_version: CSV_SCHEMA_VERSION,
        config: &config,
        summary: &result.summary,
        rounds: &result.rounds,
        final_params: &result.final_params,
    };
    serde_json::to_string_pretty(&doc).expect("summary is plain data")
}

#[derive(Debug, Parser)]
#[command(
    name = "qshield",
    version,
    about = "Quantum-secured federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a federated experiment and write metrics CSV plus JSON summary.
    Run(Box<RunArgs>),
    /// Time keygen/sign/verify or keygen/encaps/decaps.
    Bench(BenchArgs),
    /// Print a transcript of one protocol run.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat key = value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// iris or synthetic_genomic.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    devices: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    /// plain, qkd_otp, qkd_fernet, teleport, kem or pqc_sign.
    #[arg(long)]
    channel: Option<String>,
    /// none, eve_intercept, eve_swap or tamper.
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long)]
    adversary_fraction: Option<String>,
    #[arg(long)]
    dp: Option<String>,
    #[arg(long)]
    shots: Option<String>,
    /// nelder_mead or spsa.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    qkd_block_n: Option<String>,
    #[arg(long)]
    qber_threshold: Option<String>,
    #[arg(long)]
    test_fraction: Option<String>,
    /// double_shift or xor.
    #[arg(long)]
    otp_mode: Option<String>,
    /// verify or tomography.
    #[arg(long)]
    teleport_mode: Option<String>,
    #[arg(long)]
    teleport_checks: Option<String>,
    #[arg(long)]
    teleport_shots: Option<String>,
    #[arg(long)]
    teleport_index: Option<String>,
    /// digest or encrypt_weights.
    #[arg(long)]
    kem_mode: Option<String>,
    #[arg(long)]
    kem_scheme: Option<String>,
    #[arg(long)]
    sig_scheme: Option<String>,
    #[arg(long = "out", alias = "out-path")]
    out_path: Option<String>,
    #[arg(long = "summary", alias = "summary-path")]
    summary_path: Option<String>,
}

impl RunArgs {
    fn flag_pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("dataset", &self.dataset),
            ("devices", &self.devices),
            ("rounds", &self.rounds),
            ("channel", &self.channel),
            ("adversary", &self.adversary),
            ("adversary_fraction", &self.adversary_fraction),
            ("dp", &self.dp),
            ("shots", &self.shots),
            ("optimizer", &self.optimizer),
            ("max_iter", &self.max_iter),
            ("step", &self.step),
            ("seed", &self.seed),
            ("qkd_block_n", &self.qkd_block_n),
            ("qber_threshold", &self.qber_threshold),
            ("test_fraction", &self.test_fraction),
            ("otp_mode", &self.otp_mode),
            ("teleport_mode", &self.teleport_mode),
            ("teleport_checks", &self.teleport_checks),
            ("teleport_shots", &self.teleport_shots),
            ("teleport_index", &self.teleport_index),
            ("kem_mode", &self.kem_mode),
            ("kem_scheme", &self.kem_scheme),
            ("sig_scheme", &self.sig_scheme),
            ("out_path", &self.out_path),
            ("summary_path", &self.summary_path),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchKind {
    Sig,
    Kem,
}

impl BenchKind {
    fn label(self) -> &'static str {
        match self {
            BenchKind::Sig => "signature",
            BenchKind::Kem => "KEM",
        }
    }
}

#[derive(Debug, Args)]
struct BenchArgs {
    kind: BenchKind,
    /// Comma-separated scheme names; defaults to every runnable scheme.
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<String>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EveArg {
    None,
    Intercept,
    Swap,
}

#[derive(Debug, Subcommand)]
enum DemoCommand {
    /// One BB84 session with optional eavesdropper.
    Qkd {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, value_enum, default_value_t = EveArg::None)]
        eve: EveArg,
        /// Fraction of qubits Eve touches.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Share of sifted bits disclosed for QBER estimation. Higher than
        /// the run default so short demos still disclose enough bits.
        #[arg(long, default_value_t = 0.5)]
        test_fraction: f64,
        #[arg(long, default_value_t = crate::qkd::DEFAULT_QBER_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Teleport U3(theta, phi, 0)|0> and report the corrected state.
    Teleport {
        #[arg(long, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long, allow_negative_numbers = true)]
        phi: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Runs the CLI with the reference scheme registry.
pub fn run_cli<I, T>(
    args: I,
    env_seed: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(
        args,
        env_seed,
        SchemeRegistry::with_reference_schemes(),
        out,
        err,
    )
}

/// As [`run_cli`] with a caller-supplied registry, so external adapters can
/// be benchmarked or used as channel schemes.
pub fn run_cli_with<I, T>(
    args: I,
    env_seed: Option<&str>,
    registry: SchemeRegistry,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args, env_seed, registry, out, err),
        Command::Bench(args) => cmd_bench(&args, env_seed, &registry, out, err),
        Command::Demo(demo) => cmd_demo(demo, env_seed, out, err),
    };
    result.unwrap_or_else(|e| {
        let _ = writeln!(err, "error: writing output: {e}");
        EXIT_FAILURE
    })
}

fn env_or_default_seed(flag: Option<u64>, env_seed: Option<&str>) -> Result<u64, ConfigError> {
    match (flag, env_seed) {
        (Some(s), _) => Ok(s),
        (None, Some(v)) => value(SEED_ENV, v),
        (None, None) => Ok(0),
    }
}

fn usage_error(
    err: &mut dyn Write,
    e: &ConfigError,
    usage: Option<String>,
) -> std::io::Result<i32> {
    writeln!(err, "error: {e}")?;
    if let Some(u) = usage {
        writeln!(err, "\n{u}")?;
    }
    Ok(EXIT_USAGE)
}

fn run_usage() -> String {
    Cli::command()
        .find_subcommand_mut("run")
        .expect("run subcommand")
        .render_usage()
        .to_string()
}

fn merged_pairs(args: &RunArgs) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut pairs = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    for (k, v) in args.flag_pairs() {
        if let Some(v) = v {
            pairs.insert(k.to_string(), v.clone());
        }
    }
    Ok(pairs)
}

fn cmd_run(
    args: &RunArgs,
    env_seed: Option<&str>,
    registry: SchemeRegistry,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> std::io::Result<i32> {
    let settings = match merged_pairs(args).and_then(|p| resolve_run_settings(&p, env_seed)) {
        Ok(s) => s,
        Err(e @ ConfigError::MissingDataset) => return usage_error(err, &e, Some(run_usage())),
        Err(e) => return usage_error(err, &e, None),
    };
    let cfg = &settings.experiment;
    let scheme_check = match cfg.channel.kind {
        ChannelKind::Kem => registry.kem(&cfg.channel.kem_scheme).map(drop),
        ChannelKind::PqcSign => registry.signature(&cfg.channel.sig_scheme).map(drop),
        _ => Ok(()),
    };
    if let Err(e) = scheme_check {
        writeln!(err, "error: {e}")?;
        return Ok(EXIT_USAGE);
    }
    let start = Instant::now();
    let result = match run_experiment_with(cfg, registry) {
        Ok(r) => r,
        Err(e @ FedError::Config(_)) => return usage_error(err, &ConfigError::Invalid(e), None),
        Err(e) => {
            writeln!(err, "error: {e}")?;
            return Ok(EXIT_FAILURE);
        }
    };
    for r in &result.rounds {
        writeln!(
            out,
            "round {:>3} {:<10} test_acc {:.4} val_loss {:.4} comm_s {:.6}{}{}",
            r.round,
            r.channel,
            r.server_test_acc,
            r.server_val_loss,
            r.comm_time_s,
            r.qber.map(|q| format!(" qber {q:.4}")).unwrap_or_default(),
            if r.aggregated {
                String::new()
            } else {
                " aggregation skipped".to_string()
            },
        )?;
        if !r.aborted_devices.is_empty() {
            writeln!(out, "          aborted devices {:?}", r.aborted_devices)?;
        }
    }
    if let Err(e) = write_outputs(&settings, &result) {
        writeln!(err, "error: {e}")?;
        return Ok(EXIT_FAILURE);
    }
    writeln!(
        out,
        "wrote {} and {} in {:.2}s",
        settings.out_path.display(),
        settings.summary_path.display(),
        start.elapsed().as_secs_f64()
    )?;
    if result.summary.aggregated_rounds == 0 {
        writeln!(err, "error: every round aborted; no aggregation took place")?;
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn write_outputs(settings: &RunSettings, result: &ExperimentResult) -> Result<(), String> {
    let write = |path: &Path, text: &str| {
        std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
    };
    write(&settings.out_path, &result.csv())?;
    write(&settings.summary_path, &summary_json(settings, result))
}

/// Header of the `bench` CSV.
pub const BENCH_HEADER: [&str; 7] = [
    "scheme",
    "op",
    "trials",
    "median_seconds",
    "size_bytes",
    "fixture_size_bytes",
    "fixture_match",
];

fn bench_fields(r: &BenchRecord) -> [String; 7] {
    [
        r.scheme.clone(),
        r.op.to_string(),
        r.trials.to_string(),
        format!("{:.9}", r.median_seconds),
        r.size_bytes.to_string(),
        r.fixture_size_bytes
            .map(|s| s.to_string())
            .unwrap_or_default(),
        match r.fixture_size_bytes {
            Some(s) if s == r.size_bytes => "yes".into(),
            Some(_) => "no".into(),
            None => String::new(),
        },
    ]
}

pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BENCH_HEADER).expect("writing to memory");
    for r in records {
        w.write_record(bench_fields(r)).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("CSV is UTF-8")
}

fn cmd_bench(
    args: &BenchArgs,
    env_seed: Option<&str>,
    registry: &SchemeRegistry,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> std::io::Result<i32> {
    if args.trials == 0 {
        let e = ConfigError::Value {
            key: "trials".into(),
            value: "0".into(),
            reason: PqcError::ZeroTrials.to_string(),
        };
        return usage_error(err, &e, None);
    }
    let seed = match env_or_default_seed(args.seed, env_seed) {
        Ok(s) => s,
        Err(e) => return usage_error(err, &e, None),
    };
    let want = match args.kind {
        BenchKind::Sig => SchemeKind::Signature,
        BenchKind::Kem => SchemeKind::Kem,
    };
    let schemes = if args.schemes.is_empty() {
        match want {
            SchemeKind::Signature => registry.signature_names(),
            SchemeKind::Kem => registry.kem_names(),
        }
    } else {
        args.schemes.clone()
    };
    // Reject the whole list before timing anything.
    for name in &schemes {
        let problem = match registry.kind_of(name) {
            Some(k) if k == want => continue,
            Some(_) => format!("{name:?} is not a {} scheme", args.kind.label()),
            None => match crate::pqcsuite::scheme_info(name) {
                Ok(_) => PqcError::NotRunnable(name.clone()).to_string(),
                Err(e) => e.to_string(),
            },
        };
        writeln!(err, "error: {problem}")?;
        return Ok(EXIT_USAGE);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for name in &schemes {
        match bench_scheme(registry, name, args.trials, &mut rng) {
            Ok(rows) => records.extend(rows),
            Err(e) => {
                writeln!(err, "error: {name}: {e}")?;
                return Ok(EXIT_FAILURE);
            }
        }
    }
    let text = bench_csv(&records);
    match &args.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                writeln!(err, "error: cannot write {}: {e}", path.display())?;
                return Ok(EXIT_FAILURE);
            }
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(EXIT_OK)
}

fn cmd_demo(
    demo: DemoCommand,
    env_seed: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> std::io::Result<i32> {
    match demo {
        DemoCommand::Qkd {
            n,
            eve,
            fraction,
            test_fraction,
            threshold,
            seed,
        } => {
            let seed = match env_or_default_seed(seed, env_seed) {
                Ok(s) => s,
                Err(e) => return usage_error(err, &e, None),
            };
            demo_qkd(n, eve, fraction, test_fraction, threshold, seed, out, err)
        }
        DemoCommand::Teleport { theta, phi, seed } => {
            let seed = match env_or_default_seed(seed, env_seed) {
                Ok(s) => s,
                Err(e) => return usage_error(err, &e, None),
            };
            demo_teleport(theta, phi, seed, out, err)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn demo_qkd(
    n: usize,
    eve: EveArg,
    fraction: f64,
    test_fraction: f64,
    threshold: f64,
    seed: u64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> std::io::Result<i32> {
    let model = match eve {
        EveArg::None => Ok(EveModel::NONE),
        EveArg::Intercept => EveModel::intercept_resend(fraction),
        EveArg::Swap => EveModel::store_and_resend(fraction),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcome = model.and_then(|m| {
        let mut s = run_bb84(n, &m, &mut rng)?;
        let qber = estimate_qber(&mut s, test_fraction, &mut rng)?;
        let abort = abort_decision(&mut s, threshold)?;
        Ok((m, s, qber, abort))
    });
    let (model, session, qber, abort) = match outcome {
        Ok(x) => x,
        Err(e) => {
            writeln!(err, "error: {e}")?;
            return Ok(EXIT_USAGE);
        }
    };
    let eve_label = match eve {
        EveArg::None => "none".to_string(),
        EveArg::Intercept => format!(
            "intercept-resend on {:.0}% of qubits",
            100.0 * model.fraction
        ),
        EveArg::Swap => format!(
            "store-and-resend on {:.0}% of qubits",
            100.0 * model.fraction
        ),
    };
    writeln!(out, "BB84 session (seed {seed})")?;
    writeln!(out, "qubits sent: {n}")?;
    writeln!(out, "eavesdropper: {eve_label}")?;
    writeln!(out, "sifted length: {}", session.kept.len())?;
    writeln!(out, "test bits: {}", session.test_indices.len())?;
    writeln!(out, "qber: {qber:.6}")?;
    writeln!(out, "threshold: {threshold:.6}")?;
    if abort {
        writeln!(out, "decision: abort")?;
    } else {
        let key = session.key_sender();
        let preview: String = key.iter().take(32).map(|b| char::from(b'0' + b)).collect();
        writeln!(out, "decision: accept")?;
        writeln!(
            out,
            "key bits: {} ({preview}{})",
            key.len(),
            if key.len() > 32 { "..." } else { "" }
        )?;
    }
    Ok(EXIT_OK)
}

fn fmt_qubit(sv: &Statevector) -> String {
    let a = sv.amplitudes();
    format!(
        "({:+.6}{:+.6}i)|0> + ({:+.6}{:+.6}i)|1>",
        a[0].re, a[0].im, a[1].re, a[1].im
    )
}

fn corrections(m1: u8, m2: u8) -> &'static str {
    match (m1, m2) {
        (0, 0) => "none",
        (0, _) => "X",
        (_, 0) => "Z",
        _ => "X then Z",
    }
}

fn demo_teleport(
    theta: f64,
    phi: f64,
    seed: u64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> std::io::Result<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run =
        teleport_once(theta, phi, &mut rng).and_then(|o| Ok((o, teleport_branches(theta, phi)?)));
    let (outcome, branches) = match run {
        Ok(x) => x,
        Err(e) => {
            writeln!(err, "error: {e}")?;
            return Ok(EXIT_USAGE);
        }
    };
    writeln!(out, "teleport U3(theta, phi, 0)|0> (seed {seed})")?;
    writeln!(out, "theta: {theta:.6}")?;
    writeln!(out, "phi: {phi:.6}")?;
    writeln!(out, "target: {}", fmt_qubit(&target_state(theta, phi)))?;
    writeln!(
        out,
        "branch: m1={} m2={} (probability {:.6})",
        outcome.m1, outcome.m2, outcome.probability
    )?;
    writeln!(
        out,
        "bob before corrections: {}",
        fmt_qubit(&outcome.bob_raw)
    )?;
    writeln!(out, "corrections: {}", corrections(outcome.m1, outcome.m2))?;
    writeln!(
        out,
        "bob after corrections: {}",
        fmt_qubit(&outcome.bob_state)
    )?;
    writeln!(
        out,
        "fidelity: {:.6}",
        outcome_fidelity(&outcome, theta, phi)
    )?;
    writeln!(out, "all branches:")?;
    for b in &branches {
        writeln!(
            out,
            "  m1={} m2={} p={:.6} corrections={:<8} fidelity={:.6}",
            b.m1,
            b.m2,
            b.probability,
            corrections(b.m1, b.m2),
            outcome_fidelity(b, theta, phi)
        )?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> BTreeMap<String, String> {
        items
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn config_text_parsing() {
        let map = parse_config_text("# comment\n\ndataset = iris\nrounds=4 # trailing\n").unwrap();
        assert_eq!(map, pairs(&[("dataset", "iris"), ("rounds", "4")]));
        assert_eq!(
            parse_config_text("colour = red"),
            Err(ConfigError::UnknownKey("colour".into()))
        );
        assert_eq!(
            parse_config_text("dataset iris"),
            Err(ConfigError::Syntax { line: 1 })
        );
        assert_eq!(
            parse_config_text("seed=1\nseed=2"),
            Err(ConfigError::Duplicate("seed".into()))
        );
    }

    #[test]
    fn dataset_is_required() {
        assert_eq!(
            resolve_run_settings(&pairs(&[("rounds", "3")]), None),
            Err(ConfigError::MissingDataset)
        );
    }

    #[test]
    fn seed_precedence() {
        let base = pairs(&[("dataset", "iris")]);
        assert_eq!(
            resolve_run_settings(&base, None).unwrap().experiment.seed,
            0
        );
        assert_eq!(
            resolve_run_settings(&base, Some("9"))
                .unwrap()
                .experiment
                .seed,
            9
        );
        let mut with = base.clone();
        with.insert("seed".into(), "4".into());
        assert_eq!(
            resolve_run_settings(&with, Some("9"))
                .unwrap()
                .experiment
                .seed,
            4
        );
        assert!(resolve_run_settings(&base, Some("nine")).is_err());
    }

    #[test]
    fn bad_values_rejected() {
        for (k, v) in [
            ("devices", "0"),
            ("dp", "13"),
            ("channel", "carrier_pigeon"),
            ("optimizer", "cobyla"),
            ("adversary_fraction", "1.5"),
            ("teleport_mode", "psychic"),
            ("test_fraction", "1"),
            ("teleport_shots", "10"),
        ] {
            let mut p = pairs(&[("dataset", "iris"), ("teleport_mode", "tomography")]);
            p.insert(k.into(), v.into());
            assert!(resolve_run_settings(&p, None).is_err(), "{k}={v}");
        }
    }

    #[test]
    fn settings_roundtrip_through_pairs() {
        let p = pairs(&[
            ("dataset", "synthetic_genomic"),
            ("channel", "teleport"),
            ("teleport_mode", "tomography"),
            ("teleport_shots", "500"),
            ("optimizer", "spsa"),
            ("step", "0.25"),
            ("out_path", "x/m.csv"),
        ]);
        let s = resolve_run_settings(&p, None).unwrap();
        assert_eq!(s.summary_path, PathBuf::from("x/m.json"));
        let back = resolve_run_settings(&settings_to_pairs(&s), None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn usage_errors_exit_two() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(
            run_cli(["qshield", "run"], None, &mut out, &mut err),
            EXIT_USAGE
        );
        let text = String::from_utf8(err).unwrap();
        assert!(
            text.contains("no dataset") && text.contains("Usage"),
            "{text}"
        );
        let mut err = Vec::new();
        assert_eq!(
            run_cli(["qshield", "frobnicate"], None, &mut out, &mut err),
            EXIT_USAGE
        );
    }
}
