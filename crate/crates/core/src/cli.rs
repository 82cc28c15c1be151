//! Command-line front end.
//!
//! Commands: `eval`, `scan`, `simulate`, `roundtrip`, `collab`. Flags
//! override values from `--config FILE` (TOML with the same key names,
//! underscores for dashes); the seed falls back to `OAM_SEED`.
//!
//! Exit codes: 0 success, 2 decoding failed (degenerate or wrong), 1 error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::channel::{Channel, ChannelModel, ChannelParams};
use crate::codec::{encode, messages_from_hex, Constellation, Message};
use crate::exec::Execution;
use crate::invariants::{
    default_grid, eval_invariant, invariance_scan, random_family_samples, registry, ExponentFit, InvariantValue, ScanRow,
    DEFAULT_WEAK_CROSSTALK, DEFAULT_SURVIVAL_GRID,
};
use crate::protocol::{
    collaboration_test, derive_seed, run_protocol, simulate_state, write_records_csv, CollabReport, ProtocolOptions,
    ProtocolReport, DEFAULT_RESAMPLES, DEFAULT_ROUNDS,
};
use crate::qcore::{density_of, make_state, Complex, Party, StateCoefficients};

pub const SCHEMA: &str = "v1";
pub const DEFAULT_SURVIVAL: f64 = 0.9;
pub const DEFAULT_MESSAGE: &str = "5a";
pub const DEFAULT_SCAN_SAMPLES: usize = 100;
/// Seed for the random family states drawn by `scan`.
pub const DEFAULT_SEED: u64 = 0;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DECODE_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "oam-collab", version, about = "Noise-invariant three-party transfer over turbulent OAM channels")]
struct Cli {
    /// TOML file with default option values; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: CommandArgs,
}

#[derive(Debug, Subcommand)]
enum CommandArgs {
    /// Exact invariant values for a state, before and after the channel
    Eval(Flags),
    /// Exact invariance scan over random family states and a channel grid
    Scan(Flags),
    /// Dump simulated measurement records as CSV
    Simulate(Flags),
    /// Encode, transmit, measure, estimate and decode a message
    Roundtrip(Flags),
    /// Decode with one party's outcomes replaced by coin flips
    Collab(Flags),
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Flags {
    /// Channel model: collective or independent [default: collective; scan: both]
    #[arg(long)]
    model: Option<String>,
    /// Survival probability a² in [0, 1] [default: 0.9]
    #[arg(long)]
    a2: Option<f64>,
    /// Crosstalk probability b² in [0, 1] (alternative to --a2)
    #[arg(long)]
    b2: Option<f64>,
    /// Measurement rounds per message byte [default: 200000]
    #[arg(long)]
    rounds: Option<usize>,
    /// Master seed [default: $OAM_SEED, else 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Message as hex, one byte per transmitted block [default: 5a]
    #[arg(long)]
    msg: Option<String>,
    /// Bootstrap resamples [default: 200]
    #[arg(long)]
    resamples: Option<usize>,
    /// Phase alphabet override, four comma-separated radians
    #[arg(long, value_delimiter = ',')]
    phases: Option<Vec<f64>>,
    /// Modulus profile override, five comma-separated values with unit norm
    #[arg(long, value_delimiter = ',')]
    moduli: Option<Vec<f64>>,
    /// State coefficients for eval: five `;`-separated entries, each `re` or `re,im`
    #[arg(long)]
    coeffs: Option<String>,
    /// Survival probabilities a² for scan [default: 0.5,0.7,0.9,0.99]
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Crosstalk amplitudes b for the weak-turbulence fit [default: 0.001,0.002,0.004,0.008]
    #[arg(long, value_delimiter = ',')]
    weak: Option<Vec<f64>>,
    /// Random family states for scan [default: 100]
    #[arg(long)]
    samples: Option<usize>,
    /// Party whose outcomes are randomized: A, B, C or none [default: C]
    #[arg(long)]
    withhold: Option<String>,
    /// Independent collab trials (seeds seed, seed+1, ...) [default: 1]
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads [default: all cores; ignored in sequential builds]
    #[arg(long)]
    threads: Option<usize>,
    /// JSON output path [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV output path (scan rows or simulate records)
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Omit timing fields so reports are byte-reproducible
    #[arg(long)]
    #[serde(skip)]
    no_timing: bool,
}

impl Flags {
    fn overlay(self, file: Flags) -> Flags {
        Flags {
            model: self.model.or(file.model),
            a2: self.a2.or(file.a2),
            b2: self.b2.or(file.b2),
            rounds: self.rounds.or(file.rounds),
            seed: self.seed.or(file.seed),
            msg: self.msg.or(file.msg),
            resamples: self.resamples.or(file.resamples),
            phases: self.phases.or(file.phases),
            moduli: self.moduli.or(file.moduli),
            coeffs: self.coeffs.or(file.coeffs),
            grid: self.grid.or(file.grid),
            weak: self.weak.or(file.weak),
            samples: self.samples.or(file.samples),
            withhold: self.withhold.or(file.withhold),
            trials: self.trials.or(file.trials),
            threads: self.threads.or(file.threads),
            out: self.out.or(file.out),
            csv: self.csv.or(file.csv),
            no_timing: self.no_timing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Eval,
    Scan,
    Simulate,
    Roundtrip,
    Collab,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// `None` only for `scan`, meaning both models.
    pub model: Option<ChannelModel>,
    pub params: ChannelParams,
    pub rounds: usize,
    pub seed: u64,
    pub messages: Vec<Message>,
    pub resamples: usize,
    pub constellation: Constellation,
    pub coeffs: Option<StateCoefficients>,
    pub grid: Vec<f64>,
    pub weak: Vec<f64>,
    pub samples: usize,
    pub withhold: Option<Party>,
    pub trials: usize,
    pub threads: Option<usize>,
    pub timing: bool,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl RunConfig {
    fn channel(&self) -> Channel {
        Channel::new(self.model.unwrap_or(ChannelModel::Collective), self.params)
    }

    fn options(&self) -> ProtocolOptions {
        ProtocolOptions {
            resamples: self.resamples,
            constellation: self.constellation.clone(),
            exec: Execution::default(),
            timing: self.timing,
        }
    }
}

/// Usage problems, reported on stderr with exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
}

fn usage(msg: impl Into<String>) -> ConfigError {
    ConfigError::Usage(msg.into())
}

fn parse_coeffs(text: &str) -> Result<StateCoefficients, ConfigError> {
    let entries: Vec<&str> = text.split(';').map(str::trim).collect();
    if entries.len() != 5 {
        return Err(usage(format!("--coeffs needs 5 `;`-separated entries, got {}", entries.len())));
    }
    let mut alpha = [Complex::new(0.0, 0.0); 5];
    for (slot, entry) in alpha.iter_mut().zip(&entries) {
        let parts: Vec<f64> = entry
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| usage(format!("bad coefficient `{entry}`")))?;
        *slot = match parts.as_slice() {
            [re] => Complex::new(*re, 0.0),
            [re, im] => Complex::new(*re, *im),
            _ => return Err(usage(format!("bad coefficient `{entry}`"))),
        };
    }
    StateCoefficients::new(alpha).map_err(|e| usage(format!("--coeffs: {e}")))
}

fn check_probability(name: &str, v: f64) -> Result<f64, ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(usage(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Parses arguments, merging an optional config file and the `OAM_SEED` fallback.
pub fn parse_config<I, T>(argv: I, env_seed: Option<&str>) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let (command, flags) = match cli.command {
        CommandArgs::Eval(f) => (Command::Eval, f),
        CommandArgs::Scan(f) => (Command::Scan, f),
        CommandArgs::Simulate(f) => (Command::Simulate, f),
        CommandArgs::Roundtrip(f) => (Command::Roundtrip, f),
        CommandArgs::Collab(f) => (Command::Collab, f),
    };
    let file_flags = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<Flags>(&text).map_err(|e| usage(format!("bad config file {}: {e}", path.display())))?
        }
        None => Flags::default(),
    };
    resolve(command, flags.overlay(file_flags), env_seed)
}

fn resolve(command: Command, f: Flags, env_seed: Option<&str>) -> Result<RunConfig, ConfigError> {
    let model = match f.model.as_deref() {
        Some(m) => Some(m.parse::<ChannelModel>().map_err(usage)?),
        None if command == Command::Scan => None,
        None => Some(ChannelModel::Collective),
    };
    let params = match (f.a2, f.b2) {
        (Some(_), Some(_)) => return Err(usage("give only one of --a2 and --b2")),
        (Some(a2), None) => ChannelParams::from_survival_probability(check_probability("--a2", a2)?),
        (None, Some(b2)) => ChannelParams::from_survival_probability(1.0 - check_probability("--b2", b2)?),
        (None, None) => ChannelParams::from_survival_probability(DEFAULT_SURVIVAL),
    }
    .map_err(|e| usage(e.to_string()))?;
    let seed = match (f.seed, env_seed) {
        (Some(s), _) => s,
        (None, Some(env)) => env
            .trim()
            .parse()
            .map_err(|_| usage(format!("OAM_SEED `{env}` is not an unsigned integer")))?,
        (None, None) => DEFAULT_SEED,
    };
    let messages = messages_from_hex(f.msg.as_deref().unwrap_or(DEFAULT_MESSAGE)).map_err(|e| usage(e.to_string()))?;
    let default_c = Constellation::default();
    let phases = f.phases.unwrap_or_else(|| default_c.phases().to_vec());
    if phases.len() != 4 {
        return Err(usage("--phases needs exactly four values (2 bits per symbol)"));
    }
    let moduli: [f64; 5] = match f.moduli {
        Some(m) => m.try_into().map_err(|_| usage("--moduli needs exactly five values"))?,
        None => *default_c.moduli(),
    };
    let constellation = Constellation::new(phases, moduli).map_err(|e| usage(e.to_string()))?;
    let coeffs = f.coeffs.as_deref().map(parse_coeffs).transpose()?;
    let grid = f.grid.unwrap_or_else(|| DEFAULT_SURVIVAL_GRID.to_vec());
    for &g in &grid {
        check_probability("--grid", g)?;
    }
    let weak = f.weak.unwrap_or_else(|| DEFAULT_WEAK_CROSSTALK.to_vec());
    for &w in &weak {
        check_probability("--weak", w)?;
    }
    let withhold = match f.withhold.as_deref() {
        None => Some(Party::C),
        Some("none") | Some("NONE") => None,
        Some(p) => Some(p.parse::<Party>().map_err(usage)?),
    };
    let trials = f.trials.unwrap_or(1);
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if f.threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    Ok(RunConfig {
        command,
        model,
        params,
        rounds: f.rounds.unwrap_or(DEFAULT_ROUNDS),
        seed,
        messages,
        resamples: f.resamples.unwrap_or(DEFAULT_RESAMPLES),
        constellation,
        coeffs,
        grid,
        weak,
        samples: f.samples.unwrap_or(DEFAULT_SCAN_SAMPLES),
        withhold,
        trials,
        threads: f.threads,
        timing: !f.no_timing,
        out: f.out,
        csv: f.csv,
    })
}

#[derive(Serialize)]
struct ValueEntry<'a> {
    id: &'a str,
    note: &'a str,
    #[serde(flatten)]
    value: InvariantValue,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    schema: &'static str,
    command: Command,
    model: ChannelModel,
    a: f64,
    b: f64,
    coefficients: Vec<Complex>,
    input: Vec<ValueEntry<'a>>,
    transmitted: Vec<ValueEntry<'a>>,
}

#[derive(Serialize)]
struct ScanOutput {
    schema: &'static str,
    command: Command,
    samples: usize,
    seed: u64,
    models: Vec<ChannelModel>,
    max_deviation: BTreeMap<String, BTreeMap<ChannelModel, f64>>,
    exponents: Vec<ExponentFit>,
    degenerate_inputs: BTreeMap<String, usize>,
    degenerate_outputs: BTreeMap<String, usize>,
    rows: Vec<ScanRow>,
}

#[derive(Serialize)]
struct RoundtripOutput {
    schema: &'static str,
    command: Command,
    sent: String,
    decoded: Option<String>,
    success: bool,
    blocks: Vec<ProtocolReport>,
}

#[derive(Serialize)]
struct TrialSummary {
    seed: u64,
    decoded: Option<String>,
    success: bool,
    control_success: bool,
}

#[derive(Serialize)]
struct CollabOutput {
    schema: &'static str,
    command: Command,
    withheld: Option<Party>,
    sent: String,
    decode_success: bool,
    control_success: bool,
    trials: usize,
    exact_match_rate: f64,
    control_match_rate: f64,
    trial_results: Vec<TrialSummary>,
    /// Full reports for the first trial.
    blocks: Vec<CollabReport>,
}

fn write_output(path: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => stdout.write_all(bytes).context("writing stdout"),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn joined_decoded(reports: &[Option<String>]) -> Option<String> {
    reports.iter().cloned().collect::<Option<Vec<_>>>().map(|v| v.concat())
}

fn hex_of(msgs: &[Message]) -> String {
    msgs.iter().map(|m| m.to_string()).collect()
}

fn run_eval(cfg: &RunConfig, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    let coeffs = match cfg.coeffs {
        Some(c) => c,
        None => encode(&cfg.messages[0], &cfg.constellation)?,
    };
    let rho = density_of(&make_state(&coeffs));
    let ch = cfg.channel();
    let out_rho = ch.apply(&rho);
    let entries = |r| {
        registry()
            .iter()
            .map(|spec| ValueEntry {
                id: &spec.id,
                note: &spec.note,
                value: eval_invariant(spec, r),
            })
            .collect()
    };
    let out = EvalOutput {
        schema: SCHEMA,
        command: Command::Eval,
        model: ch.model(),
        a: ch.params().a(),
        b: ch.params().b(),
        coefficients: coeffs.alpha().to_vec(),
        input: entries(&rho),
        transmitted: entries(&out_rho),
    };
    write_output(cfg.out.as_deref(), stdout, &json_bytes(&out)?)?;
    Ok(EXIT_OK)
}

fn run_scan(cfg: &RunConfig, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    let models: Vec<ChannelModel> = match cfg.model {
        Some(m) => vec![m],
        None => ChannelModel::ALL.to_vec(),
    };
    let mut grid = Vec::new();
    for &a2 in &cfg.grid {
        grid.push(ChannelParams::from_survival_probability(a2)?);
    }
    for &b in &cfg.weak {
        grid.push(ChannelParams::from_crosstalk(b)?);
    }
    if cfg.grid == DEFAULT_SURVIVAL_GRID && cfg.weak == DEFAULT_WEAK_CROSSTALK {
        debug_assert_eq!(grid, default_grid());
    }
    let samples = random_family_samples(cfg.samples.max(1), cfg.seed);
    let report = invariance_scan(&samples, &models, &grid, Execution::default());
    if let Some(path) = &cfg.csv {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        report.write_csv(file)?;
    }
    let mut max_deviation: BTreeMap<String, BTreeMap<ChannelModel, f64>> = BTreeMap::new();
    for row in &report.rows {
        let entry = max_deviation.entry(row.id.clone()).or_default().entry(row.model).or_insert(0.0);
        *entry = entry.max(row.deviation);
    }
    let out = ScanOutput {
        schema: SCHEMA,
        command: Command::Scan,
        samples: report.samples,
        seed: cfg.seed,
        models,
        max_deviation,
        exponents: report.exponents,
        degenerate_inputs: report.degenerate_inputs,
        degenerate_outputs: report.degenerate_outputs,
        rows: report.rows,
    };
    write_output(cfg.out.as_deref(), stdout, &json_bytes(&out)?)?;
    Ok(EXIT_OK)
}

fn run_simulate(cfg: &RunConfig, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    let coeffs = match cfg.coeffs {
        Some(c) => c,
        None => encode(&cfg.messages[0], &cfg.constellation)?,
    };
    let rho = cfg.channel().apply(&density_of(&make_state(&coeffs)));
    let records = simulate_state(&rho, cfg.rounds, cfg.seed, Execution::default());
    let mut buf = Vec::new();
    write_records_csv(&records, &mut buf)?;
    write_output(cfg.csv.as_deref().or(cfg.out.as_deref()), stdout, &buf)?;
    Ok(EXIT_OK)
}

fn run_roundtrip(cfg: &RunConfig, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    let ch = cfg.channel();
    let opts = cfg.options();
    let blocks = cfg
        .messages
        .iter()
        .enumerate()
        .map(|(k, m)| run_protocol(m, &ch, cfg.rounds, derive_seed(cfg.seed, k as u64), &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let decoded = joined_decoded(&blocks.iter().map(|b| b.decoded.clone()).collect::<Vec<_>>());
    let success = blocks.iter().all(|b| b.success);
    let out = RoundtripOutput {
        schema: SCHEMA,
        command: Command::Roundtrip,
        sent: hex_of(&cfg.messages),
        decoded,
        success,
        blocks,
    };
    write_output(cfg.out.as_deref(), stdout, &json_bytes(&out)?)?;
    Ok(if success { EXIT_OK } else { EXIT_DECODE_FAILED })
}

fn run_collab(cfg: &RunConfig, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    let ch = cfg.channel();
    let opts = cfg.options();
    let mut trial_results = Vec::new();
    let mut first_blocks = Vec::new();
    for t in 0..cfg.trials {
        let trial_seed = cfg.seed.wrapping_add(t as u64);
        let blocks = cfg
            .messages
            .iter()
            .enumerate()
            .map(|(k, m)| collaboration_test(m, &ch, cfg.rounds, derive_seed(trial_seed, k as u64), cfg.withhold, &opts))
            .collect::<Result<Vec<_>, _>>()?;
        trial_results.push(TrialSummary {
            seed: trial_seed,
            decoded: joined_decoded(&blocks.iter().map(|b| b.randomized.decoded.clone()).collect::<Vec<_>>()),
            success: blocks.iter().all(|b| b.decode_success),
            control_success: blocks.iter().all(|b| b.control.success),
        });
        if t == 0 {
            first_blocks = blocks;
        }
    }
    let rate = |f: fn(&TrialSummary) -> bool| trial_results.iter().filter(|t| f(t)).count() as f64 / cfg.trials as f64;
    let exact_match_rate = rate(|t| t.success);
    let control_match_rate = rate(|t| t.control_success);
    let decode_success = trial_results.iter().all(|t| t.success);
    let out = CollabOutput {
        schema: SCHEMA,
        command: Command::Collab,
        withheld: cfg.withhold,
        sent: hex_of(&cfg.messages),
        decode_success,
        control_success: trial_results.iter().all(|t| t.control_success),
        trials: cfg.trials,
        exact_match_rate,
        control_match_rate,
        trial_results,
        blocks: first_blocks,
    };
    write_output(cfg.out.as_deref(), stdout, &json_bytes(&out)?)?;
    Ok(if decode_success { EXIT_OK } else { EXIT_DECODE_FAILED })
}

fn dispatch_inner(cfg: &RunConfig, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    match cfg.command {
        Command::Eval => run_eval(cfg, stdout),
        Command::Scan => run_scan(cfg, stdout),
        Command::Simulate => run_simulate(cfg, stdout),
        Command::Roundtrip => run_roundtrip(cfg, stdout),
        Command::Collab => run_collab(cfg, stdout),
    }
}

/// Runs the configured command, writing to `stdout` unless an output path is set.
pub fn dispatch(cfg: &RunConfig, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    match cfg.threads {
        Some(threads) => {
            let mut buf = Vec::new();
            let code = with_threads(threads, || dispatch_inner(cfg, &mut buf))?;
            stdout.write_all(&buf).context("writing stdout")?;
            Ok(code)
        }
        None => dispatch_inner(cfg, stdout),
    }
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> anyhow::Result<T> + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    pool.install(f)
}

/// Without the `parallel` feature everything runs on the calling thread.
#[cfg(not(feature = "parallel"))]
fn with_threads<T: Send>(_threads: usize, f: impl FnOnce() -> anyhow::Result<T> + Send) -> anyhow::Result<T> {
    f()
}

/// Full CLI entry point; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env_seed = std::env::var("OAM_SEED").ok();
    let cfg = match parse_config(argv, env_seed.as_deref()) {
        Ok(cfg) => cfg,
        Err(ConfigError::Clap(e)) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match dispatch(&cfg, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
