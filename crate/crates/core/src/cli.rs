//! Command-line front end: configuration layering, presets and writers.
//!
//! Settings are resolved as defaults, then a preset, then a TOML file, then
//! command-line flags. Every command writes its tables, a canonical
//! `config.toml` and a `manifest.json` into the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimate::{ConstantsMode, DnReference, EstimationConfig};
use crate::lan::{PowerConvention, TauMode};
use crate::mc::{self, EstimatorPolicy, ExperimentConfig, PowerRow};
use crate::rng::stream;
use crate::score::NoiseSpec;
use crate::tsmodel::{simulate_alternative, simulate_null, ArchTerm, LocalAlternative, ModelSpec};

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Outcome of a successful run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    AssertFailed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::AssertFailed => 4,
        }
    }
}

// ---------------------------------------------------------------------------
// configuration file

macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `ar1`, `ar2` or `ar1-arch`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch_b: Option<ArchTerm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burnin: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// `gaussian` or `student`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dof: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlternativeSection {
    /// `ex1`, `ex2` or `ex3`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    /// Amplitude of a single simulated path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hprime: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Length of a single simulated path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// `null` or `alternative`, for a single simulated path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<EstimatorPolicy>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrected_component: Option<usize>,
    /// `analytic` or `ergodic`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_aux: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dn_reference: Option<DnReference>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_mode: Option<TauMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_convention: Option<PowerConvention>,
    /// Extra tolerance added to the Monte Carlo band in `--assert` mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assert_slack: Option<f64>,
}

/// Partial or fully resolved settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub noise: NoiseSection,
    pub alternative: AlternativeSection,
    pub experiment: ExperimentSection,
    pub estimation: EstimationSection,
    pub test: TestSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &ConfigFile) -> Self {
        overlay!(self.model, top.model; kind, rho, beta, arch_b, burnin);
        overlay!(self.noise, top.noise; family, dof);
        overlay!(self.alternative, top.alternative; shape, a, h, hprime);
        overlay!(self.experiment, top.experiment; n, regime, n_list, replicates, seed, a_grid, policies, alpha);
        overlay!(self.estimation, top.estimation; c, corrected_component, constants_mode, n_aux, dn_reference);
        overlay!(self.test, top.test; tau_mode, power_convention, assert_slack);
        self
    }

    pub fn defaults() -> Self {
        Self {
            model: ModelSection {
                kind: Some("ar1".into()),
                rho: None,
                beta: None,
                arch_b: None,
                burnin: Some(500),
            },
            noise: NoiseSection {
                family: Some("gaussian".into()),
                dof: None,
            },
            alternative: AlternativeSection {
                shape: None,
                a: Some(0.5),
                h: Some(1.0),
                hprime: Some(1.0),
            },
            experiment: ExperimentSection {
                n: Some(100),
                regime: Some("null".into()),
                n_list: Some(vec![100]),
                replicates: Some(1000),
                seed: Some(0),
                a_grid: Some(vec![0.5]),
                policies: Some(vec![EstimatorPolicy::TrueParam]),
                alpha: Some(0.05),
            },
            estimation: EstimationSection {
                c: Some(1.0),
                corrected_component: Some(0),
                constants_mode: Some("analytic".into()),
                n_aux: Some(1_000_000),
                dn_reference: Some(DnReference::TrueParam),
            },
            test: TestSection {
                tau_mode: Some(TauMode::Aux),
                power_convention: Some(PowerConvention::LeCam),
                assert_slack: Some(0.02),
            },
        }
    }

    /// Fills model-dependent defaults so the result is fully explicit.
    pub fn resolved(mut self) -> CliResult<Self> {
        let kind = self.model.kind.clone().unwrap_or_else(|| "ar1".into());
        match kind.as_str() {
            "ar1" => {
                self.model.rho.get_or_insert_with(|| vec![0.1]);
                self.alternative.shape.get_or_insert_with(|| "ex1".into());
                self.model.beta = None;
                self.model.arch_b = None;
            }
            "ar2" => {
                self.model.rho.get_or_insert_with(|| vec![0.2, 0.2]);
                self.alternative.shape.get_or_insert_with(|| "ex3".into());
                self.model.beta = None;
                self.model.arch_b = None;
            }
            "ar1-arch" => {
                self.model.rho.get_or_insert_with(|| vec![0.1]);
                self.model.beta.get_or_insert(0.5);
                self.model.arch_b.get_or_insert(ArchTerm::Bounded);
                self.alternative.shape.get_or_insert_with(|| "ex2".into());
            }
            other => return Err(CliError::Config(format!("unknown model '{other}' (ar1, ar2, ar1-arch)"))),
        }
        match self.noise.family.as_deref() {
            Some("gaussian") => self.noise.dof = None,
            Some("student") => {
                self.noise.dof.get_or_insert(5);
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown noise '{}' (gaussian, student)",
                    other.unwrap_or("")
                )))
            }
        }
        Ok(self)
    }

    pub fn model_spec(&self) -> CliResult<ModelSpec> {
        let rho = self.model.rho.clone().unwrap_or_default();
        let spec = match self.model.kind.as_deref().unwrap_or("ar1") {
            "ar1" | "ar2" => {
                let want = if self.model.kind.as_deref() == Some("ar2") { 2 } else { 1 };
                if rho.len() != want {
                    return Err(CliError::Config(format!("model needs {want} rho value(s), got {}", rho.len())));
                }
                ModelSpec::ar(rho)?
            }
            "ar1-arch" => {
                if rho.len() != 1 {
                    return Err(CliError::Config(format!("ar1-arch needs one rho value, got {}", rho.len())));
                }
                ModelSpec::ar1_arch(
                    rho[0],
                    self.model.beta.unwrap_or(0.5),
                    self.model.arch_b.unwrap_or_default(),
                )?
            }
            other => return Err(CliError::Config(format!("unknown model '{other}'"))),
        };
        Ok(spec)
    }

    pub fn noise_spec(&self) -> CliResult<NoiseSpec> {
        match self.noise.family.as_deref().unwrap_or("gaussian") {
            "gaussian" => Ok(NoiseSpec::gaussian()),
            "student" => Ok(NoiseSpec::student_t(self.noise.dof.unwrap_or(5))?),
            other => Err(CliError::Config(format!("unknown noise '{other}'"))),
        }
    }

    pub fn alternative(&self, a: f64) -> CliResult<LocalAlternative> {
        let alt = match self.alternative.shape.as_deref().unwrap_or("ex1") {
            "ex1" => LocalAlternative::ex1(a),
            "ex2" => LocalAlternative::ex2(a),
            "ex3" => LocalAlternative::ex3(a),
            other => return Err(CliError::Config(format!("unknown alternative '{other}' (ex1, ex2, ex3)"))),
        };
        Ok(alt.with_steps(self.alternative.h.unwrap_or(1.0), self.alternative.hprime.unwrap_or(1.0)))
    }

    pub fn experiment(&self, threads: Option<usize>) -> CliResult<ExperimentConfig> {
        let model = self.model_spec()?;
        let noise = self.noise_spec()?;
        let alt = self.alternative(1.0)?;
        let mut cfg = ExperimentConfig::new(model, noise, alt);
        let e = &self.experiment;
        cfg.n_list = e.n_list.clone().unwrap_or_default();
        cfg.replicates = e.replicates.unwrap_or(1000);
        cfg.seed = e.seed.unwrap_or(0);
        cfg.a_grid = e.a_grid.clone().unwrap_or_default();
        cfg.policies = e.policies.clone().unwrap_or_default();
        cfg.alpha = e.alpha.unwrap_or(0.05);
        cfg.burnin = self.model.burnin.unwrap_or(500);
        let est = &self.estimation;
        cfg.estimation = EstimationConfig {
            c: est.c.unwrap_or(1.0),
            corrected_component: est.corrected_component.unwrap_or(0),
            dn_reference: est.dn_reference.unwrap_or_default(),
        };
        let n_aux = est.n_aux.unwrap_or(1_000_000);
        cfg.constants_mode = match est.constants_mode.as_deref().unwrap_or("analytic") {
            "analytic" => ConstantsMode::Analytic { n_aux },
            "ergodic" => ConstantsMode::Ergodic { n_aux },
            other => return Err(CliError::Config(format!("unknown constants_mode '{other}' (analytic, ergodic)"))),
        };
        cfg.tau_mode = self.test.tau_mode.unwrap_or_default();
        cfg.threads = threads;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("serializing config: {e}")))
    }
}

fn grid(from: f64, to: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| from + (to - from) * k as f64 / steps as f64)
        .map(|x| (x * 1e12).round() / 1e12)
        .collect()
}

/// Named settings for the worked examples.
pub fn preset(name: &str) -> CliResult<ConfigFile> {
    let mut c = ConfigFile::default();
    let all = Some(EstimatorPolicy::ALL.to_vec());
    match name {
        "paper-ex1" | "paper-fig" => {
            c.model.kind = Some("ar1".into());
            c.model.rho = Some(vec![0.1]);
            c.alternative.shape = Some("ex1".into());
            c.experiment.n_list = Some(vec![30, 40, 60, 80]);
            c.experiment.a_grid = Some(grid(0.1, 1.0, 9));
        }
        "paper-ex2" => {
            c.model.kind = Some("ar1-arch".into());
            c.model.rho = Some(vec![0.1]);
            c.model.beta = Some(0.5);
            c.alternative.shape = Some("ex2".into());
            c.experiment.n_list = Some(vec![30, 40, 50, 80]);
            c.experiment.a_grid = Some(grid(0.1, 1.0, 9));
        }
        "paper-ex3" => {
            c.model.kind = Some("ar2".into());
            c.model.rho = Some(vec![0.2, 0.2]);
            c.alternative.shape = Some("ex3".into());
            c.experiment.n_list = Some(vec![30, 40, 50, 80]);
            c.experiment.a_grid = Some(grid(0.05, 0.5, 9));
            c.estimation.corrected_component = Some(0);
        }
        "desk-ex1" => {
            c.model.kind = Some("ar1".into());
            c.model.rho = Some(vec![0.1]);
            c.alternative.shape = Some("ex1".into());
            c.experiment.n_list = Some(vec![500, 2000, 5000]);
            c.experiment.a_grid = Some(grid(0.05, 0.5, 9));
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown preset '{other}' (paper-ex1, paper-ex2, paper-ex3, paper-fig, desk-ex1)"
            )))
        }
    }
    c.experiment.replicates = Some(1000);
    c.experiment.alpha = Some(0.05);
    c.experiment.policies = all;
    Ok(c)
}

// ---------------------------------------------------------------------------
// command line

#[derive(Debug, Parser)]
#[command(name = "lantest", version, about = "LAN-based tests for time-series models against contiguous alternatives")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named preset applied before the configuration file.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Exit with status 4 when the run's checks fail.
    #[arg(long, global = true)]
    pub assert: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SettingArgs {
    /// ar1, ar2 or ar1-arch.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub rho: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// bounded or square.
    #[arg(long)]
    pub arch_b: Option<String>,
    #[arg(long)]
    pub burnin: Option<usize>,
    /// gaussian or student.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub dof: Option<u32>,
    /// ex1, ex2 or ex3.
    #[arg(long)]
    pub alt: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub h: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hprime: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// null or alternative.
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub a_grid: Option<Vec<f64>>,
    /// Comma-separated: true-param, lse, discrete-lse, mde.
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub corrected_component: Option<usize>,
    /// analytic or ergodic.
    #[arg(long)]
    pub constants_mode: Option<String>,
    #[arg(long)]
    pub n_aux: Option<usize>,
    /// true-param or auxiliary-estimate.
    #[arg(long)]
    pub dn_reference: Option<String>,
    /// aux or plugin.
    #[arg(long)]
    pub tau_mode: Option<String>,
    /// lecam or paper.
    #[arg(long)]
    pub power_convention: Option<String>,
    #[arg(long)]
    pub assert_slack: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate one path and write it as CSV (columns i, y, eps).
    Simulate(SettingArgs),
    /// Power curves over n, a and estimator policies.
    Power(SettingArgs),
    /// Empirical size under the null.
    Size(SettingArgs),
    /// Likelihood-ratio decomposition and conditions under the null.
    LanCheck(SettingArgs),
    /// Estimator errors, central-sequence shifts and fallbacks.
    EstimatorCheck(SettingArgs),
    /// Score functionals and sup-norm bounds of the noise law.
    ScoreAudit(SettingArgs),
}

fn parse_enum<T: DeserializeOwned>(what: &str, value: &str) -> CliResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| CliError::Config(format!("invalid {what} '{value}'")))
}

impl SettingArgs {
    fn to_config(&self, seed: Option<u64>) -> CliResult<ConfigFile> {
        let mut c = ConfigFile::default();
        c.model.kind = self.model.clone();
        c.model.rho = self.rho.clone();
        c.model.beta = self.beta;
        c.model.arch_b = self.arch_b.as_deref().map(|v| parse_enum("arch_b", v)).transpose()?;
        c.model.burnin = self.burnin;
        c.noise.family = self.noise.clone();
        c.noise.dof = self.dof;
        c.alternative.shape = self.alt.clone();
        c.alternative.a = self.a;
        c.alternative.h = self.h;
        c.alternative.hprime = self.hprime;
        c.experiment.n = self.n;
        c.experiment.regime = self.regime.clone();
        c.experiment.n_list = self.n_list.clone();
        c.experiment.replicates = self.replicates;
        c.experiment.seed = seed;
        c.experiment.a_grid = self.a_grid.clone();
        c.experiment.policies = self
            .policies
            .as_ref()
            .map(|ps| ps.iter().map(|p| p.parse::<EstimatorPolicy>()).collect::<Result<Vec<_>, _>>())
            .transpose()?;
        c.experiment.alpha = self.alpha;
        c.estimation.c = self.c;
        c.estimation.corrected_component = self.corrected_component;
        c.estimation.constants_mode = self.constants_mode.clone();
        c.estimation.n_aux = self.n_aux;
        c.estimation.dn_reference = self.dn_reference.as_deref().map(|v| parse_enum("dn_reference", v)).transpose()?;
        c.test.tau_mode = self.tau_mode.as_deref().map(|v| parse_enum("tau_mode", v)).transpose()?;
        c.test.power_convention = self
            .power_convention
            .as_deref()
            .map(|v| parse_enum("power_convention", v))
            .transpose()?;
        c.test.assert_slack = self.assert_slack;
        Ok(c)
    }
}

/// Layers defaults, preset, file and flags.
pub fn resolve_config(global: &GlobalArgs, flags: &SettingArgs) -> CliResult<ConfigFile> {
    let mut cfg = ConfigFile::defaults();
    if let Some(name) = &global.preset {
        cfg = cfg.overlay(&preset(name)?);
    }
    if let Some(path) = &global.config {
        cfg = cfg.overlay(&ConfigFile::load(path)?);
    }
    cfg.overlay(&flags.to_config(global.seed)?).resolved()
}

// ---------------------------------------------------------------------------
// writers

/// Writes rows with a header line; floats use the shortest round-trip form.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub i: usize,
    pub y: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Milliseconds since the Unix epoch.
    pub started_at_ms: u128,
    pub finished_at_ms: u128,
    pub files: Vec<String>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
    started: u128,
}

impl Output {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: now_ms(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn finish(mut self, command: &str, config: &ConfigFile, hash: String, seed: u64) -> CliResult<()> {
        let cfg_path = self.path("config.toml");
        fs::write(&cfg_path, config.to_toml()?).map_err(|e| io_err(&cfg_path, e))?;
        self.files.push("manifest.json".into());
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: hash,
            seed,
            started_at_ms: self.started,
            finished_at_ms: now_ms(),
            files: self.files.clone(),
        };
        write_json(&self.dir.join("manifest.json"), &manifest)
    }
}

/// Hash of the canonical settings for commands without an experiment.
fn settings_hash(config: &ConfigFile) -> CliResult<String> {
    use sha2::{Digest, Sha256};
    Ok(hex::encode(Sha256::digest(config.to_toml()?.as_bytes())))
}

// ---------------------------------------------------------------------------
// commands

fn power_within_band(rows: &[PowerRow], convention: PowerConvention, slack: f64) -> bool {
    rows.iter()
        .filter(|r| r.policy == EstimatorPolicy::TrueParam && r.valid > 0)
        .all(|r| {
            let target = match convention {
                PowerConvention::LeCam => r.analytic_power_lecam,
                PowerConvention::TauSquared => r.analytic_power_paper,
            };
            let se = (target * (1.0 - target) / r.valid as f64).sqrt();
            (r.rejection_rate - target).abs() <= 3.0 * se + slack
        })
}

pub fn cmd_simulate(global: &GlobalArgs, flags: &SettingArgs) -> CliResult<Status> {
    let config = resolve_config(global, flags)?;
    let model = config.model_spec()?;
    let noise = config.noise_spec()?;
    let n = config.experiment.n.unwrap_or(100);
    let seed = config.experiment.seed.unwrap_or(0);
    let burnin = config.model.burnin.unwrap_or(500);
    if n == 0 {
        return Err(CliError::Config("n must be at least 1".into()));
    }
    let mut rng = stream(seed);
    let path = match config.experiment.regime.as_deref().unwrap_or("null") {
        "null" => simulate_null(&model, &noise, n, burnin, &mut rng)?,
        "alternative" => {
            let alt = config.alternative(config.alternative.a.unwrap_or(0.5))?;
            alt.check_model(&model)?;
            simulate_alternative(&model, &alt, &noise, n, burnin, &mut rng)?
        }
        other => return Err(CliError::Config(format!("unknown regime '{other}' (null, alternative)"))),
    };
    let rows: Vec<PathRow> = (0..path.len())
        .map(|i| PathRow {
            i: i + 1,
            y: path.y[i],
            eps: path.eps[i],
        })
        .collect();
    let mut out = Output::new(&global.out_dir)?;
    write_csv(&out.path("path.csv"), &rows)?;
    let hash = settings_hash(&config)?;
    out.finish("simulate", &config, hash, seed)?;
    Ok(Status::Ok)
}

fn run_tests(global: &GlobalArgs, flags: &SettingArgs, size: bool) -> CliResult<Status> {
    let config = resolve_config(global, flags)?;
    let exp = config.experiment(global.threads)?;
    let result = if size {
        mc::run_size_experiment(&exp)?
    } else {
        mc::run_power_experiment(&exp)?
    };
    let aux = mc::Auxiliary::compute(&exp)?;
    let mut out = Output::new(&global.out_dir)?;
    let table = if size { "size.csv" } else { "power.csv" };
    write_csv(&out.path(table), &result.rows)?;
    write_csv(&out.path("records.csv"), &result.records)?;
    write_json(&out.path("auxiliary.json"), &aux)?;
    out.finish(if size { "size" } else { "power" }, &config, result.config_hash.clone(), exp.seed)?;
    for r in &result.rows {
        say!(
            "n={:<6} a={:<8} {:<13} rate={:.4} lecam={:.4} paper={:.4} failures={}",
            r.n,
            r.a,
            r.policy.label(),
            r.rejection_rate,
            r.analytic_power_lecam,
            r.analytic_power_paper,
            r.failures
        );
    }
    if global.assert {
        let conv = config.test.power_convention.unwrap_or_default();
        let slack = config.test.assert_slack.unwrap_or(0.02);
        if !power_within_band(&result.rows, conv, slack) {
            return Ok(Status::AssertFailed);
        }
    }
    Ok(Status::Ok)
}

pub fn cmd_power(global: &GlobalArgs, flags: &SettingArgs) -> CliResult<Status> {
    run_tests(global, flags, false)
}

pub fn cmd_size(global: &GlobalArgs, flags: &SettingArgs) -> CliResult<Status> {
    run_tests(global, flags, true)
}

fn decreasing_with_slack(xs: &[f64], slack: f64) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
}

pub fn cmd_lan_check(global: &GlobalArgs, flags: &SettingArgs) -> CliResult<Status> {
    let config = resolve_config(global, flags)?;
    let exp = config.experiment(global.threads)?;
    let result = mc::run_lan_diagnostic(&exp)?;
    let mut out = Output::new(&global.out_dir)?;
    write_csv(&out.path("lan.csv"), &result.rows)?;
    write_csv(&out.path("lan_records.csv"), &result.records)?;
    write_json(&out.path("lan_report.json"), &result.rows)?;
    out.finish("lan-check", &config, result.config_hash.clone(), exp.seed)?;
    for r in &result.rows {
        say!(
            "n={:<6} a={:<8} |lan residual|={:.4} c1={:.4} |c2-tau2|/tau2={:.4} |c3 gap|={:.4}",
            r.n, r.a, r.median_abs_lan_residual, r.median_c1, r.median_rel_c2_gap, r.median_abs_c3_gap
        );
    }
    if global.assert {
        for &a in &exp.a_grid {
            let rows: Vec<_> = result.rows.iter().filter(|r| r.a == a).collect();
            let resid: Vec<f64> = rows.iter().map(|r| r.median_abs_lan_residual).collect();
            let c1: Vec<f64> = rows.iter().map(|r| r.median_c1).collect();
            if !decreasing_with_slack(&resid, 0.1) || !decreasing_with_slack(&c1, 0.1) {
                return Ok(Status::AssertFailed);
            }
        }
    }
    Ok(Status::Ok)
}

pub fn cmd_estimator_check(global: &GlobalArgs, flags: &SettingArgs) -> CliResult<Status> {
    let config = resolve_config(global, flags)?;
    let exp = config.experiment(global.threads)?;
    let result = mc::run_estimator_diagnostic(&exp)?;
    let aux = mc::Auxiliary::compute(&exp)?;
    let mut out = Output::new(&global.out_dir)?;
    write_csv(&out.path("estimator.csv"), &result.rows)?;
    write_csv(&out.path("estimator_records.csv"), &result.records)?;
    write_json(&out.path("auxiliary.json"), &aux)?;
    out.finish("estimator-check", &config, result.config_hash.clone(), exp.seed)?;
    for r in &result.rows {
        say!(
            "n={:<6} a={:<8} p95 sqrt(n)|err| lse={:.3} disc={:.3} mde={:.3} shift residual={:.4} fallbacks={:.3}",
            r.n, r.a, r.p95_err_lse, r.p95_err_discrete, r.p95_err_mde, r.median_abs_shift_residual, r.fallback_fraction
        );
    }
    if global.assert {
        for &a in &exp.a_grid {
            let shift: Vec<f64> = result
                .rows
                .iter()
                .filter(|r| r.a == a)
                .map(|r| r.median_abs_shift_residual)
                .collect();
            if !decreasing_with_slack(&shift, 0.1) {
                return Ok(Status::AssertFailed);
            }
        }
    }
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
struct AuditOutput {
    moments: crate::score::NoiseMoments,
    normalization: (f64, f64, f64),
    audit: crate::score::AuditReport,
}

pub fn cmd_score_audit(global: &GlobalArgs, flags: &SettingArgs) -> CliResult<Status> {
    let config = resolve_config(global, flags)?;
    let noise = config.noise_spec()?;
    let audit = noise.audit_regularity();
    let report = AuditOutput {
        moments: noise.moments(),
        normalization: noise.normalization(),
        audit,
    };
    let mut out = Output::new(&global.out_dir)?;
    write_json(&out.path("audit.json"), &report)?;
    let hash = settings_hash(&config)?;
    out.finish("score-audit", &config, hash, config.experiment.seed.unwrap_or(0))?;
    for f in &report.audit.functionals {
        say!("{:<28} {:>14.6e} expected {:>6} {}", f.name, f.value, f.expected, if f.pass { "ok" } else { "FAIL" });
    }
    for s in &report.audit.sup_norms {
        let bound = s.bound.map(|b| format!("{b:.4}")).unwrap_or_else(|| "-".into());
        say!("sup {:<24} {:>14.6} bound {:>8} {}", s.name, s.sup, bound, if s.pass { "ok" } else { "FAIL" });
    }
    if global.assert && !report.audit.all_pass {
        return Ok(Status::AssertFailed);
    }
    Ok(Status::Ok)
}

pub fn run(cli: &Cli) -> CliResult<Status> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(g, a),
        Command::Power(a) => cmd_power(g, a),
        Command::Size(a) => cmd_size(g, a),
        Command::LanCheck(a) => cmd_lan_check(g, a),
        Command::EstimatorCheck(a) => cmd_estimator_check(g, a),
        Command::ScoreAudit(a) => cmd_score_audit(g, a),
    }
}

/// Runs the tool on an argument list and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
