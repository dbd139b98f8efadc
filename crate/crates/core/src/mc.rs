//! Monte Carlo experiments: size, power, LAN diagnostics and estimator
//! diagnostics.
//!
//! Every replicate draws from its own stream seeded by
//! `(master seed, experiment, n, a, replicate)`, so results do not depend on
//! scheduling. Aggregation sorts the per-replicate records first and can be
//! rerun from records read back from disk.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimate::{
    central_gradient, correction_constants_from_path, d_n, estimate_set, ConstantsMode,
    CorrectionConstants, DnReference, EstimationConfig,
};
use crate::lan::{
    analytic_power, central_sequence, lan_report, np_test, plugin_tau_squared, tau_squared,
    PowerConvention, TauExpectations, TauMode,
};
use crate::rng::{derive_seed, replicate_seed, stream};
use crate::score::{NoiseMoments, NoiseSpec};
use crate::stats;
use crate::tsmodel::{simulate_alternative, simulate_null, LocalAlternative, ModelSpec, Params, SeriesPath};

const TAG_AUX: u64 = 0xA0;
const TAG_POWER: u64 = 0xB1;
const TAG_SIZE: u64 = 0xB2;
const TAG_LAN: u64 = 0xB3;
const TAG_ESTIMATOR: u64 = 0xB4;

/// Parameter at which the test statistic is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorPolicy {
    TrueParam,
    Lse,
    DiscreteLse,
    Mde,
}

impl EstimatorPolicy {
    pub const ALL: [EstimatorPolicy; 4] = [
        EstimatorPolicy::TrueParam,
        EstimatorPolicy::Lse,
        EstimatorPolicy::DiscreteLse,
        EstimatorPolicy::Mde,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorPolicy::TrueParam => "true-param",
            EstimatorPolicy::Lse => "lse",
            EstimatorPolicy::DiscreteLse => "discrete-lse",
            EstimatorPolicy::Mde => "mde",
        }
    }
}

impl std::str::FromStr for EstimatorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator policy '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub noise: NoiseSpec,
    /// Direction shape and steps; amplitudes come from `a_grid`.
    pub alternative: LocalAlternative,
    pub n_list: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub a_grid: Vec<f64>,
    pub policies: Vec<EstimatorPolicy>,
    pub alpha: f64,
    pub burnin: usize,
    pub estimation: EstimationConfig,
    pub constants_mode: ConstantsMode,
    pub tau_mode: TauMode,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, noise: NoiseSpec, alternative: LocalAlternative) -> Self {
        Self {
            model,
            noise,
            alternative,
            n_list: vec![100],
            replicates: 1000,
            seed: 0,
            a_grid: vec![0.5],
            policies: vec![EstimatorPolicy::TrueParam],
            alpha: 0.05,
            burnin: 500,
            estimation: EstimationConfig::default(),
            constants_mode: ConstantsMode::default(),
            tau_mode: TauMode::Aux,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.n_list.is_empty() {
            return bad("n_list is empty".into());
        }
        if self.a_grid.is_empty() {
            return bad("a_grid is empty".into());
        }
        if self.policies.is_empty() {
            return bad("no estimator policy selected".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.a_grid.iter().any(|a| !a.is_finite()) {
            return bad("a_grid contains a non-finite value".into());
        }
        if self.policies.contains(&EstimatorPolicy::Mde) && self.a_grid.contains(&0.0) {
            return bad("the mde policy needs a != 0 on every grid point".into());
        }
        if self.estimation.corrected_component >= self.model.n_rho() {
            return bad(format!(
                "corrected_component {} out of range for {} mean parameters",
                self.estimation.corrected_component,
                self.model.n_rho()
            ));
        }
        if !(self.estimation.c > 0.0) {
            return bad(format!("grid constant c must be positive, got {}", self.estimation.c));
        }
        let min_n = self.model.n_rho() + 2;
        if let Some(&n) = self.n_list.iter().find(|&&n| n < min_n) {
            return bad(format!("sample size {n} is below the minimum {min_n}"));
        }
        if self.constants_mode.n_aux() < 100 {
            return bad("n_aux must be at least 100".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        self.alternative.check_model(&self.model)?;
        self.model.check_params(self.model.params())
    }

    /// Stable text form of every setting that affects results.
    pub fn canonical(&self) -> String {
        let q = self.noise.quadrature();
        format!(
            "model={}\nnoise={};quad={:?},{:?},{:?},{:?},{:?},{:?}\nalternative={}\nn_list={:?}\nreplicates={}\nseed={}\na_grid={:?}\npolicies={:?}\nalpha={:?}\nburnin={}\nc={:?}\ncorrected_component={}\ndn_reference={:?}\nconstants={}:{}\ntau_mode={:?}\n",
            self.model.canonical(),
            self.noise.label(),
            q.tail_mass,
            q.initial_step,
            q.tolerance,
            q.tail_tolerance,
            q.flag_threshold,
            q.max_bound,
            self.alternative.canonical(),
            self.n_list,
            self.replicates,
            self.seed,
            self.a_grid,
            self.policies.iter().map(|p| p.label()).collect::<Vec<_>>(),
            self.alpha,
            self.burnin,
            self.estimation.c,
            self.estimation.corrected_component,
            self.estimation.dn_reference,
            self.constants_mode.label(),
            self.constants_mode.n_aux(),
            self.tau_mode,
        )
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            Some(k) => rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map(|pool| pool.install(f))
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}"))),
            None => Ok(f()),
        }
    }
}

/// Quantities computed once per experiment on a long null path, at unit
/// amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Auxiliary {
    pub n_aux: usize,
    pub tau: TauExpectations,
    pub moments: NoiseMoments,
    pub constants: CorrectionConstants,
    /// Reference parameter in `D_n`.
    pub reference: Params,
}

impl Auxiliary {
    pub fn compute(cfg: &ExperimentConfig) -> Result<Self> {
        let mut rng = stream(derive_seed(cfg.seed, &[TAG_AUX]));
        let n_aux = cfg.constants_mode.n_aux();
        let path = simulate_null(&cfg.model, &cfg.noise, n_aux, cfg.burnin, &mut rng)?;
        let unit = cfg.alternative.with_a(1.0);
        let tau = TauExpectations::from_path(&path, &cfg.model, &unit, cfg.model.params())?;
        let constants = correction_constants_from_path(&path, &cfg.model, &unit, &cfg.noise, cfg.constants_mode)?;
        let reference = match cfg.estimation.dn_reference {
            DnReference::TrueParam => cfg.model.params().clone(),
            DnReference::AuxiliaryEstimate => {
                Params::new(cfg.model.estimate_rho(&path)?, cfg.model.theta().to_vec())
            }
        };
        Ok(Self {
            n_aux,
            tau,
            moments: cfg.noise.moments(),
            constants,
            reference,
        })
    }

    /// `tau^2` of the alternative with amplitude `a`.
    pub fn tau2(&self, alt: &LocalAlternative, a: f64) -> Result<f64> {
        tau_squared(&alt.with_a(a), &self.moments, &self.tau.scaled(a))
    }
}

/// Amplitude used for the test direction; a zero amplitude is replaced by
/// the unit direction, which leaves `V / tau` unchanged.
pub fn test_amplitude(a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        a
    }
}

/// One test decision of one replicate under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub a: f64,
    pub policy: EstimatorPolicy,
    pub replicate: usize,
    pub seed: u64,
    pub v: f64,
    pub tau2: f64,
    pub statistic: f64,
    pub reject: bool,
    /// The modified estimator fell back to the discrete estimate.
    pub fallback: bool,
    /// Auxiliary `tau^2` of the simulated alternative (zero under the null).
    pub tau2_alt: f64,
    /// Empty on success.
    pub failure: String,
}

impl ReplicateRecord {
    pub fn failed(&self) -> bool {
        !self.failure.is_empty()
    }
}

/// Aggregate over the replicates of one `(n, a, policy)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub n: usize,
    pub a: f64,
    pub policy: EstimatorPolicy,
    pub rejection_rate: f64,
    pub analytic_power_lecam: f64,
    pub analytic_power_paper: f64,
    pub tau2_hat: f64,
    pub failures: usize,
    pub fallbacks: usize,
    pub valid: usize,
    pub mean_v: f64,
    pub median_v: f64,
    pub mean_statistic: f64,
    pub tau2_alt: f64,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult<R, Q> {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<R>,
    pub records: Vec<Q>,
}

pub type PowerResult = ExperimentResult<PowerRow, ReplicateRecord>;
pub type LanResult = ExperimentResult<LanRow, LanRecord>;
pub type EstimatorResult = ExperimentResult<EstimatorRow, EstimatorRecord>;

fn cmp_cell(n1: usize, a1: f64, n2: usize, a2: f64) -> Ordering {
    n1.cmp(&n2).then(a1.total_cmp(&a2))
}

/// Splits records sorted by cell into consecutive groups.
fn groups<T>(records: &[T], same: impl Fn(&T, &T) -> bool) -> Vec<&[T]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || !same(&records[start], &records[i]) {
            if i > start {
                out.push(&records[start..i]);
            }
            start = i;
        }
    }
    out
}

fn median_of(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    stats::median(&v)
}

/// Aggregates power or size records into one row per `(n, a, policy)`.
pub fn aggregate_power(records: &[ReplicateRecord], alpha: f64, config_hash: &str, seed: u64) -> Vec<PowerRow> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|x, y| {
        cmp_cell(x.n, x.a, y.n, y.a)
            .then(x.policy.cmp(&y.policy))
            .then(x.replicate.cmp(&y.replicate))
    });
    groups(&sorted, |x, y| x.n == y.n && x.a.to_bits() == y.a.to_bits() && x.policy == y.policy)
        .into_iter()
        .map(|g| {
            let ok: Vec<&ReplicateRecord> = g.iter().filter(|r| !r.failed()).collect();
            let valid = ok.len();
            let mean = |f: &dyn Fn(&ReplicateRecord) -> f64| {
                if valid == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / valid as f64
                }
            };
            let tau2_alt = g[0].tau2_alt;
            PowerRow {
                n: g[0].n,
                a: g[0].a,
                policy: g[0].policy,
                rejection_rate: mean(&|r| if r.reject { 1.0 } else { 0.0 }),
                analytic_power_lecam: analytic_power(tau2_alt, alpha, PowerConvention::LeCam),
                analytic_power_paper: analytic_power(tau2_alt, alpha, PowerConvention::TauSquared),
                tau2_hat: mean(&|r| r.tau2),
                failures: g.len() - valid,
                fallbacks: ok.iter().filter(|r| r.fallback).count(),
                valid,
                mean_v: mean(&|r| r.v),
                median_v: median_of(ok.iter().map(|r| r.v)),
                mean_statistic: mean(&|r| r.statistic),
                tau2_alt,
                config_hash: config_hash.to_string(),
                seed,
            }
        })
        .collect()
}

fn cells(cfg: &ExperimentConfig) -> Vec<(usize, f64, usize)> {
    let mut out = Vec::with_capacity(cfg.n_list.len() * cfg.a_grid.len() * cfg.replicates);
    for &n in &cfg.n_list {
        for &a in &cfg.a_grid {
            for r in 0..cfg.replicates {
                out.push((n, a, r));
            }
        }
    }
    out
}

/// Policy, `V`, `tau^2`, statistic, rejection and fallback.
type Decision = (EstimatorPolicy, f64, f64, f64, bool, bool);

/// Evaluates every requested policy on one path.
fn decide(
    cfg: &ExperimentConfig,
    aux: &Auxiliary,
    path: &SeriesPath,
    a: f64,
) -> Vec<std::result::Result<Decision, String>> {
    let a_test = test_amplitude(a);
    let alt = cfg.alternative.with_a(a_test);
    let needs_estimates = cfg.policies.iter().any(|p| *p != EstimatorPolicy::TrueParam);
    let estimates = if needs_estimates {
        Some(estimate_set(
            path,
            &cfg.model,
            &alt,
            &cfg.noise,
            &aux.constants.scaled(a_test),
            &aux.reference,
            &cfg.estimation,
        ))
    } else {
        None
    };
    let aux_tau2 = aux.tau2(&cfg.alternative, a_test);
    cfg.policies
        .iter()
        .map(|&policy| {
            let (params, fallback) = match (policy, &estimates) {
                (EstimatorPolicy::TrueParam, _) => (cfg.model.params().clone(), false),
                (_, Some(Err(e))) => return Err(e.to_string()),
                (EstimatorPolicy::Lse, Some(Ok(e))) => (e.lse.clone(), false),
                (EstimatorPolicy::DiscreteLse, Some(Ok(e))) => (e.discrete.clone(), false),
                (EstimatorPolicy::Mde, Some(Ok(e))) => (e.mde.clone(), e.fallback),
                (_, None) => unreachable!("estimates are computed for every estimated policy"),
            };
            let v = central_sequence(path, &cfg.model, &alt, &cfg.noise, &params)
                .map_err(|e| e.to_string())?
                .v;
            let tau2 = match cfg.tau_mode {
                TauMode::Aux => match &aux_tau2 {
                    Ok(t) => *t,
                    Err(e) => return Err(e.to_string()),
                },
                TauMode::Plugin => plugin_tau_squared(path, &cfg.model, &alt, &cfg.noise, &params)
                    .map_err(|e| e.to_string())?,
            };
            let d = np_test(v, tau2, cfg.alpha).map_err(|e| e.to_string())?;
            Ok((policy, v, tau2, d.statistic, d.reject, fallback))
        })
        .collect()
}

fn run_test_experiment(cfg: &ExperimentConfig, tag: u64, under_alternative: bool) -> Result<PowerResult> {
    cfg.validate()?;
    let aux = Auxiliary::compute(cfg)?;
    let hash = cfg.config_hash();
    let tasks = cells(cfg);
    let nested: Vec<Vec<ReplicateRecord>> = cfg.install(|| {
        tasks
            .par_iter()
            .map(|&(n, a, r)| {
                let seed = replicate_seed(cfg.seed, tag, n, a, r);
                let mut rng = stream(seed);
                let tau2_alt = if under_alternative {
                    aux.tau2(&cfg.alternative, a).unwrap_or(f64::NAN)
                } else {
                    0.0
                };
                let sim = if under_alternative {
                    simulate_alternative(&cfg.model, &cfg.alternative.with_a(a), &cfg.noise, n, cfg.burnin, &mut rng)
                } else {
                    simulate_null(&cfg.model, &cfg.noise, n, cfg.burnin, &mut rng)
                };
                let base = |policy, failure: String| ReplicateRecord {
                    n,
                    a,
                    policy,
                    replicate: r,
                    seed,
                    v: f64::NAN,
                    tau2: f64::NAN,
                    statistic: f64::NAN,
                    reject: false,
                    fallback: false,
                    tau2_alt,
                    failure,
                };
                match sim {
                    Err(e) => cfg.policies.iter().map(|&p| base(p, format!("simulation: {e}"))).collect(),
                    Ok(path) => cfg
                        .policies
                        .iter()
                        .zip(decide(cfg, &aux, &path, a))
                        .map(|(&p, res)| match res {
                            Ok((policy, v, tau2, statistic, reject, fallback)) => ReplicateRecord {
                                v,
                                tau2,
                                statistic,
                                reject,
                                fallback,
                                failure: String::new(),
                                ..base(policy, String::new())
                            },
                            Err(msg) => base(p, msg),
                        })
                        .collect(),
                }
            })
            .collect()
    })?;
    let records: Vec<ReplicateRecord> = nested.into_iter().flatten().collect();
    Ok(ExperimentResult {
        rows: aggregate_power(&records, cfg.alpha, &hash, cfg.seed),
        config_hash: hash,
        seed: cfg.seed,
        records,
    })
}

/// Rejection rates under the local alternative for every `(n, a, policy)`.
pub fn run_power_experiment(cfg: &ExperimentConfig) -> Result<PowerResult> {
    run_test_experiment(cfg, TAG_POWER, true)
}

/// Rejection rates under the null; `a` only sets the test direction.
pub fn run_size_experiment(cfg: &ExperimentConfig) -> Result<PowerResult> {
    run_test_experiment(cfg, TAG_SIZE, false)
}

/// LAN decomposition of one null replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanRecord {
    pub n: usize,
    pub a: f64,
    pub replicate: usize,
    pub seed: u64,
    pub v: f64,
    pub tau2: f64,
    pub lambda: f64,
    pub lan_residual: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3_gap: f64,
    pub failure: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanRow {
    pub n: usize,
    pub a: f64,
    pub tau2: f64,
    pub median_abs_lan_residual: f64,
    pub median_c1: f64,
    pub median_abs_c2_gap: f64,
    /// Median of `|c2 - tau^2| / tau^2`; zero when both vanish.
    pub median_rel_c2_gap: f64,
    pub median_abs_c3_gap: f64,
    pub mean_v: f64,
    pub var_v: f64,
    pub valid: usize,
    pub failures: usize,
    pub config_hash: String,
    pub seed: u64,
}

pub fn aggregate_lan(records: &[LanRecord], config_hash: &str, seed: u64) -> Vec<LanRow> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|x, y| cmp_cell(x.n, x.a, y.n, y.a).then(x.replicate.cmp(&y.replicate)));
    groups(&sorted, |x, y| x.n == y.n && x.a.to_bits() == y.a.to_bits())
        .into_iter()
        .map(|g| {
            let ok: Vec<&LanRecord> = g.iter().filter(|r| r.failure.is_empty()).collect();
            let tau2 = g[0].tau2;
            let vs: Vec<f64> = ok.iter().map(|r| r.v).collect();
            LanRow {
                n: g[0].n,
                a: g[0].a,
                tau2,
                median_abs_lan_residual: median_of(ok.iter().map(|r| r.lan_residual.abs())),
                median_c1: median_of(ok.iter().map(|r| r.c1)),
                median_abs_c2_gap: median_of(ok.iter().map(|r| (r.c2 - r.tau2).abs())),
                median_rel_c2_gap: median_of(ok.iter().map(|r| {
                    let gap = (r.c2 - r.tau2).abs();
                    if gap == 0.0 {
                        0.0
                    } else {
                        gap / r.tau2
                    }
                })),
                median_abs_c3_gap: median_of(ok.iter().map(|r| r.c3_gap.abs())),
                mean_v: stats::mean(&vs),
                var_v: stats::variance(&vs),
                valid: ok.len(),
                failures: g.len() - ok.len(),
                config_hash: config_hash.to_string(),
                seed,
            }
        })
        .collect()
}

/// Likelihood-ratio decomposition and conditions over null replicates.
pub fn run_lan_diagnostic(cfg: &ExperimentConfig) -> Result<LanResult> {
    cfg.validate()?;
    let aux = Auxiliary::compute(cfg)?;
    let hash = cfg.config_hash();
    let tasks = cells(cfg);
    let records: Vec<LanRecord> = cfg.install(|| {
        tasks
            .par_iter()
            .map(|&(n, a, r)| {
                let seed = replicate_seed(cfg.seed, TAG_LAN, n, a, r);
                let mut rng = stream(seed);
                let alt = cfg.alternative.with_a(a);
                let res = aux.tau2(&cfg.alternative, a).and_then(|tau2| {
                    let path = simulate_null(&cfg.model, &cfg.noise, n, cfg.burnin, &mut rng)?;
                    lan_report(&path, &cfg.model, &alt, &cfg.noise, tau2)
                });
                match res {
                    Ok(rep) => LanRecord {
                        n,
                        a,
                        replicate: r,
                        seed,
                        v: rep.v,
                        tau2: rep.tau2,
                        lambda: rep.lambda,
                        lan_residual: rep.lan_residual,
                        c1: rep.c1,
                        c2: rep.c2,
                        c3_gap: rep.c3_gap,
                        failure: String::new(),
                    },
                    Err(e) => LanRecord {
                        n,
                        a,
                        replicate: r,
                        seed,
                        v: f64::NAN,
                        tau2: f64::NAN,
                        lambda: f64::NAN,
                        lan_residual: f64::NAN,
                        c1: f64::NAN,
                        c2: f64::NAN,
                        c3_gap: f64::NAN,
                        failure: e.to_string(),
                    },
                }
            })
            .collect()
    })?;
    Ok(ExperimentResult {
        rows: aggregate_lan(&records, &hash, cfg.seed),
        config_hash: hash,
        seed: cfg.seed,
        records,
    })
}

/// Estimates and central-sequence shifts of one null replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRecord {
    pub n: usize,
    pub a: f64,
    pub replicate: usize,
    pub seed: u64,
    /// Semicolon-separated coordinates.
    pub lse: String,
    pub discrete: String,
    pub mde: String,
    pub err_lse: f64,
    pub err_discrete: f64,
    pub err_mde: f64,
    pub v_true: f64,
    pub v_lse: f64,
    pub v_discrete: f64,
    pub v_mde: f64,
    pub d_n: f64,
    /// `[V(discrete) - V(rho0)] - sqrt(n)(discrete - rho0)'(h K + h' K')`
    pub shift_residual: f64,
    /// `n^{-1/2} dV/d rho_j` at the true parameter and at the LSE.
    pub grad_true: f64,
    pub grad_lse: f64,
    pub fallback: bool,
    pub failure: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub n: usize,
    pub a: f64,
    /// 95th percentiles of `sqrt(n) |estimate - rho0|`.
    pub p95_err_lse: f64,
    pub p95_err_discrete: f64,
    pub p95_err_mde: f64,
    pub median_abs_shift_lse: f64,
    pub median_abs_shift_discrete: f64,
    pub median_abs_shift_mde: f64,
    pub median_abs_shift_residual: f64,
    pub median_abs_gradient_gap: f64,
    pub mean_grad_true: f64,
    pub fallback_fraction: f64,
    pub valid: usize,
    pub failures: usize,
    pub config_hash: String,
    pub seed: u64,
}

pub fn aggregate_estimator(records: &[EstimatorRecord], config_hash: &str, seed: u64) -> Vec<EstimatorRow> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|x, y| cmp_cell(x.n, x.a, y.n, y.a).then(x.replicate.cmp(&y.replicate)));
    groups(&sorted, |x, y| x.n == y.n && x.a.to_bits() == y.a.to_bits())
        .into_iter()
        .map(|g| {
            let ok: Vec<&EstimatorRecord> = g.iter().filter(|r| r.failure.is_empty()).collect();
            let q95 = |f: &dyn Fn(&EstimatorRecord) -> f64| {
                stats::quantile(&ok.iter().map(|r| f(r)).collect::<Vec<_>>(), 0.95)
            };
            let med = |f: &dyn Fn(&EstimatorRecord) -> f64| median_of(ok.iter().map(|r| f(r)));
            EstimatorRow {
                n: g[0].n,
                a: g[0].a,
                p95_err_lse: q95(&|r| r.err_lse),
                p95_err_discrete: q95(&|r| r.err_discrete),
                p95_err_mde: q95(&|r| r.err_mde),
                median_abs_shift_lse: med(&|r| (r.v_lse - r.v_true).abs()),
                median_abs_shift_discrete: med(&|r| (r.v_discrete - r.v_true).abs()),
                median_abs_shift_mde: med(&|r| (r.v_mde - r.v_true).abs()),
                median_abs_shift_residual: med(&|r| r.shift_residual.abs()),
                median_abs_gradient_gap: med(&|r| (r.grad_lse - r.grad_true).abs()),
                mean_grad_true: stats::mean(&ok.iter().map(|r| r.grad_true).collect::<Vec<_>>()),
                fallback_fraction: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter(|r| r.fallback).count() as f64 / ok.len() as f64
                },
                valid: ok.len(),
                failures: g.len() - ok.len(),
                config_hash: config_hash.to_string(),
                seed,
            }
        })
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

fn scaled_error(est: &[f64], truth: &[f64], n: usize) -> f64 {
    (n as f64).sqrt() * est.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum::<f64>().sqrt()
}

fn estimator_replicate(
    cfg: &ExperimentConfig,
    aux: &Auxiliary,
    n: usize,
    a: f64,
    seed: u64,
) -> Result<EstimatorRecord> {
    let mut rng = stream(seed);
    let path = simulate_null(&cfg.model, &cfg.noise, n, cfg.burnin, &mut rng)?;
    let a_test = test_amplitude(a);
    let alt = cfg.alternative.with_a(a_test);
    let constants = aux.constants.scaled(a_test);
    let est = estimate_set(&path, &cfg.model, &alt, &cfg.noise, &constants, &aux.reference, &cfg.estimation)?;
    let truth = cfg.model.params();
    let v = |p: &Params| central_sequence(&path, &cfg.model, &alt, &cfg.noise, p).map(|c| c.v);
    let v_true = v(truth)?;
    let v_discrete = v(&est.discrete)?;
    let predicted = -d_n(&est.discrete, truth, &constants, alt.h, alt.h_prime, n)?;
    let j = cfg.estimation.corrected_component;
    let sn = (n as f64).sqrt();
    let grad_true = central_gradient(&path, &cfg.model, &alt, &cfg.noise, truth)?[j] / sn;
    let grad_lse = central_gradient(&path, &cfg.model, &alt, &cfg.noise, &est.lse)?[j] / sn;
    Ok(EstimatorRecord {
        n,
        a,
        replicate: 0,
        seed,
        lse: join(&est.lse.rho),
        discrete: join(&est.discrete.rho),
        mde: join(&est.mde.rho),
        err_lse: scaled_error(&est.lse.rho, &truth.rho, n),
        err_discrete: scaled_error(&est.discrete.rho, &truth.rho, n),
        err_mde: scaled_error(&est.mde.rho, &truth.rho, n),
        v_true,
        v_lse: v(&est.lse)?,
        v_discrete,
        v_mde: v(&est.mde)?,
        d_n: est.d_n,
        shift_residual: (v_discrete - v_true) - predicted,
        grad_true,
        grad_lse,
        fallback: est.fallback,
        failure: String::new(),
    })
}

/// Estimator errors, central-sequence shifts and fallbacks over null
/// replicates.
pub fn run_estimator_diagnostic(cfg: &ExperimentConfig) -> Result<EstimatorResult> {
    cfg.validate()?;
    let aux = Auxiliary::compute(cfg)?;
    let hash = cfg.config_hash();
    let tasks = cells(cfg);
    let records: Vec<EstimatorRecord> = cfg.install(|| {
        tasks
            .par_iter()
            .map(|&(n, a, r)| {
                let seed = replicate_seed(cfg.seed, TAG_ESTIMATOR, n, a, r);
                match estimator_replicate(cfg, &aux, n, a, seed) {
                    Ok(rec) => EstimatorRecord { replicate: r, ..rec },
                    Err(e) => EstimatorRecord {
                        n,
                        a,
                        replicate: r,
                        seed,
                        lse: String::new(),
                        discrete: String::new(),
                        mde: String::new(),
                        err_lse: f64::NAN,
                        err_discrete: f64::NAN,
                        err_mde: f64::NAN,
                        v_true: f64::NAN,
                        v_lse: f64::NAN,
                        v_discrete: f64::NAN,
                        v_mde: f64::NAN,
                        d_n: f64::NAN,
                        shift_residual: f64::NAN,
                        grad_true: f64::NAN,
                        grad_lse: f64::NAN,
                        fallback: false,
                        failure: e.to_string(),
                    },
                }
            })
            .collect()
    })?;
    Ok(ExperimentResult {
        rows: aggregate_estimator(&records, &hash, cfg.seed),
        config_hash: hash,
        seed: cfg.seed,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(policies: Vec<EstimatorPolicy>) -> ExperimentConfig {
        let model = ModelSpec::ar(vec![0.1]).unwrap();
        let mut cfg = ExperimentConfig::new(model, NoiseSpec::gaussian(), LocalAlternative::ex1(1.0));
        cfg.n_list = vec![60, 120];
        cfg.a_grid = vec![0.3, 0.9];
        cfg.replicates = 40;
        cfg.seed = 17;
        cfg.policies = policies;
        cfg.constants_mode = ConstantsMode::Analytic { n_aux: 20_000 };
        cfg.burnin = 100;
        cfg
    }

    #[test]
    fn validation_rules() {
        let mut cfg = small(EstimatorPolicy::ALL.to_vec());
        assert!(cfg.validate().is_ok());
        cfg.a_grid = vec![0.0, 0.5];
        assert!(cfg.validate().unwrap_err().is_config_error());
        cfg.a_grid.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small(vec![EstimatorPolicy::TrueParam]);
        cfg.a_grid = vec![0.0];
        assert!(cfg.validate().is_ok());
        cfg.replicates = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn policies_parse() {
        for p in EstimatorPolicy::ALL {
            assert_eq!(p.label().parse::<EstimatorPolicy>().unwrap(), p);
        }
        assert!("mle".parse::<EstimatorPolicy>().is_err());
    }

    #[test]
    fn hash_tracks_settings() {
        let a = small(vec![EstimatorPolicy::TrueParam]);
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.threads = Some(3);
        assert_eq!(a.config_hash(), b.config_hash());
        b.alpha = 0.1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn power_is_deterministic_and_thread_independent() {
        let cfg = small(EstimatorPolicy::ALL.to_vec());
        let r1 = run_power_experiment(&cfg).unwrap();
        let mut c2 = cfg.clone();
        c2.threads = Some(1);
        let r2 = run_power_experiment(&c2).unwrap();
        assert_eq!(format!("{:?}", r1.rows), format!("{:?}", r2.rows));
        assert_eq!(r1.rows.len(), 2 * 2 * 4);
        for row in &r1.rows {
            assert!((0.0..=1.0).contains(&row.rejection_rate));
            assert_eq!(row.valid + row.failures, 40);
        }
    }

    #[test]
    fn aggregation_ignores_record_order() {
        let cfg = small(vec![EstimatorPolicy::TrueParam, EstimatorPolicy::Mde]);
        let res = run_power_experiment(&cfg).unwrap();
        let mut shuffled = res.records.clone();
        shuffled.reverse();
        shuffled.rotate_left(37);
        let again = aggregate_power(&shuffled, cfg.alpha, &res.config_hash, cfg.seed);
        assert_eq!(format!("{:?}", again), format!("{:?}", res.rows));
    }

    #[test]
    fn mde_equals_discrete_when_constants_vanish() {
        // with h = 0 only K' survives, and it vanishes for symmetric noise
        let mut cfg = small(vec![EstimatorPolicy::DiscreteLse, EstimatorPolicy::Mde]);
        cfg.model = ModelSpec::ar(vec![0.2, 0.2]).unwrap();
        cfg.alternative = LocalAlternative::ex3(1.0).with_steps(0.0, 1.0);
        let aux = Auxiliary::compute(&cfg).unwrap();
        assert!(aux.constants.is_zero());
        let res = run_estimator_diagnostic(&cfg).unwrap();
        for r in &res.records {
            assert_eq!(r.mde, r.discrete);
            assert_eq!(r.d_n, 0.0);
        }
        let power = run_power_experiment(&cfg).unwrap();
        for pair in power.rows.chunks(2) {
            assert_eq!(pair[0].rejection_rate, pair[1].rejection_rate);
            assert_eq!(pair[0].mean_v, pair[1].mean_v);
        }
    }

    #[test]
    fn lan_zero_steps_give_zero_diagnostics() {
        let mut cfg = small(vec![EstimatorPolicy::TrueParam]);
        cfg.alternative = LocalAlternative::ex3(1.0).with_steps(0.0, 0.0);
        cfg.model = ModelSpec::ar(vec![0.2, 0.2]).unwrap();
        let res = run_lan_diagnostic(&cfg).unwrap();
        for row in &res.rows {
            assert_eq!(row.tau2, 0.0);
            assert_eq!(row.median_abs_lan_residual, 0.0);
            assert_eq!(row.median_c1, 0.0);
            assert_eq!(row.median_abs_c2_gap, 0.0);
            assert_eq!(row.median_rel_c2_gap, 0.0);
            assert_eq!(row.median_abs_c3_gap, 0.0);
        }
    }

    #[test]
    fn size_with_single_replicate() {
        let mut cfg = small(vec![EstimatorPolicy::TrueParam]);
        cfg.replicates = 1;
        let res = run_size_experiment(&cfg).unwrap();
        for row in &res.rows {
            assert!(row.rejection_rate == 0.0 || row.rejection_rate == 1.0);
            assert!((row.analytic_power_lecam - cfg.alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn simulation_failures_are_counted() {
        let mut cfg = small(vec![EstimatorPolicy::TrueParam]);
        cfg.alternative = LocalAlternative::ex2(1.0);
        cfg.a_grid = vec![-200.0];
        cfg.n_list = vec![10];
        let res = run_power_experiment(&cfg).unwrap();
        let row = &res.rows[0];
        assert!(row.failures > 0);
        assert_eq!(row.failures + row.valid, cfg.replicates);
        assert!(res.records.iter().filter(|r| r.failed()).all(|r| r.failure.starts_with("simulation")));
    }
}
