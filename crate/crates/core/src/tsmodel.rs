//! Parametric mean/scale time-series models, local alternatives, and path
//! simulation.
//!
//! A model generates
//!
//! ```text
//! Y_i = m(rho, Z_i) + sigma(theta, Z_i) eps_i
//! ```
//!
//! where `Z_i = (Y_{i-1}, ..., Y_{i-s}, X_i, ..., X_{i-q+1})`. Exogenous slots
//! are part of the layout but are always zero here. A [`LocalAlternative`]
//! perturbs the mean by `h n^{-1/2} G(Z_i)` and the scale by
//! `h' n^{-1/2} S(Z_i)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::RandomStream;
use crate::score::NoiseSpec;

/// Mean and scale parameters `(rho, theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub rho: Vec<f64>,
    pub theta: Vec<f64>,
}

impl Params {
    pub fn new(rho: Vec<f64>, theta: Vec<f64>) -> Self {
        Self { rho, theta }
    }

    /// `rho` followed by `theta`.
    pub fn flat(&self) -> Vec<f64> {
        self.rho.iter().chain(self.theta.iter()).copied().collect()
    }

    pub fn from_flat(flat: &[f64], n_rho: usize) -> Self {
        Self {
            rho: flat[..n_rho].to_vec(),
            theta: flat[n_rho..].to_vec(),
        }
    }
}

/// User-supplied mean/scale functions with their derivatives.
///
/// Hessians are row-major `l x l` and `p x p`; the defaults return zeros.
pub trait CustomModel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn mean(&self, rho: &[f64], z: &[f64]) -> f64;
    fn mean_grad(&self, rho: &[f64], z: &[f64], out: &mut [f64]);
    fn mean_hess(&self, _rho: &[f64], _z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn scale(&self, theta: &[f64], z: &[f64]) -> f64;
    fn scale_grad(&self, theta: &[f64], z: &[f64], out: &mut [f64]);
    fn scale_hess(&self, _theta: &[f64], _z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    /// Parameter validity (stationarity, positivity).
    fn check(&self, _rho: &[f64], _theta: &[f64]) -> Result<()> {
        Ok(())
    }
    /// Estimator of `rho` from a path; least squares on the lags by default.
    fn estimate_rho(&self, path: &SeriesPath, n_rho: usize) -> Result<Vec<f64>> {
        crate::estimate::lse_ar(path, n_rho)
    }
}

/// Scale perturbation `B` inside the ARCH term `sqrt(1 + beta B(Y_{i-1}))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ArchTerm {
    /// `B(y) = y^2 / (1 + y^2)`
    #[default]
    Bounded,
    /// `B(y) = y^2`
    Square,
}

impl ArchTerm {
    #[inline]
    pub fn value(self, y: f64) -> f64 {
        let y2 = y * y;
        match self {
            ArchTerm::Bounded => y2 / (1.0 + y2),
            ArchTerm::Square => y2,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    /// `m = sum rho_j Y_{i-j}`, `sigma = 1`.
    Ar { order: usize },
    /// `m = rho Y_{i-1}`, `sigma = sqrt(1 + beta B(Y_{i-1}))`; `beta` is a
    /// fixed structural constant, not an estimated parameter.
    Ar1Arch { beta: f64, term: ArchTerm },
    Custom(Arc<dyn CustomModel>),
}

/// A parametric model with its true parameters.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    kind: ModelKind,
    params: Params,
    mean_order: usize,
    exo_order: usize,
}

impl ModelSpec {
    /// AR(m) with `sum |rho_j| < 1`.
    pub fn ar(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::InvalidArgument("AR order must be at least 1".into()));
        }
        let spec = Self {
            kind: ModelKind::Ar { order: rho.len() },
            mean_order: rho.len(),
            exo_order: 0,
            params: Params::new(rho, Vec::new()),
        };
        spec.check_params(&spec.params)?;
        Ok(spec)
    }

    /// AR(1) with ARCH-type scale `sqrt(1 + beta B(Y_{i-1}))`.
    pub fn ar1_arch(rho: f64, beta: f64, term: ArchTerm) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be finite, got {beta}")));
        }
        let spec = Self {
            kind: ModelKind::Ar1Arch { beta, term },
            mean_order: 1,
            exo_order: 0,
            params: Params::new(vec![rho], Vec::new()),
        };
        spec.check_params(&spec.params)?;
        Ok(spec)
    }

    pub fn custom(
        model: Arc<dyn CustomModel>,
        params: Params,
        mean_order: usize,
        exo_order: usize,
    ) -> Result<Self> {
        model.check(&params.rho, &params.theta)?;
        Ok(Self {
            kind: ModelKind::Custom(model),
            params,
            mean_order,
            exo_order,
        })
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    /// Odd mean and even scale, so symmetric innovations give a symmetric
    /// stationary law and `dm/drho` is odd in the state.
    pub fn is_odd_even(&self) -> bool {
        !matches!(self.kind, ModelKind::Custom(_))
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn rho(&self) -> &[f64] {
        &self.params.rho
    }

    pub fn theta(&self) -> &[f64] {
        &self.params.theta
    }

    pub fn n_rho(&self) -> usize {
        self.params.rho.len()
    }

    pub fn n_theta(&self) -> usize {
        self.params.theta.len()
    }

    pub fn mean_order(&self) -> usize {
        self.mean_order
    }

    pub fn exo_order(&self) -> usize {
        self.exo_order
    }

    pub fn z_dim(&self) -> usize {
        self.mean_order + self.exo_order
    }

    /// Copy of the model with different true parameters.
    pub fn with_params(&self, params: Params) -> Result<Self> {
        check_len("rho", self.n_rho(), params.rho.len())?;
        check_len("theta", self.n_theta(), params.theta.len())?;
        let spec = Self {
            params,
            ..self.clone()
        };
        spec.check_params(&spec.params)?;
        Ok(spec)
    }

    /// Stationarity and validity of a parameter point.
    pub fn check_params(&self, params: &Params) -> Result<()> {
        match &self.kind {
            ModelKind::Ar { .. } => {
                let s: f64 = params.rho.iter().map(|r| r.abs()).sum();
                if !(s < 1.0) {
                    return Err(Error::NonstationaryModel(format!(
                        "AR coefficients need sum |rho_j| < 1, got {s}"
                    )));
                }
                Ok(())
            }
            ModelKind::Ar1Arch { .. } => {
                if !(params.rho[0].abs() < 1.0) {
                    return Err(Error::NonstationaryModel(format!(
                        "AR(1)-ARCH needs |rho| < 1, got {}",
                        params.rho[0]
                    )));
                }
                Ok(())
            }
            ModelKind::Custom(m) => m.check(&params.rho, &params.theta),
        }
    }

    /// Stable description used in configuration hashes.
    pub fn canonical(&self) -> String {
        let kind = match &self.kind {
            ModelKind::Ar { order } => format!("ar{order}"),
            ModelKind::Ar1Arch { beta, term } => format!("ar1-arch(beta={beta:?},b={term:?})"),
            ModelKind::Custom(m) => format!("custom({})", m.name()),
        };
        format!(
            "{kind};rho={:?};theta={:?};s={};q={}",
            self.params.rho, self.params.theta, self.mean_order, self.exo_order
        )
    }

    #[inline]
    pub fn mean(&self, rho: &[f64], z: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::Ar { .. } => rho.iter().zip(z).map(|(r, y)| r * y).sum(),
            ModelKind::Ar1Arch { .. } => rho[0] * z[0],
            ModelKind::Custom(m) => m.mean(rho, z),
        }
    }

    #[inline]
    pub fn mean_grad(&self, rho: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.kind {
            ModelKind::Ar { order } => out.copy_from_slice(&z[..*order]),
            ModelKind::Ar1Arch { .. } => out[0] = z[0],
            ModelKind::Custom(m) => m.mean_grad(rho, z, out),
        }
    }

    pub fn mean_hess(&self, rho: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.kind {
            ModelKind::Custom(m) => m.mean_hess(rho, z, out),
            _ => out.fill(0.0),
        }
    }

    #[inline]
    pub fn scale(&self, theta: &[f64], z: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::Ar { .. } => 1.0,
            ModelKind::Ar1Arch { beta, term } => (1.0 + beta * term.value(z[0])).sqrt(),
            ModelKind::Custom(m) => m.scale(theta, z),
        }
    }

    #[inline]
    pub fn scale_grad(&self, theta: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.kind {
            ModelKind::Custom(m) => m.scale_grad(theta, z, out),
            _ => out.fill(0.0),
        }
    }

    pub fn scale_hess(&self, theta: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.kind {
            ModelKind::Custom(m) => m.scale_hess(theta, z, out),
            _ => out.fill(0.0),
        }
    }

    /// Estimator of the mean parameters from a path (least squares for the
    /// built-ins).
    pub fn estimate_rho(&self, path: &SeriesPath) -> Result<Vec<f64>> {
        match &self.kind {
            ModelKind::Custom(m) => m.estimate_rho(path, self.n_rho()),
            _ => crate::estimate::lse_ar(path, self.n_rho()),
        }
    }
}

/// Unit-`a` direction functions `G` and `S` of a custom alternative.
pub trait DirectionShape: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn g(&self, z: &[f64]) -> f64;
    fn s(&self, z: &[f64]) -> f64;
    /// True when `S` vanishes identically.
    fn s_is_zero(&self) -> bool {
        false
    }
    /// Smallest `Z` dimension the shape reads.
    fn min_z_dim(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone)]
pub enum Shape {
    /// `G = 6a / (1 + z_1^2)`, `S = 0`
    Ex1,
    /// `G = 5a / (1 + z_1^2)`, `S = G / 4`
    Ex2,
    /// `G = S = 8a / (1 + z_1^2 + z_2^2)`
    Ex3,
    Custom(Arc<dyn DirectionShape>),
}

/// Contiguous alternative: mean `m + h n^{-1/2} G`, scale
/// `sigma + h' n^{-1/2} S`, with `G` and `S` linear in the amplitude `a`.
#[derive(Debug, Clone)]
pub struct LocalAlternative {
    pub h: f64,
    pub h_prime: f64,
    pub a: f64,
    pub shape: Shape,
}

impl LocalAlternative {
    pub fn new(shape: Shape, a: f64) -> Self {
        Self {
            h: 1.0,
            h_prime: 1.0,
            a,
            shape,
        }
    }

    pub fn ex1(a: f64) -> Self {
        Self::new(Shape::Ex1, a)
    }

    pub fn ex2(a: f64) -> Self {
        Self::new(Shape::Ex2, a)
    }

    pub fn ex3(a: f64) -> Self {
        Self::new(Shape::Ex3, a)
    }

    pub fn custom(shape: Arc<dyn DirectionShape>, a: f64) -> Self {
        Self::new(Shape::Custom(shape), a)
    }

    pub fn with_steps(mut self, h: f64, h_prime: f64) -> Self {
        self.h = h;
        self.h_prime = h_prime;
        self
    }

    pub fn with_a(&self, a: f64) -> Self {
        Self { a, ..self.clone() }
    }

    /// Mean direction `G(z)`.
    #[inline]
    pub fn g(&self, z: &[f64]) -> f64 {
        self.a
            * match &self.shape {
                Shape::Ex1 => 6.0 / (1.0 + z[0] * z[0]),
                Shape::Ex2 => 5.0 / (1.0 + z[0] * z[0]),
                Shape::Ex3 => 8.0 / (1.0 + z[0] * z[0] + z[1] * z[1]),
                Shape::Custom(c) => c.g(z),
            }
    }

    /// Scale direction `S(z)`.
    #[inline]
    pub fn s(&self, z: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ex1 => 0.0,
            Shape::Ex2 => self.g(z) / 4.0,
            Shape::Ex3 => self.g(z),
            Shape::Custom(c) => self.a * c.s(z),
        }
    }

    /// Structural `S = 0`.
    pub fn s_is_zero(&self) -> bool {
        match &self.shape {
            Shape::Ex1 => true,
            Shape::Custom(c) => c.s_is_zero(),
            _ => false,
        }
    }

    /// `G` and `S` are even functions of the state.
    pub fn is_even(&self) -> bool {
        !matches!(self.shape, Shape::Custom(_))
    }

    /// Contributions of `G` and `S` to the central sequence both vanish.
    pub fn is_degenerate(&self) -> bool {
        self.a == 0.0 || (self.h == 0.0 && (self.h_prime == 0.0 || self.s_is_zero()))
    }

    pub fn check_model(&self, model: &ModelSpec) -> Result<()> {
        let need = match &self.shape {
            Shape::Ex3 => 2,
            Shape::Custom(c) => c.min_z_dim(),
            _ => 1,
        };
        if model.z_dim() < need {
            return Err(Error::InvalidArgument(format!(
                "alternative needs a lag state of dimension {need}, model has {}",
                model.z_dim()
            )));
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        let shape = match &self.shape {
            Shape::Ex1 => "ex1".to_string(),
            Shape::Ex2 => "ex2".to_string(),
            Shape::Ex3 => "ex3".to_string(),
            Shape::Custom(c) => format!("custom({})", c.name()),
        };
        format!("{shape};h={:?};hprime={:?}", self.h, self.h_prime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Null,
    /// Simulated under the alternative with drift scaled by `n_used^{-1/2}`.
    Alternative { n_used: usize },
}

/// A simulated trajectory after burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPath {
    pub y: Vec<f64>,
    /// Row-major lag states, `z_dim` values per step.
    pub z: Vec<f64>,
    pub z_dim: usize,
    /// Innovations used by the generator.
    pub eps: Vec<f64>,
    pub regime: Regime,
    pub burnin: usize,
}

impl SeriesPath {
    /// Builds a path from observations, taking the first `s` values as
    /// pre-sample lags. Innovations are unknown and set to NaN.
    pub fn from_observations(series: &[f64], mean_order: usize, exo_order: usize) -> Result<Self> {
        if series.len() <= mean_order {
            return Err(Error::InvalidArgument(format!(
                "need more than {mean_order} observations, got {}",
                series.len()
            )));
        }
        let z_dim = mean_order + exo_order;
        let n = series.len() - mean_order;
        let mut z = Vec::with_capacity(n * z_dim);
        for i in mean_order..series.len() {
            for j in 1..=mean_order {
                z.push(series[i - j]);
            }
            z.extend(std::iter::repeat_n(0.0, exo_order));
        }
        Ok(Self {
            y: series[mean_order..].to_vec(),
            z,
            z_dim,
            eps: vec![f64::NAN; n],
            regime: Regime::Null,
            burnin: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.z_dim..(i + 1) * self.z_dim]
    }
}

/// Simulates a path with innovations drawn from `innovations`.
///
/// Lags start at zero and the first `burnin` steps are discarded. Under an
/// alternative the drift uses the retained length `n`. Terms with a zero
/// step (`h` or `h'`) are skipped, so `(h, h') = (0, 0)` reproduces the null
/// path bit for bit.
pub fn simulate_with_innovations(
    model: &ModelSpec,
    alt: Option<&LocalAlternative>,
    n: usize,
    burnin: usize,
    mut innovations: impl FnMut() -> f64,
) -> Result<SeriesPath> {
    if n == 0 {
        return Err(Error::InvalidArgument("path length must be at least 1".into()));
    }
    model.check_params(model.params())?;
    if let Some(alt) = alt {
        alt.check_model(model)?;
    }
    let s = model.mean_order();
    let d = model.z_dim();
    let rho = model.rho();
    let theta = model.theta();
    let drift = 1.0 / (n as f64).sqrt();

    let mut state = vec![0.0; d];
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n * d);
    let mut eps = Vec::with_capacity(n);
    for t in 0..burnin + n {
        let mut mean = model.mean(rho, &state);
        let mut scale = model.scale(theta, &state);
        if !(scale > 0.0) {
            return Err(Error::ScaleNotPositive { index: t, value: scale });
        }
        if let Some(alt) = alt {
            if alt.h != 0.0 {
                mean += alt.h * drift * alt.g(&state);
            }
            if alt.h_prime != 0.0 {
                scale += alt.h_prime * drift * alt.s(&state);
            }
            if !(scale > 0.0) {
                return Err(Error::ScaleNotPositive { index: t, value: scale });
            }
        }
        let e = innovations();
        let value = mean + scale * e;
        if t >= burnin {
            y.push(value);
            z.extend_from_slice(&state);
            eps.push(e);
        }
        if s > 0 {
            state.copy_within(0..s - 1, 1);
            state[0] = value;
        }
    }
    Ok(SeriesPath {
        y,
        z,
        z_dim: d,
        eps,
        regime: match alt {
            Some(_) => Regime::Alternative { n_used: n },
            None => Regime::Null,
        },
        burnin,
    })
}

/// Path under the null model.
pub fn simulate_null(
    model: &ModelSpec,
    noise: &NoiseSpec,
    n: usize,
    burnin: usize,
    rng: &mut RandomStream,
) -> Result<SeriesPath> {
    simulate_with_innovations(model, None, n, burnin, || noise.sample(rng))
}

/// Path under the local alternative.
pub fn simulate_alternative(
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    n: usize,
    burnin: usize,
    rng: &mut RandomStream,
) -> Result<SeriesPath> {
    simulate_with_innovations(model, Some(alt), n, burnin, || noise.sample(rng))
}

/// Standardized residuals `(Y_i - m(rho, Z_i)) / sigma(theta, Z_i)`.
pub fn residuals(model: &ModelSpec, path: &SeriesPath, params: &Params) -> Result<Vec<f64>> {
    check_len("rho", model.n_rho(), params.rho.len())?;
    check_len("theta", model.n_theta(), params.theta.len())?;
    check_len("z dimension", model.z_dim(), path.z_dim)?;
    (0..path.len())
        .map(|i| {
            let z = path.z(i);
            let sigma = model.scale(&params.theta, z);
            if !(sigma > 0.0) {
                return Err(Error::ScaleNotPositive { index: i, value: sigma });
            }
            Ok((path.y[i] - model.mean(&params.rho, z)) / sigma)
        })
        .collect()
}
