//! Least squares, locally discrete rounding, correction constants and the
//! modified discrete estimator.
//!
//! The modified estimator shifts one coordinate of the discretized estimate
//! by `D_n / (dV/d rho_j)` so that the central sequence evaluated at the
//! estimate recovers its value at the true parameter.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::RandomStream;
use crate::score::NoiseSpec;
use crate::stats;
use crate::tsmodel::{residuals, simulate_null, LocalAlternative, ModelSpec, Params, SeriesPath};

const RCOND_FLOOR: f64 = 1e-12;

/// Solves `a x = b` for a small dense row-major system by Gaussian
/// elimination with partial pivoting. Returns the reciprocal 1-norm
/// condition number alongside the solution.
fn solve_dense(a: &[f64], b: &[f64], k: usize) -> Result<(Vec<f64>, f64)> {
    let norm1 = (0..k)
        .map(|c| (0..k).map(|r| a[r * k + c].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    // augmented with the identity so the inverse comes for free
    let w = 2 * k + 1;
    let mut m = vec![0.0; k * w];
    for r in 0..k {
        m[r * w..r * w + k].copy_from_slice(&a[r * k..(r + 1) * k]);
        m[r * w + k + r] = 1.0;
        m[r * w + 2 * k] = b[r];
    }
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| m[i * w + col].abs().total_cmp(&m[j * w + col].abs()))
            .unwrap();
        if m[piv * w + col] == 0.0 || !m[piv * w + col].is_finite() {
            return Err(Error::SingularDesign { rcond: 0.0 });
        }
        if piv != col {
            for c in 0..w {
                m.swap(piv * w + c, col * w + c);
            }
        }
        let p = m[col * w + col];
        for r in col + 1..k {
            let f = m[r * w + col] / p;
            if f != 0.0 {
                for c in col..w {
                    m[r * w + c] -= f * m[col * w + c];
                }
            }
        }
    }
    for col in (0..k).rev() {
        let p = m[col * w + col];
        for c in k..w {
            let mut s = m[col * w + c];
            for j in col + 1..k {
                s -= m[col * w + j] * m[j * w + c];
            }
            m[col * w + c] = s / p;
        }
    }
    let inv_norm1 = (0..k)
        .map(|c| (0..k).map(|r| m[r * w + k + c].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let rcond = 1.0 / (norm1 * inv_norm1);
    if !(rcond >= RCOND_FLOOR) {
        return Err(Error::SingularDesign { rcond: if rcond.is_nan() { 0.0 } else { rcond } });
    }
    Ok(((0..k).map(|r| m[r * w + 2 * k]).collect(), rcond))
}

/// Least-squares AR(`order`) coefficients from the normal equations.
///
/// Rows start at the `order + 1`-th observation so every lag is taken from
/// the observed path itself.
pub fn lse_ar(path: &SeriesPath, order: usize) -> Result<Vec<f64>> {
    if order == 0 {
        return Err(Error::InvalidArgument("AR order must be at least 1".into()));
    }
    let y = &path.y;
    if y.len() <= order {
        return Err(Error::InvalidArgument(format!(
            "least squares of order {order} needs more than {order} observations, got {}",
            y.len()
        )));
    }
    let mut xtx = vec![0.0; order * order];
    let mut xty = vec![0.0; order];
    for i in order..y.len() {
        for r in 0..order {
            let xr = y[i - 1 - r];
            xty[r] += xr * y[i];
            for c in 0..order {
                xtx[r * order + c] += xr * y[i - 1 - c];
            }
        }
    }
    solve_dense(&xtx, &xty, order).map(|(beta, _)| beta)
}

/// Grid mesh `c / sqrt(n)`.
pub fn grid_step(n: usize, c: f64) -> f64 {
    c / (n as f64).sqrt()
}

/// Index `k` of the nearest grid point `k c / sqrt(n)`; half steps go up.
pub fn grid_index(x: f64, n: usize, c: f64) -> i64 {
    (x / grid_step(n, c) + 0.5).floor() as i64
}

/// Componentwise rounding onto the grid `{k c / sqrt(n)}`.
pub fn discretize(estimate: &[f64], n: usize, c: f64) -> Vec<f64> {
    let step = grid_step(n, c);
    estimate
        .iter()
        .map(|&x| grid_index(x, n, c) as f64 * step)
        .collect()
}

/// How the correction constants are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConstantsMode {
    /// Noise and state expectations factorized; structural zeros are exact
    /// and only the remaining state expectations are averaged over an
    /// auxiliary null path.
    Analytic { n_aux: usize },
    /// Every integrand averaged along an auxiliary null path.
    Ergodic { n_aux: usize },
}

impl ConstantsMode {
    pub fn n_aux(&self) -> usize {
        match *self {
            ConstantsMode::Analytic { n_aux } | ConstantsMode::Ergodic { n_aux } => n_aux,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ConstantsMode::Analytic { .. } => "analytic",
            ConstantsMode::Ergodic { .. } => "ergodic",
        }
    }
}

impl Default for ConstantsMode {
    fn default() -> Self {
        ConstantsMode::Analytic { n_aux: 1_000_000 }
    }
}

/// `K`, `K'` (length `l`) and `J`, `J'` (length `p`) with batch-means
/// standard errors of the averaged entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConstants {
    pub k: Vec<f64>,
    pub k_prime: Vec<f64>,
    pub j: Vec<f64>,
    pub j_prime: Vec<f64>,
    pub k_se: Vec<f64>,
    pub k_prime_se: Vec<f64>,
    pub j_se: Vec<f64>,
    pub j_prime_se: Vec<f64>,
    pub mode: ConstantsMode,
}

impl CorrectionConstants {
    pub fn zeros(n_rho: usize, n_theta: usize, mode: ConstantsMode) -> Self {
        Self {
            k: vec![0.0; n_rho],
            k_prime: vec![0.0; n_rho],
            j: vec![0.0; n_theta],
            j_prime: vec![0.0; n_theta],
            k_se: vec![0.0; n_rho],
            k_prime_se: vec![0.0; n_rho],
            j_se: vec![0.0; n_theta],
            j_prime_se: vec![0.0; n_theta],
            mode,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.k
            .iter()
            .chain(&self.k_prime)
            .chain(&self.j)
            .chain(&self.j_prime)
            .all(|&v| v == 0.0)
    }

    /// Constants for amplitude `a` when `self` was computed at unit
    /// amplitude (every entry is linear in `a`).
    pub fn scaled(&self, a: f64) -> Self {
        let sc = |v: &[f64]| v.iter().map(|x| x * a).collect::<Vec<_>>();
        let sc_se = |v: &[f64]| v.iter().map(|x| x * a.abs()).collect::<Vec<_>>();
        Self {
            k: sc(&self.k),
            k_prime: sc(&self.k_prime),
            j: sc(&self.j),
            j_prime: sc(&self.j_prime),
            k_se: sc_se(&self.k_se),
            k_prime_se: sc_se(&self.k_prime_se),
            j_se: sc_se(&self.j_se),
            j_prime_se: sc_se(&self.j_prime_se),
            mode: self.mode,
        }
    }

    /// `h K + h' K'`
    pub fn rho_weights(&self, h: f64, h_prime: f64) -> Vec<f64> {
        self.k
            .iter()
            .zip(&self.k_prime)
            .map(|(k, kp)| h * k + h_prime * kp)
            .collect()
    }

    /// `h J + h' J'`
    pub fn theta_weights(&self, h: f64, h_prime: f64) -> Vec<f64> {
        self.j
            .iter()
            .zip(&self.j_prime)
            .map(|(j, jp)| h * j + h_prime * jp)
            .collect()
    }
}

/// Per-step state factors shared by the gradient and the constants.
struct StateFactors {
    mean_grad: Vec<f64>,
    scale_grad: Vec<f64>,
}

impl StateFactors {
    fn new(model: &ModelSpec) -> Self {
        Self {
            mean_grad: vec![0.0; model.n_rho()],
            scale_grad: vec![0.0; model.n_theta()],
        }
    }

    /// Fills `dm/sigma` and `dsigma/sigma`; returns `(G/sigma, S/sigma)`.
    fn fill(
        &mut self,
        model: &ModelSpec,
        alt: &LocalAlternative,
        params: &Params,
        z: &[f64],
        sigma: f64,
    ) -> (f64, f64) {
        model.mean_grad(&params.rho, z, &mut self.mean_grad);
        model.scale_grad(&params.theta, z, &mut self.scale_grad);
        for v in self.mean_grad.iter_mut().chain(self.scale_grad.iter_mut()) {
            *v /= sigma;
        }
        (alt.g(z) / sigma, alt.s(z) / sigma)
    }
}

fn average_with_se(rows: &[Vec<f64>], width: usize) -> (Vec<f64>, Vec<f64>) {
    let batches = 50;
    (0..width)
        .map(|c| {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            (stats::mean(&col), stats::batch_means_se(&col, batches))
        })
        .unzip()
}

/// Correction constants from a null path (the path's innovations are used
/// as `eps_0` in ergodic mode).
pub fn correction_constants_from_path(
    path: &SeriesPath,
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    mode: ConstantsMode,
) -> Result<CorrectionConstants> {
    check_len("z dimension", model.z_dim(), path.z_dim)?;
    let (l, p) = (model.n_rho(), model.n_theta());
    let params = model.params();
    let mut out = CorrectionConstants::zeros(l, p, mode);
    if alt.a == 0.0 || path.is_empty() {
        return Ok(out);
    }
    let mut fac = StateFactors::new(model);
    let width = 2 * l + 2 * p;

    match mode {
        ConstantsMode::Analytic { .. } => {
            let e = noise.score_expectations();
            // noise factors for K, K', J, J'
            let w = [e.m_dot, e.n_dot, e.eps_m_dot, e.eps_n_dot];
            // odd integrand under a symmetric law
            let odd = noise.is_symmetric() && model.is_odd_even() && alt.is_even();
            let needs = [
                w[0] != 0.0 && alt.h != 0.0 && !odd,
                w[1] != 0.0 && !alt.s_is_zero() && !odd,
                w[2] != 0.0 && p > 0,
                w[3] != 0.0 && p > 0 && !alt.s_is_zero(),
            ];
            if !needs.iter().any(|&b| b) {
                return Ok(out);
            }
            let mut rows = Vec::with_capacity(path.len());
            for i in 0..path.len() {
                let z = path.z(i);
                let sigma = model.scale(&params.theta, z);
                if !(sigma > 0.0) {
                    return Err(Error::ScaleNotPositive { index: i, value: sigma });
                }
                let (gs, ss) = fac.fill(model, alt, params, z, sigma);
                let mut row = Vec::with_capacity(width);
                row.extend(fac.mean_grad.iter().map(|d| d * gs));
                row.extend(fac.mean_grad.iter().map(|d| d * ss));
                row.extend(fac.scale_grad.iter().map(|d| d * gs));
                row.extend(fac.scale_grad.iter().map(|d| d * ss));
                rows.push(row);
            }
            let (avg, se) = average_with_se(&rows, width);
            let blocks = [(0, l), (l, l), (2 * l, p), (2 * l + p, p)];
            for (b, &(start, len)) in blocks.iter().enumerate() {
                if !needs[b] {
                    continue;
                }
                let (dst, dst_se) = match b {
                    0 => (&mut out.k, &mut out.k_se),
                    1 => (&mut out.k_prime, &mut out.k_prime_se),
                    2 => (&mut out.j, &mut out.j_se),
                    _ => (&mut out.j_prime, &mut out.j_prime_se),
                };
                for c in 0..len {
                    dst[c] = w[b] * avg[start + c];
                    dst_se[c] = w[b].abs() * se[start + c];
                }
            }
        }
        ConstantsMode::Ergodic { .. } => {
            let mut rows = Vec::with_capacity(path.len());
            for i in 0..path.len() {
                let z = path.z(i);
                let sigma = model.scale(&params.theta, z);
                if !(sigma > 0.0) {
                    return Err(Error::ScaleNotPositive { index: i, value: sigma });
                }
                let (gs, ss) = fac.fill(model, alt, params, z, sigma);
                let e = path.eps[i];
                let sc = noise.scores(e);
                let mut row = Vec::with_capacity(width);
                row.extend(fac.mean_grad.iter().map(|d| d * sc.m_dot * gs));
                row.extend(fac.mean_grad.iter().map(|d| d * sc.n_dot * ss));
                row.extend(fac.scale_grad.iter().map(|d| d * e * sc.m_dot * gs));
                row.extend(fac.scale_grad.iter().map(|d| d * e * sc.n_dot * ss));
                rows.push(row);
            }
            let (avg, se) = average_with_se(&rows, width);
            out.k.copy_from_slice(&avg[..l]);
            out.k_prime.copy_from_slice(&avg[l..2 * l]);
            out.j.copy_from_slice(&avg[2 * l..2 * l + p]);
            out.j_prime.copy_from_slice(&avg[2 * l + p..]);
            out.k_se.copy_from_slice(&se[..l]);
            out.k_prime_se.copy_from_slice(&se[l..2 * l]);
            out.j_se.copy_from_slice(&se[2 * l..2 * l + p]);
            out.j_prime_se.copy_from_slice(&se[2 * l + p..]);
        }
    }
    Ok(out)
}

/// Correction constants over a fresh auxiliary null path of length `n_aux`.
pub fn correction_constants(
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    mode: ConstantsMode,
    burnin: usize,
    rng: &mut RandomStream,
) -> Result<CorrectionConstants> {
    let path = simulate_null(model, noise, mode.n_aux().max(1), burnin, rng)?;
    correction_constants_from_path(&path, model, alt, noise, mode)
}

/// Gradient of the central sequence at `params`: `dV/d rho` followed by
/// `dV/d theta`.
pub fn central_gradient(
    path: &SeriesPath,
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    params: &Params,
) -> Result<Vec<f64>> {
    let eps = residuals(model, path, params)?;
    let (l, p) = (model.n_rho(), model.n_theta());
    let mut grad = vec![0.0; l + p];
    if path.is_empty() {
        return Ok(grad);
    }
    let mut fac = StateFactors::new(model);
    let (h, hp) = (alt.h, alt.h_prime);
    for (i, &e) in eps.iter().enumerate() {
        let z = path.z(i);
        let sigma = model.scale(&params.theta, z);
        let (gs, ss) = fac.fill(model, alt, params, z, sigma);
        let sc = noise.scores(e);
        let w_rho = h * sc.m_dot * gs + hp * sc.n_dot * ss;
        for (g, d) in grad[..l].iter_mut().zip(&fac.mean_grad) {
            *g += d * w_rho;
        }
        if p > 0 {
            let w_theta = h * (e * sc.m_dot + sc.m) * gs + hp * (e * sc.n_dot + sc.n) * ss;
            for (g, d) in grad[l..].iter_mut().zip(&fac.scale_grad) {
                *g += d * w_theta;
            }
        }
    }
    let scale = 1.0 / (path.len() as f64).sqrt();
    for g in &mut grad {
        *g *= scale;
    }
    Ok(grad)
}

/// Correction numerator
/// `-[sqrt(n)(rho - rho0)'(h K + h' K') + sqrt(n)(theta - theta0)'(h J + h' J')]`.
pub fn d_n(
    estimate: &Params,
    reference: &Params,
    constants: &CorrectionConstants,
    h: f64,
    h_prime: f64,
    n: usize,
) -> Result<f64> {
    check_len("rho", reference.rho.len(), estimate.rho.len())?;
    check_len("theta", reference.theta.len(), estimate.theta.len())?;
    check_len("K", estimate.rho.len(), constants.k.len())?;
    check_len("J", estimate.theta.len(), constants.j.len())?;
    let sn = (n as f64).sqrt();
    let rho_part: f64 = estimate
        .rho
        .iter()
        .zip(&reference.rho)
        .zip(constants.rho_weights(h, h_prime))
        .map(|((e, r), w)| sn * (e - r) * w)
        .sum();
    let theta_part: f64 = estimate
        .theta
        .iter()
        .zip(&reference.theta)
        .zip(constants.theta_weights(h, h_prime))
        .map(|((e, r), w)| sn * (e - r) * w)
        .sum();
    Ok(-(rho_part + theta_part))
}

/// Threshold under which the gradient is treated as zero.
pub fn gradient_floor(d_n: f64) -> f64 {
    1e-8 * d_n.abs().max(1.0)
}

/// Discrete estimate with coordinate `component` shifted by
/// `d_n / gradient[component]`.
pub fn modified_estimator(
    discrete: &[f64],
    d_n: f64,
    gradient: &[f64],
    component: usize,
) -> Result<Vec<f64>> {
    if component >= discrete.len() || component >= gradient.len() {
        return Err(Error::InvalidArgument(format!(
            "corrected component {component} out of range for {} parameters",
            discrete.len()
        )));
    }
    let mut out = discrete.to_vec();
    if d_n == 0.0 {
        return Ok(out);
    }
    let g = gradient[component];
    let floor = gradient_floor(d_n);
    if !(g.abs() > floor) {
        return Err(Error::GradientTooSmall {
            component,
            gradient: g,
            floor,
        });
    }
    out[component] += d_n / g;
    Ok(out)
}

/// Parameter used in place of the true value inside `D_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DnReference {
    #[default]
    TrueParam,
    /// Least-squares estimate from a long auxiliary path (experimental).
    AuxiliaryEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    /// Grid constant `c`; the mesh is `c / sqrt(n)`.
    pub c: f64,
    pub corrected_component: usize,
    pub dn_reference: DnReference,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            corrected_component: 0,
            dn_reference: DnReference::TrueParam,
        }
    }
}

/// Every estimate of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub lse: Params,
    pub discrete: Params,
    pub mde: Params,
    pub corrected_component: usize,
    pub d_n: f64,
    /// Central-sequence gradient at the discrete estimate.
    pub gradient: Vec<f64>,
    /// The gradient was below the floor and `mde` equals `discrete`.
    pub fallback: bool,
}

/// Least squares, discretization and correction on one path. Scale
/// parameters are not estimated and stay at their reference values.
pub fn estimate_set(
    path: &SeriesPath,
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    constants: &CorrectionConstants,
    reference: &Params,
    cfg: &EstimationConfig,
) -> Result<EstimateSet> {
    if !(cfg.c > 0.0) {
        return Err(Error::InvalidArgument(format!("grid constant c must be positive, got {}", cfg.c)));
    }
    let n = path.len();
    let lse = Params::new(model.estimate_rho(path)?, model.theta().to_vec());
    let discrete = Params::new(discretize(&lse.rho, n, cfg.c), model.theta().to_vec());
    let d = d_n(&discrete, reference, constants, alt.h, alt.h_prime, n)?;
    let gradient = central_gradient(path, model, alt, noise, &discrete)?;
    let (mde_rho, fallback) =
        match modified_estimator(&discrete.rho, d, &gradient, cfg.corrected_component) {
            Ok(v) => (v, false),
            Err(Error::GradientTooSmall { .. }) => (discrete.rho.clone(), true),
            Err(e) => return Err(e),
        };
    Ok(EstimateSet {
        mde: Params::new(mde_rho, model.theta().to_vec()),
        lse,
        discrete,
        corrected_component: cfg.corrected_component,
        d_n: d,
        gradient,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tsmodel::{simulate_with_innovations, ArchTerm, DirectionShape};
    use proptest::prelude::*;
    use std::sync::Arc;

    #[derive(Debug)]
    struct Odd;

    impl DirectionShape for Odd {
        fn name(&self) -> String {
            "odd".into()
        }
        fn g(&self, z: &[f64]) -> f64 {
            6.0 * z[0] / (1.0 + z[0] * z[0])
        }
        fn s(&self, _z: &[f64]) -> f64 {
            0.0
        }
        fn s_is_zero(&self) -> bool {
            true
        }
    }

    #[test]
    fn noiseless_ar1_is_exact() {
        let mut first = true;
        let model = ModelSpec::ar(vec![0.5]).unwrap();
        let path = simulate_with_innovations(&model, None, 40, 0, || {
            if std::mem::take(&mut first) {
                3.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert_eq!(lse_ar(&path, 1).unwrap(), vec![0.5]);
    }

    #[test]
    fn ar1_closed_form() {
        let model = ModelSpec::ar(vec![0.1]).unwrap();
        let path = simulate_null(&model, &NoiseSpec::gaussian(), 500, 50, &mut stream(2)).unwrap();
        let y = &path.y;
        let num: f64 = (1..y.len()).map(|i| y[i] * y[i - 1]).sum();
        let den: f64 = (1..y.len()).map(|i| y[i - 1] * y[i - 1]).sum();
        assert!((lse_ar(&path, 1).unwrap()[0] - num / den).abs() < 1e-14);
    }

    #[test]
    fn singular_design_is_reported() {
        let path = SeriesPath::from_observations(&[0.0; 20], 1, 0).unwrap();
        assert!(matches!(lse_ar(&path, 1), Err(Error::SingularDesign { .. })));
        let path = SeriesPath::from_observations(&[1.0; 20], 2, 0).unwrap();
        assert!(matches!(lse_ar(&path, 2), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn lse_is_consistent() {
        let model = ModelSpec::ar(vec![0.1]).unwrap();
        let noise = NoiseSpec::gaussian();
        let avg = (0..200)
            .map(|s| lse_ar(&simulate_null(&model, &noise, 10_000, 500, &mut stream(s)).unwrap(), 1).unwrap()[0])
            .sum::<f64>()
            / 200.0;
        assert!((avg - 0.1).abs() < 0.01, "{avg}");
    }

    #[test]
    fn discretize_examples() {
        assert!((discretize(&[0.234], 100, 1.0)[0] - 0.2).abs() < 1e-15);
        assert_eq!(discretize(&[0.3], 100, 1.0), discretize(&discretize(&[0.3], 100, 1.0), 100, 1.0));
        // exact half step rounds up
        assert_eq!(grid_index(0.25, 16, 1.0), 1);
        assert_eq!(grid_index(-0.125, 16, 1.0), 0);
    }

    proptest! {
        #[test]
        fn discretize_properties(x in -5.0f64..5.0, n in 1usize..20_000, c in 0.1f64..3.0) {
            let step = grid_step(n, c);
            let d = discretize(&[x], n, c)[0];
            prop_assert!((d - x).abs() <= step / 2.0 * (1.0 + 1e-9));
            let k = grid_index(x, n, c);
            prop_assert_eq!(grid_index(d, n, c), k);
            let kk = grid_index(x + step, n, c);
            let frac = (x / step + 0.5).rem_euclid(1.0);
            if frac > 1e-9 && frac < 1.0 - 1e-9 {
                prop_assert_eq!(kk, k + 1);
                let d2 = discretize(&[x + step], n, c)[0];
                prop_assert!((d2 - d - step).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn d_n_examples() {
        let mut c = CorrectionConstants::zeros(1, 0, ConstantsMode::default());
        c.k[0] = 0.3;
        let n = 100;
        let reference = Params::new(vec![0.1], vec![]);
        let est = Params::new(vec![0.1 + 2.0 / 10.0], vec![]);
        assert!((d_n(&est, &reference, &c, 1.0, 1.0, n).unwrap() + 0.6).abs() < 1e-12);
        assert_eq!(d_n(&reference, &reference, &c, 1.0, 1.0, n).unwrap(), 0.0);
        let zero = CorrectionConstants::zeros(1, 0, ConstantsMode::default());
        assert_eq!(d_n(&est, &reference, &zero, 1.0, 1.0, n).unwrap(), 0.0);
    }

    #[test]
    fn modified_estimator_examples() {
        let out = modified_estimator(&[0.2, 0.2], 0.05, &[-0.5, 3.0], 0).unwrap();
        assert!((out[0] - 0.1).abs() < 1e-15);
        assert_eq!(out[1], 0.2);
        assert_eq!(modified_estimator(&[0.2], 0.0, &[0.0], 0).unwrap(), vec![0.2]);
        assert!(matches!(
            modified_estimator(&[0.2], 0.1, &[0.0], 0),
            Err(Error::GradientTooSmall { .. })
        ));
        assert!(modified_estimator(&[0.2], 0.1, &[1.0], 3).is_err());
    }

    #[test]
    fn structural_zeros_are_exact() {
        let noise = NoiseSpec::gaussian();
        let mode = ConstantsMode::Analytic { n_aux: 20_000 };
        let ar1 = ModelSpec::ar(vec![0.1]).unwrap();
        let c1 = correction_constants(&ar1, &LocalAlternative::ex1(0.5), &noise, mode, 100, &mut stream(1)).unwrap();
        assert_eq!(c1.k, vec![0.0]);
        assert_eq!(c1.k_prime, vec![0.0]);
        assert!(c1.j.is_empty() && c1.j_prime.is_empty());

        let arch = ModelSpec::ar1_arch(0.1, 0.5, ArchTerm::Bounded).unwrap();
        let c2 = correction_constants(&arch, &LocalAlternative::ex2(0.5), &noise, mode, 100, &mut stream(1)).unwrap();
        assert_eq!(c2.k, vec![0.0]);
        assert_eq!(c2.k_prime, vec![0.0]);

        let ar2 = ModelSpec::ar(vec![0.2, 0.2]).unwrap();
        let t = NoiseSpec::student_t(6).unwrap();
        let c3 = correction_constants(&ar2, &LocalAlternative::ex3(0.5), &t, mode, 100, &mut stream(1)).unwrap();
        assert!(c3.is_zero());

        let odd = LocalAlternative::custom(Arc::new(Odd), 0.5);
        let c4 = correction_constants(&ar1, &odd, &noise, mode, 100, &mut stream(1)).unwrap();
        assert!(c4.k[0] < -0.5);
    }

    #[test]
    fn ex1_constant_matches_closed_form() {
        // K = -6a E[Y/(1+Y^2)] under Gaussian noise
        let noise = NoiseSpec::gaussian();
        let model = ModelSpec::ar(vec![0.3]).unwrap();
        let a = 0.5;
        let alt = LocalAlternative::ex1(a);
        let path = simulate_null(&model, &noise, 50_000, 200, &mut stream(11)).unwrap();
        let c = correction_constants_from_path(&path, &model, &alt, &noise, ConstantsMode::Ergodic { n_aux: 0 }).unwrap();
        let direct = -6.0 * a * stats::mean(&path.y_lag_ratio());
        assert!((c.k[0] - direct).abs() < 1e-12);
        assert!(c.k[0].abs() < 3.0 * c.k_se[0]);
    }

    #[test]
    fn analytic_and_ergodic_agree() {
        let noise = NoiseSpec::student_t(6).unwrap();
        let model = ModelSpec::ar(vec![0.3]).unwrap();
        let alt = LocalAlternative::custom(Arc::new(Odd), 0.5);
        let path = simulate_null(&model, &noise, 200_000, 200, &mut stream(5)).unwrap();
        let an = correction_constants_from_path(&path, &model, &alt, &noise, ConstantsMode::Analytic { n_aux: 0 }).unwrap();
        let er = correction_constants_from_path(&path, &model, &alt, &noise, ConstantsMode::Ergodic { n_aux: 0 }).unwrap();
        let tol = 3.0 * (an.k_se[0].powi(2) + er.k_se[0].powi(2)).sqrt();
        assert!((an.k[0] - er.k[0]).abs() < tol, "{an:?} {er:?}");
        assert!(an.k[0] < -0.5);
    }

    fn finite_difference(
        path: &SeriesPath,
        model: &ModelSpec,
        alt: &LocalAlternative,
        noise: &NoiseSpec,
        at: &Params,
    ) -> Vec<f64> {
        let v = |p: &Params| crate::lan::central_sequence(path, model, alt, noise, p).unwrap().v;
        let flat = at.flat();
        (0..flat.len())
            .map(|j| {
                let h = 1e-6 * flat[j].abs().max(1.0);
                let mut up = flat.clone();
                up[j] += h;
                let mut dn = flat.clone();
                dn[j] -= h;
                (v(&Params::from_flat(&up, model.n_rho())) - v(&Params::from_flat(&dn, model.n_rho()))) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ar2 = ModelSpec::ar(vec![0.2, 0.2]).unwrap();
        for noise in [NoiseSpec::gaussian(), NoiseSpec::student_t(5).unwrap()] {
            let alt = LocalAlternative::ex3(0.4).with_steps(1.0, 0.7);
            let path = simulate_null(&ar2, &noise, 300, 50, &mut stream(8)).unwrap();
            let at = Params::new(vec![0.25, 0.15], vec![]);
            let g = central_gradient(&path, &ar2, &alt, &noise, &at).unwrap();
            let fd = finite_difference(&path, &ar2, &alt, &noise, &at);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{g:?} {fd:?}");
            }
        }
    }

    #[test]
    fn ex1_gaussian_gradient_closed_form() {
        let noise = NoiseSpec::gaussian();
        let model = ModelSpec::ar(vec![0.1]).unwrap();
        let a = 0.7;
        let alt = LocalAlternative::ex1(a);
        let path = simulate_null(&model, &noise, 400, 50, &mut stream(3)).unwrap();
        let n = path.len() as f64;
        let closed = -(6.0 * a / n) * path.y_lag_ratio().iter().sum::<f64>();
        for rho in [-0.5, 0.0, 0.1, 0.6] {
            let g = central_gradient(&path, &model, &alt, &noise, &Params::new(vec![rho], vec![])).unwrap();
            assert!((g[0] / n.sqrt() - closed).abs() < 1e-12);
        }
        let zero = central_gradient(&path, &model, &LocalAlternative::ex1(0.0), &noise, model.params()).unwrap();
        assert_eq!(zero, vec![0.0]);
    }

    #[test]
    fn estimate_set_invariants() {
        let noise = NoiseSpec::gaussian();
        let model = ModelSpec::ar(vec![0.2, 0.2]).unwrap();
        let alt = LocalAlternative::ex3(0.5);
        let constants = correction_constants(&model, &alt, &noise, ConstantsMode::Analytic { n_aux: 50_000 }, 100, &mut stream(2)).unwrap();
        let cfg = EstimationConfig { corrected_component: 1, ..Default::default() };
        for seed in 0..20 {
            let path = simulate_null(&model, &noise, 400, 100, &mut stream(seed)).unwrap();
            let est = estimate_set(&path, &model, &alt, &noise, &constants, model.params(), &cfg).unwrap();
            let step = grid_step(400, 1.0);
            for (d, l) in est.discrete.rho.iter().zip(&est.lse.rho) {
                assert!((d - l).abs() <= step / 2.0 + 1e-15);
                assert!(((d / step).round() * step - d).abs() < 1e-12);
            }
            assert_eq!(est.mde.rho[0], est.discrete.rho[0]);
            if !est.fallback {
                let g = est.gradient[1];
                assert!((est.mde.rho[1] - est.discrete.rho[1] - est.d_n / g).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_constants_leave_discrete_estimate() {
        let noise = NoiseSpec::gaussian();
        let model = ModelSpec::ar(vec![0.1]).unwrap();
        let alt = LocalAlternative::ex1(0.5);
        let zeros = CorrectionConstants::zeros(1, 0, ConstantsMode::default());
        let path = simulate_null(&model, &noise, 200, 100, &mut stream(4)).unwrap();
        let est = estimate_set(&path, &model, &alt, &noise, &zeros, model.params(), &EstimationConfig::default()).unwrap();
        assert_eq!(est.mde, est.discrete);
        assert_eq!(est.d_n, 0.0);
    }

    trait LagRatio {
        fn y_lag_ratio(&self) -> Vec<f64>;
    }

    impl LagRatio for SeriesPath {
        fn y_lag_ratio(&self) -> Vec<f64> {
            (0..self.len())
                .map(|i| {
                    let y = self.z(i)[0];
                    y / (1.0 + y * y)
                })
                .collect()
        }
    }
}
