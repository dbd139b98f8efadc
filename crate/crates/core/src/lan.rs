//! Central sequence, likelihood ratio and the Neyman-Pearson test.
//!
//! With `eps_i` the standardized residual, the central sequence is
//!
//! ```text
//! V = sum_i U_i,   U_i = -n^{-1/2} [ h M(eps_i) G_i / sigma_i + h' N(eps_i) S_i / sigma_i ]
//! ```
//!
//! and under the null it is asymptotically `N(0, tau^2)` with
//! `tau^2 = h^2 I_0 E(G/sigma)^2 + h'^2 (I_2 - 1) E(S/sigma)^2 + 2 h h' I_1 E(G S / sigma^2)`.
//! The log-likelihood ratio satisfies `Lambda = V - tau^2 / 2 + o_P(1)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::score::{NoiseFamily, NoiseMoments, NoiseSpec};
use crate::stats;
use crate::tsmodel::{residuals, LocalAlternative, ModelSpec, Params, SeriesPath};

/// One summand `U_i` of the central sequence at the true scale parameter.
pub fn u_term(
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    z: &[f64],
    eps: f64,
    n: usize,
) -> Result<f64> {
    let sigma = model.scale(model.theta(), z);
    if !(sigma > 0.0) {
        return Err(Error::ScaleNotPositive { index: 0, value: sigma });
    }
    let (r, q) = u_parts(alt, noise, z, sigma, eps, 1.0 / (n as f64).sqrt());
    Ok(r + q)
}

#[inline]
fn u_parts(alt: &LocalAlternative, noise: &NoiseSpec, z: &[f64], sigma: f64, eps: f64, scale: f64) -> (f64, f64) {
    let m = noise.m(eps);
    let r = if alt.h != 0.0 {
        -scale * alt.h * m * alt.g(z) / sigma
    } else {
        0.0
    };
    let q = if alt.h_prime != 0.0 && !alt.s_is_zero() {
        -scale * alt.h_prime * (1.0 + eps * m) * alt.s(z) / sigma
    } else {
        0.0
    };
    (r, q)
}

/// `V` with its mean part `r`, scale part `q` and summands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralSequence {
    pub v: f64,
    pub r_part: f64,
    pub q_part: f64,
    pub u_terms: Vec<f64>,
}

/// Central sequence with residuals taken at `params`.
pub fn central_sequence(
    path: &SeriesPath,
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    params: &Params,
) -> Result<CentralSequence> {
    let eps = residuals(model, path, params)?;
    let scale = 1.0 / (path.len().max(1) as f64).sqrt();
    let mut u_terms = Vec::with_capacity(eps.len());
    let (mut r_part, mut q_part) = (0.0, 0.0);
    for (i, &e) in eps.iter().enumerate() {
        let z = path.z(i);
        let sigma = model.scale(&params.theta, z);
        let (r, q) = u_parts(alt, noise, z, sigma, e, scale);
        r_part += r;
        q_part += q;
        u_terms.push(r + q);
    }
    Ok(CentralSequence {
        v: u_terms.iter().sum(),
        r_part,
        q_part,
        u_terms,
    })
}

/// State expectations entering `tau^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauExpectations {
    /// `E (G / sigma)^2`
    pub g2: f64,
    /// `E (S / sigma)^2`
    pub s2: f64,
    /// `E (G S / sigma^2)`
    pub gs: f64,
}

impl TauExpectations {
    /// Path averages with `sigma` evaluated at `params`.
    pub fn from_path(path: &SeriesPath, model: &ModelSpec, alt: &LocalAlternative, params: &Params) -> Result<Self> {
        check_len("z dimension", model.z_dim(), path.z_dim)?;
        if path.is_empty() {
            return Err(Error::InvalidArgument("empty path".into()));
        }
        let (mut g2, mut s2, mut gs) = (0.0, 0.0, 0.0);
        for i in 0..path.len() {
            let z = path.z(i);
            let sigma = model.scale(&params.theta, z);
            if !(sigma > 0.0) {
                return Err(Error::ScaleNotPositive { index: i, value: sigma });
            }
            let g = alt.g(z) / sigma;
            let s = alt.s(z) / sigma;
            g2 += g * g;
            s2 += s * s;
            gs += g * s;
        }
        let n = path.len() as f64;
        Ok(Self {
            g2: g2 / n,
            s2: s2 / n,
            gs: gs / n,
        })
    }

    /// Expectations for amplitude `a` when `self` was computed at unit
    /// amplitude.
    pub fn scaled(&self, a: f64) -> Self {
        let a2 = a * a;
        Self {
            g2: self.g2 * a2,
            s2: self.s2 * a2,
            gs: self.gs * a2,
        }
    }
}

/// Source of the expectations in `tau^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TauMode {
    /// Long auxiliary null path.
    #[default]
    Aux,
    /// Averages over the observed path at the parameters under test.
    Plugin,
}

/// The quadratic form in `(h, h')`.
pub fn tau_squared(alt: &LocalAlternative, moments: &NoiseMoments, exps: &TauExpectations) -> Result<f64> {
    let (h, hp) = (alt.h, alt.h_prime);
    let mut t = 0.0;
    if h != 0.0 {
        t += h * h * moments.i0 * exps.g2;
    }
    if hp != 0.0 {
        t += hp * hp * (moments.i2 - 1.0) * exps.s2;
    }
    if h != 0.0 && hp != 0.0 && moments.i1 != 0.0 {
        t += 2.0 * h * hp * moments.i1 * exps.gs;
    }
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTau2(t));
    }
    Ok(t)
}

/// Plug-in `tau^2` on the observed path at `params`. For Gaussian noise the
/// moments are the sample moments `I_j = mean(eps^{j+2})` of the residuals;
/// other families keep their quadrature moments.
pub fn plugin_tau_squared(
    path: &SeriesPath,
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    params: &Params,
) -> Result<f64> {
    let exps = TauExpectations::from_path(path, model, alt, params)?;
    let moments = match noise.family() {
        NoiseFamily::Gaussian => {
            let eps = residuals(model, path, params)?;
            let pw = |k: i32| stats::mean(&eps.iter().map(|e| e.powi(k)).collect::<Vec<_>>());
            NoiseMoments {
                i0: pw(2),
                i1: pw(3),
                i2: pw(4),
                k0: -pw(1),
                k1: -pw(2),
                k2: -pw(3),
                converged: true,
            }
        }
        _ => noise.moments(),
    };
    tau_squared(alt, &moments, &exps)
}

/// `Lambda` and the per-step `g_i - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatio {
    pub lambda: f64,
    pub g_minus_one: Vec<f64>,
}

/// Log-likelihood ratio of the alternative against the null at the true
/// parameters.
pub fn log_likelihood_ratio(
    path: &SeriesPath,
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
) -> Result<LikelihoodRatio> {
    log_likelihood_ratio_at(path, model, alt, noise, model.params())
}

/// Log-likelihood ratio with residuals at `params`.
pub fn log_likelihood_ratio_at(
    path: &SeriesPath,
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    params: &Params,
) -> Result<LikelihoodRatio> {
    let eps = residuals(model, path, params)?;
    let scale = 1.0 / (path.len().max(1) as f64).sqrt();
    let mut lambda = 0.0;
    let mut g_minus_one = Vec::with_capacity(eps.len());
    for (i, &e) in eps.iter().enumerate() {
        let z = path.z(i);
        let sigma = model.scale(&params.theta, z);
        let alpha = if alt.h != 0.0 { alt.h * scale * alt.g(z) / sigma } else { 0.0 };
        let beta = if alt.h_prime != 0.0 {
            1.0 + alt.h_prime * scale * alt.s(z) / sigma
        } else {
            1.0
        };
        if !(beta > 0.0) {
            return Err(Error::InvalidScaleShift { index: i, value: beta });
        }
        let log_g = if alpha == 0.0 && beta == 1.0 {
            0.0
        } else {
            noise.log_location_scale_density(e, alpha, beta)? - noise.log_density(e)
        };
        lambda += log_g;
        g_minus_one.push(log_g.exp_m1());
    }
    Ok(LikelihoodRatio { lambda, g_minus_one })
}

/// `max |g - 1|`, `sum (g - 1)^2` and `sum (g - 1) - V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionChecks {
    pub c1: f64,
    pub c2: f64,
    pub c3_gap: f64,
}

pub fn condition_checks(g_minus_one: &[f64], v: f64) -> ConditionChecks {
    ConditionChecks {
        c1: g_minus_one.iter().fold(0.0, |m, g| m.max(g.abs())),
        c2: g_minus_one.iter().map(|g| g * g).sum(),
        c3_gap: g_minus_one.iter().sum::<f64>() - v,
    }
}

/// Full LAN diagnostic of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralSequenceReport {
    pub v: f64,
    pub r_part: f64,
    pub q_part: f64,
    pub u_terms: Vec<f64>,
    pub tau2: f64,
    pub lambda: f64,
    /// `Lambda - (V - tau^2 / 2)`
    pub lan_residual: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3_gap: f64,
}

/// Evaluates the decomposition at the true parameters with a given `tau^2`.
pub fn lan_report(
    path: &SeriesPath,
    model: &ModelSpec,
    alt: &LocalAlternative,
    noise: &NoiseSpec,
    tau2: f64,
) -> Result<CentralSequenceReport> {
    let cs = central_sequence(path, model, alt, noise, model.params())?;
    let lr = log_likelihood_ratio(path, model, alt, noise)?;
    let cc = condition_checks(&lr.g_minus_one, cs.v);
    Ok(CentralSequenceReport {
        lan_residual: lr.lambda - (cs.v - tau2 / 2.0),
        v: cs.v,
        r_part: cs.r_part,
        q_part: cs.q_part,
        u_terms: cs.u_terms,
        tau2,
        lambda: lr.lambda,
        c1: cc.c1,
        c2: cc.c2,
        c3_gap: cc.c3_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub reject: bool,
    pub statistic: f64,
    pub critical: f64,
}

/// Rejects when `v / tau >= Z(alpha)`.
pub fn np_test(v: f64, tau2: f64, alpha: f64) -> Result<TestDecision> {
    if !(tau2 > 0.0) {
        return Err(Error::NonpositiveTau2(tau2));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let statistic = v / tau2.sqrt();
    let critical = stats::upper_normal_quantile(alpha);
    Ok(TestDecision {
        reject: statistic >= critical,
        statistic,
        critical,
    })
}

/// How the limiting power is written in terms of `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PowerConvention {
    /// `1 - Phi(Z(alpha) - tau)`, from the `N(tau^2, tau^2)` limit of `V`.
    #[default]
    #[serde(alias = "lecam")]
    LeCam,
    /// `1 - Phi(Z(alpha) - tau^2)`.
    #[serde(alias = "paper")]
    TauSquared,
}

pub fn analytic_power(tau2: f64, alpha: f64, convention: PowerConvention) -> f64 {
    let z = stats::upper_normal_quantile(alpha);
    let shift = match convention {
        PowerConvention::LeCam => tau2.max(0.0).sqrt(),
        PowerConvention::TauSquared => tau2.max(0.0),
    };
    1.0 - stats::normal_cdf(z - shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tsmodel::{simulate_null, ArchTerm, DirectionShape};
    use std::sync::Arc;

    #[derive(Debug)]
    struct Unit;

    impl DirectionShape for Unit {
        fn name(&self) -> String {
            "unit".into()
        }
        fn g(&self, _z: &[f64]) -> f64 {
            1.0
        }
        fn s(&self, _z: &[f64]) -> f64 {
            1.0
        }
    }

    #[test]
    fn u_term_examples() {
        let noise = NoiseSpec::gaussian();
        let model = ModelSpec::ar(vec![0.1]).unwrap();
        let alt = LocalAlternative::custom(Arc::new(Unit), 1.0);
        assert!((u_term(&model, &alt, &noise, &[0.3], 0.5, 1).unwrap() + 0.25).abs() < 1e-15);
        let off = alt.clone().with_steps(0.0, 0.0);
        assert_eq!(u_term(&model, &off, &noise, &[0.3], 0.5, 1).unwrap(), 0.0);
        let ex1 = LocalAlternative::ex1(0.5);
        let u = u_term(&model, &ex1, &noise, &[0.3], 0.5, 4).unwrap();
        assert!((u - (-0.5 * (-0.5) * ex1.g(&[0.3]))).abs() < 1e-15);
    }

    #[test]
    fn decomposition_is_additive() {
        let noise = NoiseSpec::student_t(5).unwrap();
        let model = ModelSpec::ar1_arch(0.2, 0.5, ArchTerm::Bounded).unwrap();
        let alt = LocalAlternative::ex2(0.8).with_steps(1.0, 1.5);
        let path = simulate_null(&model, &noise, 2000, 100, &mut stream(1)).unwrap();
        let cs = central_sequence(&path, &model, &alt, &noise, model.params()).unwrap();
        assert!((cs.v - cs.r_part - cs.q_part).abs() < 1e-12);
        assert!((cs.v - cs.u_terms.iter().sum::<f64>()).abs() < 1e-12);

        let ex1 = central_sequence(&path, &model, &LocalAlternative::ex1(0.5), &noise, model.params()).unwrap();
        assert_eq!(ex1.q_part, 0.0);
        let off = LocalAlternative::ex1(0.5).with_steps(0.0, 0.0);
        assert_eq!(central_sequence(&path, &model, &off, &noise, model.params()).unwrap().v, 0.0);
    }

    #[test]
    fn tau_squared_examples() {
        let g = NoiseSpec::gaussian().moments();
        let exps = TauExpectations { g2: 0.7, s2: 0.0, gs: 0.0 };
        assert!((tau_squared(&LocalAlternative::ex1(1.0), &g, &exps).unwrap() - 0.7).abs() < 1e-15);
        let ex3 = TauExpectations { g2: 0.4, s2: 0.4, gs: 0.4 };
        assert!((tau_squared(&LocalAlternative::ex3(1.0), &g, &ex3).unwrap() - 3.0 * 0.4).abs() < 1e-12);
        let bad = NoiseMoments { i2: 0.0, ..g };
        let alt = LocalAlternative::ex3(1.0).with_steps(0.0, 1.0);
        assert!(matches!(tau_squared(&alt, &bad, &ex3), Err(Error::NegativeTau2(_))));
    }

    #[test]
    fn gaussian_ex1_closed_form_lambda() {
        let noise = NoiseSpec::gaussian();
        let model = ModelSpec::ar(vec![0.1]).unwrap();
        let alt = LocalAlternative::ex1(0.9);
        let path = simulate_null(&model, &noise, 500, 100, &mut stream(6)).unwrap();
        let lr = log_likelihood_ratio(&path, &model, &alt, &noise).unwrap();
        let s = 1.0 / (500f64).sqrt();
        let closed: f64 = (0..path.len())
            .map(|i| {
                let a = s * alt.g(path.z(i));
                a * path.eps[i] - a * a / 2.0
            })
            .sum();
        assert!((lr.lambda - closed).abs() < 1e-10);
        let off = alt.with_steps(0.0, 0.0);
        let lr0 = log_likelihood_ratio(&path, &model, &off, &noise).unwrap();
        assert_eq!(lr0.lambda, 0.0);
        assert!(lr0.g_minus_one.iter().all(|&g| g == 0.0));
        let cc = condition_checks(&lr0.g_minus_one, 0.0);
        assert_eq!((cc.c1, cc.c2, cc.c3_gap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn invalid_scale_shift() {
        let noise = NoiseSpec::gaussian();
        let model = ModelSpec::ar(vec![0.1]).unwrap();
        let alt = LocalAlternative::custom(Arc::new(Unit), -10.0).with_steps(0.0, 1.0);
        let path = simulate_null(&model, &noise, 4, 0, &mut stream(6)).unwrap();
        assert!(matches!(
            log_likelihood_ratio(&path, &model, &alt, &noise),
            Err(Error::InvalidScaleShift { .. })
        ));
    }

    #[test]
    fn np_test_examples() {
        let z = stats::upper_normal_quantile(0.05);
        assert!((z - 1.6449).abs() < 1e-4);
        assert!(np_test(z, 1.0, 0.05).unwrap().reject);
        assert!(!np_test(0.0, 2.0, 0.05).unwrap().reject);
        assert!(matches!(np_test(1.0, 0.0, 0.05), Err(Error::NonpositiveTau2(_))));
        assert!(np_test(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn analytic_power_examples() {
        for c in [PowerConvention::LeCam, PowerConvention::TauSquared] {
            assert!((analytic_power(0.0, 0.05, c) - 0.05).abs() < 1e-12);
            assert!((analytic_power(1.0, 0.05, c) - 0.2595).abs() < 1e-4);
        }
        assert!((analytic_power(4.0, 0.05, PowerConvention::LeCam) - 0.639).abs() < 1e-3);
    }

    #[test]
    fn plugin_tau_close_to_aux_for_long_paths() {
        let noise = NoiseSpec::gaussian();
        let model = ModelSpec::ar(vec![0.2, 0.2]).unwrap();
        let alt = LocalAlternative::ex3(0.5);
        let path = simulate_null(&model, &noise, 200_000, 500, &mut stream(12)).unwrap();
        let plug = plugin_tau_squared(&path, &model, &alt, &noise, model.params()).unwrap();
        let exps = TauExpectations::from_path(&path, &model, &alt, model.params()).unwrap();
        let aux = tau_squared(&alt, &noise.moments(), &exps).unwrap();
        assert!((plug / aux - 1.0).abs() < 0.03, "{plug} {aux}");
    }
}
