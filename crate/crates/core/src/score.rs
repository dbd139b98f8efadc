//! Innovation laws and their score functions.
//!
//! Two families are supported: the standard normal and Student-t with an
//! integer number of degrees of freedom `l >= 4`. The Student-t law used for
//! simulation and statistics is standardized to unit variance (the raw
//! variate scaled by `sqrt((l-2)/l)`); the raw law is kept for the classical
//! sup-norm bounds on the score derivatives.
//!
//! With `v = l - 2` (standardized) or `v = l` (raw) the location score and
//! its derivatives are
//!
//! ```text
//! M(x)  = -(l+1) x / (v + x^2)
//! M'(x) =  (l+1) (x^2 - v) / (v + x^2)^2
//! M''(x) = 2 (l+1) x (3v - x^2) / (v + x^2)^3
//! ```
//!
//! and the scale score is `N(x) = 1 + x M(x)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quad::{integrate, Quadrature, QuadratureConfig};
use crate::stats::upper_normal_quantile;

/// Innovation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseFamily {
    Gaussian,
    StudentT { dof: u32 },
}

/// Which version of a Student-t law to evaluate. Gaussian ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Law {
    /// Unit-variance law used to generate and test.
    Standardized,
    /// Textbook t density `C_l (1 + x^2/l)^{-(l+1)/2}`.
    Raw,
}

/// Score functions evaluated at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreValues {
    pub m: f64,
    pub m_dot: f64,
    pub m_ddot: f64,
    pub n: f64,
    pub n_dot: f64,
    pub n_ddot: f64,
}

impl ScoreValues {
    fn from_location(x: f64, m: f64, m_dot: f64, m_ddot: f64) -> Self {
        Self {
            m,
            m_dot,
            m_ddot,
            n: 1.0 + x * m,
            n_dot: m + x * m_dot,
            n_ddot: 2.0 * m_dot + x * m_ddot,
        }
    }
}

/// `I_j = E(eps^j M^2)` and `K_j = E(eps^j M)` under the standardized law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMoments {
    pub i0: f64,
    pub i1: f64,
    pub i2: f64,
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    /// False if any quadrature flagged tail non-convergence.
    pub converged: bool,
}

/// Noise expectations entering the correction constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreExpectations {
    /// `E M'(eps)`
    pub m_dot: f64,
    /// `E N'(eps)`
    pub n_dot: f64,
    /// `E eps M'(eps)`
    pub eps_m_dot: f64,
    /// `E eps N'(eps)`
    pub eps_n_dot: f64,
}

/// An i.i.d. innovation law.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    family: NoiseFamily,
    quadrature: QuadratureConfig,
    moments: OnceLock<NoiseMoments>,
}

impl PartialEq for NoiseSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.quadrature == other.quadrature
    }
}

impl NoiseSpec {
    pub fn gaussian() -> Self {
        Self {
            family: NoiseFamily::Gaussian,
            quadrature: QuadratureConfig::default(),
            moments: OnceLock::new(),
        }
    }

    /// Student-t with `dof >= 4` degrees of freedom (finite fourth moment).
    pub fn student_t(dof: u32) -> Result<Self> {
        if dof < 4 {
            return Err(Error::InvalidArgument(format!(
                "Student-t degrees of freedom must be >= 4, got {dof}"
            )));
        }
        Ok(Self {
            family: NoiseFamily::StudentT { dof },
            quadrature: QuadratureConfig::default(),
            moments: OnceLock::new(),
        })
    }

    pub fn from_family(family: NoiseFamily) -> Result<Self> {
        match family {
            NoiseFamily::Gaussian => Ok(Self::gaussian()),
            NoiseFamily::StudentT { dof } => Self::student_t(dof),
        }
    }

    pub fn with_quadrature(mut self, cfg: QuadratureConfig) -> Self {
        self.quadrature = cfg;
        self.moments = OnceLock::new();
        self
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quadrature
    }

    pub fn is_symmetric(&self) -> bool {
        true
    }

    /// Short stable identifier, e.g. `gaussian` or `student5`.
    pub fn label(&self) -> String {
        match self.family {
            NoiseFamily::Gaussian => "gaussian".to_string(),
            NoiseFamily::StudentT { dof } => format!("student{dof}"),
        }
    }

    /// `(l + 1, v, log C)` of the Student-t density for the given law.
    fn t_params(dof: u32, law: Law) -> (f64, f64, f64) {
        let l = dof as f64;
        let v = match law {
            Law::Standardized => l - 2.0,
            Law::Raw => l,
        };
        let log_c = ln_gamma((l + 1.0) / 2.0) - ln_gamma(l / 2.0) - 0.5 * (PI * v).ln();
        (l + 1.0, v, log_c)
    }

    pub fn log_density_of(&self, law: Law, x: f64) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => -0.5 * x * x - 0.5 * (2.0 * PI).ln(),
            NoiseFamily::StudentT { dof } => {
                let (lp1, v, log_c) = Self::t_params(dof, law);
                log_c - 0.5 * lp1 * (x * x / v).ln_1p()
            }
        }
    }

    pub fn density_of(&self, law: Law, x: f64) -> f64 {
        self.log_density_of(law, x).exp()
    }

    /// Density of the standardized law.
    pub fn density(&self, x: f64) -> f64 {
        self.density_of(Law::Standardized, x)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        self.log_density_of(Law::Standardized, x)
    }

    pub fn raw_density(&self, x: f64) -> f64 {
        self.density_of(Law::Raw, x)
    }

    pub fn scores_of(&self, law: Law, x: f64) -> ScoreValues {
        match self.family {
            NoiseFamily::Gaussian => ScoreValues::from_location(x, -x, -1.0, 0.0),
            NoiseFamily::StudentT { dof } => {
                let (lp1, v, _) = Self::t_params(dof, law);
                let q = v + x * x;
                let m = -lp1 * x / q;
                let m_dot = lp1 * (x * x - v) / (q * q);
                let m_ddot = 2.0 * lp1 * x * (3.0 * v - x * x) / (q * q * q);
                ScoreValues::from_location(x, m, m_dot, m_ddot)
            }
        }
    }

    /// All six score values of the standardized law at `x`.
    pub fn scores(&self, x: f64) -> ScoreValues {
        self.scores_of(Law::Standardized, x)
    }

    /// Location score `M_f` alone (hot path).
    #[inline]
    pub fn m(&self, x: f64) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => -x,
            NoiseFamily::StudentT { dof } => {
                let l = dof as f64;
                -(l + 1.0) * x / (l - 2.0 + x * x)
            }
        }
    }

    /// One draw of the standardized law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => StandardNormal.sample(rng),
            NoiseFamily::StudentT { dof } => {
                let l = dof as f64;
                let t: f64 = StudentT::new(l).expect("dof >= 4").sample(rng);
                t * ((l - 2.0) / l).sqrt()
            }
        }
    }

    /// `F(x; a, b) = f((x - a) / b) / b`.
    pub fn location_scale_density(&self, x: f64, a: f64, b: f64) -> Result<f64> {
        Ok(self.log_location_scale_density(x, a, b)?.exp())
    }

    pub fn log_location_scale_density(&self, x: f64, a: f64, b: f64) -> Result<f64> {
        if !(b > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale b must be positive, got {b}"
            )));
        }
        Ok(self.log_density((x - a) / b) - b.ln())
    }

    /// Half-width beyond which the standardized law has mass below `tail`.
    fn tail_bound(&self, tail: f64) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => upper_normal_quantile(tail / 2.0),
            NoiseFamily::StudentT { dof } => {
                let l = dof as f64;
                let t = StudentsT::new(0.0, 1.0, l)
                    .map(|d| d.inverse_cdf(1.0 - tail / 2.0))
                    .unwrap_or(1e3);
                let t = if t.is_finite() { t } else { 1e3 };
                t * ((l - 2.0) / l).sqrt()
            }
        }
    }

    /// `E g(eps)` under the standardized law by quadrature.
    pub fn expect_with(&self, g: impl Fn(f64) -> f64, cfg: &QuadratureConfig) -> Quadrature {
        let bound = self.tail_bound(cfg.tail_mass);
        integrate(|x| g(x) * self.density(x), bound, cfg)
    }

    pub fn expect(&self, g: impl Fn(f64) -> f64) -> Quadrature {
        self.expect_with(g, &self.quadrature)
    }

    /// `(mass, mean, variance)` of the standardized density by quadrature.
    pub fn normalization(&self) -> (f64, f64, f64) {
        let mass = self.expect(|_| 1.0).value;
        let mean = self.expect(|x| x).value;
        let var = self.expect(|x| x * x).value;
        (mass, mean, var)
    }

    /// Moment functionals computed by quadrature with an explicit rule.
    pub fn moments_with(&self, cfg: &QuadratureConfig) -> NoiseMoments {
        let q = |j: i32, squared: bool| {
            self.expect_with(
                |x| {
                    let m = self.m(x);
                    x.powi(j) * if squared { m * m } else { m }
                },
                cfg,
            )
        };
        let parts = [q(0, true), q(1, true), q(2, true), q(0, false), q(1, false), q(2, false)];
        NoiseMoments {
            i0: parts[0].value,
            i1: parts[1].value,
            i2: parts[2].value,
            k0: parts[3].value,
            k1: parts[4].value,
            k2: parts[5].value,
            converged: parts.iter().all(|p| p.converged),
        }
    }

    /// `I_0, I_1, I_2, K_0, K_1, K_2`. Gaussian values are closed-form;
    /// Student-t values come from quadrature and are cached.
    pub fn moments(&self) -> NoiseMoments {
        *self.moments.get_or_init(|| match self.family {
            NoiseFamily::Gaussian => NoiseMoments {
                i0: 1.0,
                i1: 0.0,
                i2: 3.0,
                k0: 0.0,
                k1: -1.0,
                k2: 0.0,
                converged: true,
            },
            NoiseFamily::StudentT { .. } => self.moments_with(&self.quadrature),
        })
    }

    /// Expectations of `M'`, `N'`, `eps M'`, `eps N'`. Odd functionals of a
    /// symmetric law are exactly zero.
    pub fn score_expectations(&self) -> ScoreExpectations {
        let (m_dot, eps_n_dot) = match self.family {
            NoiseFamily::Gaussian => (-1.0, -2.0),
            NoiseFamily::StudentT { .. } => (
                self.expect(|x| self.scores(x).m_dot).value,
                self.expect(|x| x * self.scores(x).n_dot).value,
            ),
        };
        ScoreExpectations {
            m_dot,
            n_dot: 0.0,
            eps_m_dot: 0.0,
            eps_n_dot,
        }
    }

    /// Quadrature audit of the regularity functionals and sup-norm checks of
    /// the score derivatives on `[-grid_bound, grid_bound]`.
    pub fn audit_regularity(&self) -> AuditReport {
        self.audit_regularity_on(50.0, 1e-3)
    }

    pub fn audit_regularity_on(&self, grid_bound: f64, step: f64) -> AuditReport {
        const TOL: f64 = 1e-6;
        type Integrand<'a> = Box<dyn Fn(f64) -> f64 + 'a>;
        let functionals: [(&str, f64, Integrand<'_>); 5] = [
            ("E[M(e)]", 0.0, Box::new(|x| self.m(x))),
            ("E[e M(e)]", -1.0, Box::new(|x| x * self.m(x))),
            ("E[M'(e) + M(e)^2]", 0.0, Box::new(|x| {
                let s = self.scores(x);
                s.m_dot + s.m * s.m
            })),
            ("E[e (M'(e) + M(e)^2)]", 0.0, Box::new(|x| {
                let s = self.scores(x);
                x * (s.m_dot + s.m * s.m)
            })),
            ("E[e^2 (M'(e) + M(e)^2)]", 2.0, Box::new(|x| {
                let s = self.scores(x);
                x * x * (s.m_dot + s.m * s.m)
            })),
        ];
        let functionals = functionals
            .iter()
            .map(|(name, expected, g)| {
                let q = self.expect(g);
                FunctionalCheck {
                    name: (*name).to_string(),
                    value: q.value,
                    expected: *expected,
                    pass: q.converged && (q.value - expected).abs() <= TOL,
                }
            })
            .collect();

        let steps = (2.0 * grid_bound / step).round() as usize;
        let mut sup = [0.0f64; 4];
        for k in 0..=steps {
            let x = -grid_bound + k as f64 * step;
            let s = self.scores_of(Law::Raw, x);
            sup[0] = sup[0].max(s.m_dot.abs());
            sup[1] = sup[1].max(s.m_ddot.abs());
            sup[2] = sup[2].max((x * s.m_ddot).abs());
            sup[3] = sup[3].max(s.n_ddot.abs());
        }
        let bounds: [Option<f64>; 4] = match self.family {
            NoiseFamily::Gaussian => [None; 4],
            NoiseFamily::StudentT { dof } => {
                let l = dof as f64;
                [
                    Some(3.0 * (l + 1.0) / (2.0 * l)),
                    Some(4.0 * (l + 1.0) * l.sqrt() / (l * l)),
                    Some(14.0 * (l + 1.0) / l),
                    // |N''| <= 2|M'| + |x M''|
                    Some(17.0 * (l + 1.0) / l),
                ]
            }
        };
        let names = ["|M'|", "|M''|", "|x M''|", "|N''|"];
        let sup_norms = names
            .iter()
            .zip(sup.iter().zip(bounds.iter()))
            .map(|(name, (&s, &b))| SupNormCheck {
                name: (*name).to_string(),
                sup: s,
                bound: b,
                pass: s.is_finite() && b.is_none_or(|b| s <= b),
            })
            .collect();

        let mut report = AuditReport {
            noise: self.label(),
            functionals,
            sup_norms,
            grid_bound,
            grid_step: step,
            all_pass: false,
        };
        report.all_pass = report.functionals.iter().all(|c| c.pass)
            && report.sup_norms.iter().all(|c| c.pass);
        report
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalCheck {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupNormCheck {
    pub name: String,
    pub sup: f64,
    /// Closed-form bound (raw Student-t law); `None` for the Gaussian.
    pub bound: Option<f64>,
    pub pass: bool,
}

/// Regularity audit of one noise law. Reports, does not enforce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub noise: String,
    pub functionals: Vec<FunctionalCheck>,
    pub sup_norms: Vec<SupNormCheck>,
    pub grid_bound: f64,
    pub grid_step: f64,
    pub all_pass: bool,
}

/// Both sides of `(a + b)^xi <= 2^(xi - 1) (a^xi + b^xi)` for `a, b >= 0`,
/// `xi >= 1`.
pub fn power_mean_bound(a: f64, b: f64, xi: f64) -> (f64, f64) {
    ((a + b).powf(xi), 2f64.powf(xi - 1.0) * (a.powf(xi) + b.powf(xi)))
}
