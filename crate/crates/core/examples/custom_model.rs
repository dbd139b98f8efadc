//! A user-defined conditionally heteroscedastic model with scale parameters,
//! tested against an alternative that moves both mean and scale.

use std::sync::Arc;

use lantest::estimate::ConstantsMode;
use lantest::mc::{run_power_experiment, EstimatorPolicy, ExperimentConfig};
use lantest::score::NoiseSpec;
use lantest::tsmodel::{CustomModel, DirectionShape, LocalAlternative, ModelSpec, Params};

/// `Y_i = rho Y_{i-1} + sqrt(w + b Y_{i-1}^2) eps_i`
#[derive(Debug)]
struct Arch;

impl CustomModel for Arch {
    fn name(&self) -> String {
        "arch".into()
    }
    fn mean(&self, rho: &[f64], z: &[f64]) -> f64 {
        rho[0] * z[0]
    }
    fn mean_grad(&self, _rho: &[f64], z: &[f64], out: &mut [f64]) {
        out[0] = z[0];
    }
    fn scale(&self, theta: &[f64], z: &[f64]) -> f64 {
        (theta[0] + theta[1] * z[0] * z[0]).sqrt()
    }
    fn scale_grad(&self, theta: &[f64], z: &[f64], out: &mut [f64]) {
        let s = self.scale(theta, z);
        out[0] = 0.5 / s;
        out[1] = 0.5 * z[0] * z[0] / s;
    }
    fn check(&self, rho: &[f64], theta: &[f64]) -> lantest::Result<()> {
        if rho[0].abs() < 1.0 && theta[0] > 0.0 && (0.0..1.0).contains(&theta[1]) {
            Ok(())
        } else {
            Err(lantest::Error::InvalidArgument("need |rho| < 1, w > 0, 0 <= b < 1".into()))
        }
    }
}

#[derive(Debug)]
struct Bump;

impl DirectionShape for Bump {
    fn name(&self) -> String {
        "bump".into()
    }
    fn g(&self, z: &[f64]) -> f64 {
        (-z[0] * z[0] / 2.0).exp()
    }
    fn s(&self, z: &[f64]) -> f64 {
        z[0] * z[0] / (1.0 + z[0] * z[0])
    }
}

fn main() -> lantest::Result<()> {
    let model = ModelSpec::custom(Arc::new(Arch), Params::new(vec![0.2], vec![1.0, 0.3]), 1, 0)?;
    let mut cfg = ExperimentConfig::new(model, NoiseSpec::student_t(8)?, LocalAlternative::custom(Arc::new(Bump), 1.0));
    cfg.n_list = vec![500];
    cfg.a_grid = vec![0.5, 1.0, 2.0];
    cfg.replicates = 1000;
    cfg.policies = vec![EstimatorPolicy::TrueParam, EstimatorPolicy::Lse];
    cfg.constants_mode = ConstantsMode::Analytic { n_aux: 200_000 };

    let res = run_power_experiment(&cfg)?;
    for r in &res.rows {
        println!(
            "a={:<4} {:<10} rate={:.3} lecam={:.3} tau^2={:.3}",
            r.a,
            r.policy.label(),
            r.rejection_rate,
            r.analytic_power_lecam,
            r.tau2_hat
        );
    }
    Ok(())
}
