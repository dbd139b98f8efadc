//! Empirical power of the test next to both analytic curves.

use lantest::estimate::ConstantsMode;
use lantest::mc::{run_power_experiment, EstimatorPolicy, ExperimentConfig};
use lantest::score::NoiseSpec;
use lantest::tsmodel::{LocalAlternative, ModelSpec};

fn main() -> lantest::Result<()> {
    let mut cfg = ExperimentConfig::new(ModelSpec::ar(vec![0.1])?, NoiseSpec::gaussian(), LocalAlternative::ex1(1.0));
    cfg.n_list = vec![80, 1000];
    cfg.a_grid = vec![0.1, 0.2, 0.3, 0.4, 0.5];
    cfg.replicates = 2000;
    cfg.policies = vec![EstimatorPolicy::TrueParam, EstimatorPolicy::Mde];
    cfg.constants_mode = ConstantsMode::Analytic { n_aux: 200_000 };
    cfg.seed = 2024;

    let res = run_power_experiment(&cfg)?;
    println!("config {}", &res.config_hash[..12]);
    println!("{:>5} {:>5} {:<11} {:>8} {:>8} {:>8}", "n", "a", "policy", "rate", "lecam", "tau2-form");
    for r in &res.rows {
        println!(
            "{:>5} {:>5.2} {:<11} {:>8.4} {:>8.4} {:>8.4}",
            r.n,
            r.a,
            r.policy.label(),
            r.rejection_rate,
            r.analytic_power_lecam,
            r.analytic_power_paper
        );
    }
    Ok(())
}
