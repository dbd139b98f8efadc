//! Empirical size over several levels and a Kolmogorov-Smirnov check of
//! `V / tau` against the standard normal.

use lantest::estimate::ConstantsMode;
use lantest::mc::{run_size_experiment, ExperimentConfig};
use lantest::score::NoiseSpec;
use lantest::stats::ks_test_normal;
use lantest::tsmodel::{LocalAlternative, ModelSpec};

fn main() -> lantest::Result<()> {
    let mut cfg = ExperimentConfig::new(
        ModelSpec::ar(vec![0.2, 0.2])?,
        NoiseSpec::student_t(6)?,
        LocalAlternative::ex3(1.0),
    );
    cfg.n_list = vec![2000];
    cfg.a_grid = vec![0.0];
    cfg.replicates = 2000;
    cfg.constants_mode = ConstantsMode::Analytic { n_aux: 200_000 };
    for alpha in [0.01, 0.05, 0.10, 0.50] {
        cfg.alpha = alpha;
        let res = run_size_experiment(&cfg)?;
        let row = &res.rows[0];
        println!("alpha={alpha:<5} size={:.4}", row.rejection_rate);
        if alpha == 0.05 {
            let stats: Vec<f64> = res.records.iter().map(|r| r.statistic).collect();
            let ks = ks_test_normal(&stats);
            println!("KS D={:.4} p={:.3}", ks.statistic, ks.p_value);
        }
    }
    Ok(())
}
