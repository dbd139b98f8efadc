//! Log-likelihood ratio against `V - tau^2 / 2` on single paths of growing
//! length.

use lantest::lan::{lan_report, tau_squared, TauExpectations};
use lantest::rng::stream;
use lantest::score::NoiseSpec;
use lantest::tsmodel::{simulate_null, LocalAlternative, ModelSpec};

fn main() -> lantest::Result<()> {
    let model = ModelSpec::ar(vec![0.1])?;
    let noise = NoiseSpec::gaussian();
    let alt = LocalAlternative::ex1(0.5);

    let aux = simulate_null(&model, &noise, 500_000, 500, &mut stream(99))?;
    let exps = TauExpectations::from_path(&aux, &model, &alt, model.params())?;
    let tau2 = tau_squared(&alt, &noise.moments(), &exps)?;
    println!("tau^2 = {tau2:.5}");

    println!("{:>6} {:>10} {:>10} {:>10} {:>10} {:>10}", "n", "Lambda", "V", "residual", "c1", "c2");
    for n in [250, 1000, 4000, 16000] {
        let path = simulate_null(&model, &noise, n, 500, &mut stream(n as u64))?;
        let r = lan_report(&path, &model, &alt, &noise, tau2)?;
        println!(
            "{n:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            r.lambda, r.v, r.lan_residual, r.c1, r.c2
        );
    }
    Ok(())
}
