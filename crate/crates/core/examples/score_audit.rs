//! Score functionals and sup-norm bounds for the two noise families.
//!
//! Run with `cargo run --example score_audit`.

use lantest::score::NoiseSpec;

fn main() -> lantest::Result<()> {
    for noise in [NoiseSpec::gaussian(), NoiseSpec::student_t(5)?, NoiseSpec::student_t(12)?] {
        let m = noise.moments();
        println!("{}", noise.label());
        println!("  I0={:.6} I1={:.2e} I2={:.6} K0={:.2e} K1={:.6}", m.i0, m.i1, m.i2, m.k0, m.k1);
        let report = noise.audit_regularity();
        for f in &report.functionals {
            println!("  {:<26} {:>12.3e} (expected {})", f.name, f.value, f.expected);
        }
        for s in &report.sup_norms {
            match s.bound {
                Some(b) => println!("  sup {:<22} {:>10.4} <= {:.4}", s.name, s.sup, b),
                None => println!("  sup {:<22} {:>10.4}", s.name, s.sup),
            }
        }
        println!("  all checks pass: {}", report.all_pass);
    }
    Ok(())
}
