//! Excursion-length law: E*_1[e^{−λσ}] against e^{−ψ⁻¹(λ)}.

use crt_prune::estimators::{check_excursion_length, CheckSettings};
use crt_prune::mechanism::catalog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let settings = CheckSettings { n: 5_000, dt: 1e-3, ..CheckSettings::default() };
    for r in check_excursion_length(&catalog::quadratic(), &[0.5, 1.0, 2.0, 4.0], &settings)? {
        println!("{:<12} {:.5} vs {:.5}  z {:+.2}  {}", r.label, r.estimate, r.analytic, r.z, if r.passed { "pass" } else { "FAIL" });
    }
    Ok(())
}
