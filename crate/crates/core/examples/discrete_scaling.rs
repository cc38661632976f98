//! β = 0 with skeleton marks: only the discrete route exists. Scaled GW
//! forests at shrinking mesh approach e^{−ψ₀⁻¹(λ)}.

use crt_prune::estimators::{pruned_length_reports, simulate, CheckSettings};
use crt_prune::mechanism::{catalog, MarkingSpec};
use crt_prune::SimMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mech = catalog::unit_atom_finite_variation();
    let marking = MarkingSpec::skeleton(1.0);
    for k in 3..=6 {
        let h = 0.5f64.powi(k);
        let settings = CheckSettings { n: 10_000, mode: SimMode::Discrete, mesh: h, ..CheckSettings::default() };
        let (runs, gate) = simulate(&mech, &marking, &settings, &[], f64::INFINITY)?;
        let r = &pruned_length_reports(&mech, &marking, &[1.0], &runs, gate)?[0];
        println!("h = 2^-{k}: {:.5} vs {:.5}, error {:+.5} (se {:.5})", r.estimate, r.analytic, r.estimate - r.analytic, r.se);
    }
    Ok(())
}
