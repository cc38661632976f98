//! One marked excursion: σ, A_σ, the pruned total-mass path and the ledger
//! of pruned-away stretches.

use crt_prune::exploration::{run_excursion, ExcursionSetup};
use crt_prune::mechanism::{catalog, MarkingSpec};
use crt_prune::pathgen::SimGrid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mech = catalog::quadratic();
    let marking = MarkingSpec::skeleton(1.0);
    let grid = SimGrid::auto(&mech, 1e-4, 1e3)?;
    let times: Vec<f64> = (1..=8).map(|i| 0.125 * i as f64).collect();
    let setup = ExcursionSetup::new(&mech, &marking, &grid, 1.0, &times)?.with_ledger_threshold(0.01);

    for index in 0..4 {
        let r = run_excursion(&setup, 3, index);
        println!(
            "excursion {index}: sigma {:.4}, A_sigma {:.4}, {} steps, {} pruned stretches > 0.01",
            r.sigma,
            r.a_sigma,
            r.steps,
            r.pruned_components.len()
        );
        let path: Vec<String> = r.pruned_mass.iter().map(|m| format!("{m:.3}")).collect();
        println!("  pruned mass at u = 0.125..1: [{}]", path.join(", "));
    }
    Ok(())
}
