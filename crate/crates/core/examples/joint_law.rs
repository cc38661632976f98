//! Joint law of (σ, A_σ) on a (γ, κ) grid.

use crt_prune::estimators::{check_joint_length, CheckSettings};
use crt_prune::mechanism::{catalog, MarkingSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = [(0.5, 0.0), (0.5, 1.0), (1.0, 0.0), (1.0, 4.0)];
    let settings = CheckSettings { n: 5_000, dt: 1e-3, ..CheckSettings::default() };
    let reports = check_joint_length(&catalog::quadratic(), &MarkingSpec::skeleton(1.0), &grid, &settings)?;
    for r in reports {
        println!("{:<20} {:.5} vs {:.5}  z {:+.2}", r.label, r.estimate, r.analytic, r.z);
    }
    Ok(())
}
