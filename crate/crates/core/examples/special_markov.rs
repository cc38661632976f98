//! Given A_σ, the pruned-away mass is a Poisson cloud of excursions, so
//! E[e^{−λ′(σ−A_σ)} | A_σ] = e^{−A_σ φ₁(ψ⁻¹(λ′))}. Checks the integrated
//! identity and the slope of the binned log-regression.

use crt_prune::estimators::{check_special_markov, CheckSettings};
use crt_prune::mechanism::{catalog, MarkingSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let settings = CheckSettings { n: 5_000, dt: 1e-3, ..CheckSettings::default() };
    let (integrated, slopes) = check_special_markov(&catalog::quadratic(), &MarkingSpec::skeleton(1.0), &[0.5, 2.0], &settings)?;
    for r in integrated {
        println!("{:<18} {:.5} vs {:.5}  z {:+.2}", r.label, r.estimate, r.analytic, r.z);
    }
    for s in slopes {
        println!("{:<18} slope {:.4} ± {:.4} vs {:.4}", s.label, s.slope, s.se, s.target);
        for b in &s.bins {
            println!("    A in [{:.3}, {:.3}): n {:>5}, log mean {:+.4}", b.lo, b.hi, b.count, b.log_mean);
        }
    }
    Ok(())
}
