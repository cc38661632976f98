//! Laplace exponents of a mechanism and its pruned counterpart.
//!
//! Prints ψ, φ₁ and ψ₀ on a few points, checks ψ₀ = ψ + φ₁, inverts ψ₀, and
//! solves the joint-law equation ψ₀(v) = κ + ψ₀(γ).

use crt_prune::mechanism::{catalog, derive_pruned, solve_joint_v, validate, MarkingSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mech = catalog::stable_12_mixed();
    let marking = MarkingSpec::skeleton(0.5);
    let mech0 = derive_pruned(&mech, &marking)?;
    println!("psi0 drift {:.4}, beta {:.4}", mech0.alpha, mech0.beta);

    println!("{:>8} {:>12} {:>12} {:>12} {:>10}", "lambda", "psi", "phi1", "psi0", "rel.err");
    for lambda in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let psi = mech.psi(lambda)?;
        let phi1 = marking.phi1(&mech, lambda)?;
        let psi0 = mech0.psi(lambda)?;
        println!("{lambda:>8} {psi:>12.6} {phi1:>12.6} {psi0:>12.6} {:>10.1e}", (psi0 - psi - phi1).abs() / psi0);
    }

    let v = 2.0;
    let x = mech0.psi_inverse(v)?;
    println!("psi0_inv({v}) = {x:.8}, psi0 of that = {:.12}", mech0.psi(x)?);
    println!("joint v(gamma=1, kappa=1) = {:.8}", solve_joint_v(&mech0, 1.0, 1.0)?);

    println!("\n{}", validate(&mech, &marking));
    Ok(())
}
