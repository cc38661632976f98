//! Standing-assumption diagnostics for every catalog mechanism × marking.

use crt_prune::mechanism::{catalog, validate};
use crt_prune::SimMode;

fn main() {
    for (mname, mech) in catalog::mechanisms() {
        for (kname, marking) in catalog::markings() {
            let d = validate(&mech, &marking);
            let status = |mode| if d.is_ok(mode) { "ok" } else { "refused" };
            println!(
                "{mname:<28} {kname:<16} continuum: {:<8} discrete: {}",
                status(SimMode::Continuum),
                status(SimMode::Discrete)
            );
            for f in d.failures(SimMode::Discrete) {
                println!("    {}: {}", f.check, f.message);
            }
        }
    }
}
