//! A marked Lévy path and its first passages.

use crt_prune::mechanism::{catalog, MarkFunction, MarkingSpec};
use crt_prune::pathgen::{sample_path, SimGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mech = catalog::two_atoms();
    let marking = MarkingSpec { mark: MarkFunction::Threshold { a: 1.0 }, alpha1: 0.0 };
    let grid = SimGrid::auto(&mech, 1e-3, 5.0)?;
    let path = sample_path(&mech, &marking, &grid, 7, 0, false)?;

    println!("{} grid points, {} jumps on [0, {}]", path.times.len(), path.jumps.len(), path.horizon());
    for j in path.jumps.iter().take(8) {
        println!("  jump at {:.4}: size {:.3}{}", j.time, j.size, if j.node_marked { " (marked)" } else { "" });
    }
    println!("marked jumps: {}", path.marked_jumps().count());
    for level in [0.5, 1.0, 2.0] {
        let fp = path.first_passage(level);
        println!("T_{level} = {:.4}{}", fp.time(), if fp.is_censored() { " (censored)" } else { "" });
    }

    // Binary dump round trip.
    let mut buf = Vec::new();
    path.write_dump(42, &mut buf)?;
    let (back, hash) = crt_prune::pathgen::PathSample::read_dump(buf.as_slice())?;
    println!("dump: {} bytes, hash {hash}, identical {}", buf.len(), back == path);
    Ok(())
}
