//! Marked Galton–Watson trees: sampling, marking, pruning, the exact law of
//! the pruned root degree, and the text dump format.

use crt_prune::gw::{self, DiscreteMarking, DiscreteTree, OffspringLaw};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let law = OffspringLaw::new(vec![0.5, 0.25, 0.1, 0.1, 0.05])?;
    let marking = DiscreteMarking { node: vec![0.0, 0.0, 0.5, 0.5, 0.5], threshold: 2, edge: 0.2 };

    for i in 0..5 {
        let tree = gw::mark(&gw::sample_tree(&law, 1, i, 1_000_000)?, &marking, 1, i)?;
        let pruned = gw::prune(&tree);
        println!("{tree}  ->  {pruned}  ({} -> {} nodes)", tree.len(), pruned.len());
    }

    let t: DiscreteTree = "N(n,~n(n),n)".parse()?;
    println!("parsed {t}: kept {:?}", gw::prune_indices(&t));

    let oracle = gw::pruned_offspring_oracle(&law, &marking)?;
    let n = 100_000u64;
    let mut counts = vec![0u64; law.max_offspring() + 1];
    for i in 0..n {
        let tree = gw::mark(&gw::sample_tree(&law, 2, i, 1_000_000)?, &marking, 2, i)?;
        counts[gw::prune(&tree).offspring()[0] as usize] += 1;
    }
    for (k, (p, c)) in oracle.probs().iter().zip(&counts).enumerate() {
        println!("k={k}: oracle {p:.5}, observed {:.5}", *c as f64 / n as f64);
    }
    Ok(())
}
