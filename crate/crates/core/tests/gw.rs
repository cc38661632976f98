use crt_prune::gw::{self, DiscreteMarking, DiscreteTree, OffspringLaw};
use proptest::prelude::*;

#[test]
fn plane_trees_are_counted_by_catalan_numbers() {
    let catalan = [1, 1, 2, 5, 14, 42, 132, 429, 1430];
    for (n, &c) in catalan.iter().enumerate() {
        let trees = gw::plane_trees(n + 1);
        assert_eq!(trees.len(), c);
        for t in trees {
            assert!(DiscreteTree::from_offspring(t).is_ok());
        }
    }
}

#[test]
fn dump_round_trips() {
    for text in ["n", "N", "n(n,n)", "N(~n(N,n),n)", "n(~n,~N(n))"] {
        let t: DiscreteTree = text.parse().unwrap();
        assert_eq!(t.to_string(), text);
    }
    for bad in ["", "x", "n(", "n()", "~n", "n(n,)"] {
        assert!(bad.parse::<DiscreteTree>().is_err(), "{bad}");
    }
}

#[test]
fn marked_root_keeps_only_itself() {
    let t: DiscreteTree = "N(n(n),n)".parse().unwrap();
    assert_eq!(gw::prune_indices(&t), vec![0]);
    let t: DiscreteTree = "n(~n(n),N(n))".parse().unwrap();
    assert_eq!(gw::prune(&t).to_string(), "n(N)");
}

#[test]
fn oracle_is_a_law_and_trivial_without_marks() {
    let law = OffspringLaw::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
    let none = gw::pruned_offspring_oracle(&law, &DiscreteMarking::none()).unwrap();
    assert_eq!(none.probs(), law.probs());
    let m = DiscreteMarking { node: vec![0.0, 0.1, 0.2, 0.3], threshold: 0, edge: 0.25 };
    let o = gw::pruned_offspring_oracle(&law, &m).unwrap();
    assert!((o.probs().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    assert!(o.mean() < law.mean());
}

#[test]
fn sampled_offspring_follow_the_law() {
    let law = OffspringLaw::new(vec![0.5, 0.25, 0.15, 0.1]).unwrap();
    let n = 40_000;
    let mut counts = [0f64; 4];
    for i in 0..n {
        let t = gw::sample_tree(&law, 3, i, 100_000).unwrap();
        counts[t.offspring()[0] as usize] += 1.0;
    }
    // Chi-square with 3 degrees of freedom; 16.27 is the 0.999 quantile.
    let chi2: f64 = law.probs().iter().zip(&counts).map(|(p, c)| (c - p * n as f64).powi(2) / (p * n as f64)).sum();
    assert!(chi2 < 16.27, "chi2 = {chi2}");
}

#[test]
fn supercritical_and_broken_laws_are_refused() {
    assert!(OffspringLaw::new(vec![0.2, 0.2, 0.6]).is_err());
    assert!(OffspringLaw::new(vec![0.5, 0.4]).is_err());
    assert!(OffspringLaw::new(vec![-0.1, 1.1]).is_err());
}

fn trees() -> impl Strategy<Value = DiscreteTree> {
    (1usize..9, any::<u64>(), any::<u64>()).prop_map(|(n, pick, marks)| {
        let all = gw::plane_trees(n);
        let t = DiscreteTree::from_offspring(all[(pick % all.len() as u64) as usize].clone()).unwrap();
        let node = (0..n).map(|i| marks >> i & 1 == 1).collect();
        let edge = (0..n).map(|i| i > 0 && marks >> (32 + i) & 1 == 1).collect();
        t.with_marks(node, edge).unwrap()
    })
}

proptest! {
    #[test]
    fn pruning_shrinks_and_is_idempotent(t in trees()) {
        let p = gw::prune(&t);
        prop_assert!(p.len() <= t.len());
        prop_assert_eq!(gw::prune_indices(&t), gw::prune_indices_by_ancestor_scan(&t));
        let again = gw::prune(&p);
        prop_assert_eq!(again.offspring(), p.offspring());
        prop_assert_eq!(p.to_string().parse::<DiscreteTree>().unwrap(), p);
    }
}
