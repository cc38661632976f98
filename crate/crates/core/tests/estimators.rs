use crt_prune::estimators::{
    gate, kolmogorov_q, ks_two_sample, mc_laplace, mc_laplace_sharded, merge_all, weighted_line, MeanAccumulator,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn exp_samples(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Exp::new(1.0).unwrap().sample(&mut rng)).collect()
}

#[test]
fn exponential_laplace_transform() {
    let s: Vec<(f64, bool)> = exp_samples(1, 50_000).into_iter().map(|x| (x, false)).collect();
    for lambda in [0.5, 1.0, 3.0] {
        let e = mc_laplace(&s, lambda).unwrap();
        assert!(gate(e.mean - 1.0 / (1.0 + lambda), e.se, 4.0, 0.0), "{e:?}");
        assert_eq!(e.lower, e.upper);
    }
}

#[test]
fn censored_samples_bracket_the_estimate() {
    let s: Vec<(f64, bool)> = exp_samples(2, 1_000).into_iter().map(|x| (x.min(1.5), x > 1.5)).collect();
    let e = mc_laplace(&s, 1.0).unwrap();
    assert!(e.censored_fraction > 0.1);
    assert!(e.lower < e.mean && e.mean <= e.upper);
}

#[test]
fn sharding_does_not_change_the_estimate() {
    let s: Vec<(f64, bool)> = exp_samples(3, 10_001).into_iter().map(|x| (x, false)).collect();
    let a = mc_laplace_sharded(&s, 1.0, 1).unwrap();
    for shard in [7, 100, 4096, 20_000] {
        let b = mc_laplace_sharded(&s, 1.0, shard).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-15 && (a.se - b.se).abs() < 1e-15);
    }
}

#[test]
fn merge_is_associative() {
    let x = exp_samples(4, 3_000);
    let acc = |v: &[f64]| {
        let mut a = MeanAccumulator::default();
        for &t in v {
            a.push(t, t, false);
        }
        a
    };
    let (p, q, r) = (acc(&x[..1000]), acc(&x[1000..1700]), acc(&x[1700..]));
    let left = merge_all(&[merge_all(&[p.clone(), q.clone()]), r.clone()]).finish().unwrap();
    let right = merge_all(&[p, merge_all(&[q, r])]).finish().unwrap();
    let whole = acc(&x).finish().unwrap();
    assert!((left.mean - right.mean).abs() < 1e-14 && (left.mean - whole.mean).abs() < 1e-14);
    assert!((left.se - whole.se).abs() < 1e-14);
}

#[test]
fn ks_statistics() {
    assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-3);
    assert!((kolmogorov_q(0.5) - 0.9639).abs() < 1e-3);
    // Under the null the p-value is roughly uniform: count rejections at 5%.
    let rejections = (0..100u64)
        .filter(|&s| ks_two_sample(&exp_samples(100 + s, 500), &exp_samples(1000 + s, 500)).unwrap().1 < 0.05)
        .count();
    assert!(rejections <= 13, "{rejections}");
    let shifted: Vec<f64> = exp_samples(5, 2000).iter().map(|x| x + 0.2).collect();
    assert!(ks_two_sample(&exp_samples(6, 2000), &shifted).unwrap().1 < 1e-6);
}

#[test]
fn ks_handles_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a: Vec<f64> = (0..1000).map(|_| rng.random_range(0..5) as f64).collect();
    let (d, p) = ks_two_sample(&a, &a).unwrap();
    assert_eq!(d, 0.0);
    assert!(p > 0.99);
}

#[test]
fn weighted_line_recovers_a_line() {
    let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let y: Vec<f64> = x.iter().map(|x| 2.0 - 0.5 * x).collect();
    let (a, b, _) = weighted_line(&x, &y, &vec![0.1; 10]).unwrap();
    assert!((a - 2.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
}
