//! Discretised paths of the spectrally positive Lévy process with Laplace
//! exponent ψ, i.e. `E[e^{-λX_t}] = e^{tψ(λ)}`.
//!
//! Jumps of size at least `ε` arrive as a compound Poisson process at their
//! exact times. Between jumps the process moves as a Brownian motion with
//! variance rate `2β` (plus `∫_{(0,ε)} ℓ² π(dℓ)` under
//! [`SmallJumpPolicy::GaussianMatch`]) and drift `−(α + ∫_{[ε,∞)} ℓ π(dℓ))`,
//! which compensates the large jumps.

use std::io::{self, Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanism::{BranchingMechanism, LevyMeasure, MarkFunction, MarkingSpec, MechanismError};
use crate::streams::{stream, Purpose, StreamRng};

#[derive(Debug, Error)]
pub enum PathError {
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("invalid simulation grid: {0}")]
    Grid(String),
    #[error("mechanism has finite variation; continuum paths need β > 0 or ∫_(0,1) ℓπ = ∞")]
    FiniteVariation,
    #[error("malformed path dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, PathError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallJumpPolicy {
    Drop,
    #[default]
    GaussianMatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub dt: f64,
    pub horizon: f64,
    /// Jumps below this size are replaced according to `small_jump_policy`.
    pub jump_cutoff: f64,
    pub small_jump_policy: SmallJumpPolicy,
}

/// Upper bound on the large-jump rate chosen by [`SimGrid::auto`].
pub const MAX_AUTO_JUMP_RATE: f64 = 2.0e3;

/// Target ratio `∫_{(0,ε)}ℓ²π / (2β + ∫(ℓ∧ℓ²)π)` for the automatic cutoff.
pub const AUTO_SMALL_JUMP_RATIO: f64 = 1e-4;

impl SimGrid {
    pub fn new(dt: f64, horizon: f64, jump_cutoff: f64, small_jump_policy: SmallJumpPolicy) -> Result<Self> {
        let grid = SimGrid { dt, horizon, jump_cutoff, small_jump_policy };
        grid.check()?;
        Ok(grid)
    }

    /// Grid with the cutoff chosen so that the Gaussian-matched small jumps
    /// carry at most [`AUTO_SMALL_JUMP_RATIO`] of the second-moment budget,
    /// unless that would push the large-jump rate above
    /// [`MAX_AUTO_JUMP_RATE`].
    pub fn auto(mech: &BranchingMechanism, dt: f64, horizon: f64) -> Result<Self> {
        let cutoff = match &mech.levy {
            LevyMeasure::Zero => 1.0,
            LevyMeasure::FiniteAtoms { atoms } => atoms.iter().map(|a| a.size).fold(f64::INFINITY, f64::min),
            _ => {
                let budget =
                    AUTO_SMALL_JUMP_RATIO * (2.0 * mech.beta + mech.levy.moment_condition()?);
                // Largest ε meeting the budget, then shrink no further than the rate cap allows.
                let (mut lo, mut hi) = (-40.0f64, 5.0f64);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if mech.levy.second_moment_below(mid.exp())? <= budget {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let eps_budget = lo.exp();
                if mech.levy.mass_above(eps_budget)? <= MAX_AUTO_JUMP_RATE {
                    eps_budget
                } else {
                    let (mut lo, mut hi) = (lo, 5.0f64);
                    for _ in 0..100 {
                        let mid = 0.5 * (lo + hi);
                        if mech.levy.mass_above(mid.exp())? > MAX_AUTO_JUMP_RATE {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    hi.exp()
                }
            }
        };
        SimGrid::new(dt, horizon, cutoff, SmallJumpPolicy::GaussianMatch)
    }

    pub fn steps(&self) -> Result<usize> {
        let n = (self.horizon / self.dt).ceil();
        if n > 2e9 {
            return Err(PathError::Grid(format!("horizon/dt = {n} steps overflows the step budget")));
        }
        Ok(n as usize)
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.jump_cutoff > 0.0 && self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(PathError::Grid(format!(
                "need dt > 0, ε > 0, finite horizon ≥ dt (dt = {}, ε = {}, horizon = {})",
                self.dt, self.jump_cutoff, self.horizon
            )));
        }
        Ok(())
    }
}

/// Size sampler for the normalised restriction of π to `[ε, ∞)`.
#[derive(Clone, Debug)]
enum SizeSampler {
    Empty,
    Atoms { sizes: Vec<f64>, cumulative: Vec<f64> },
    Pieces { pieces: Vec<(f64, f64, f64)>, cumulative: Vec<f64> },
    Thinned { base: Box<SizeSampler>, removed: MarkFunction },
}

impl SizeSampler {
    fn new(levy: &LevyMeasure, eps: f64) -> Result<Self> {
        Ok(match levy {
            LevyMeasure::Zero => SizeSampler::Empty,
            LevyMeasure::FiniteAtoms { atoms } => {
                let kept: Vec<_> = atoms.iter().filter(|a| a.size >= eps).collect();
                if kept.is_empty() {
                    SizeSampler::Empty
                } else {
                    let mut acc = 0.0;
                    let cumulative = kept.iter().map(|a| {
                        acc += a.weight;
                        acc
                    });
                    SizeSampler::Atoms {
                        cumulative: cumulative.collect(),
                        sizes: kept.iter().map(|a| a.size).collect(),
                    }
                }
            }
            LevyMeasure::Thinned { base, removed } => {
                SizeSampler::Thinned { base: Box::new(SizeSampler::new(base, eps)?), removed: removed.clone() }
            }
            continuous => {
                let pieces = continuous.pieces().expect("continuous measure");
                let mut out = Vec::new();
                let mut cumulative = Vec::new();
                let mut acc = 0.0;
                for p in pieces.iter().filter(|p| p.hi > eps) {
                    let a = p.lo.max(eps);
                    let mass = p.moment(0.0, a, p.hi);
                    if !(mass.is_finite()) {
                        return Err(PathError::Mechanism(MechanismError::Divergent {
                            condition: "π([ε,∞)) < ∞",
                        }));
                    }
                    acc += mass;
                    cumulative.push(acc);
                    out.push((a, p.hi, p.exponent + 1.0));
                }
                SizeSampler::Pieces { pieces: out, cumulative }
            }
        })
    }

    fn sample(&self, rng: &mut StreamRng) -> f64 {
        match self {
            SizeSampler::Empty => unreachable!("no jumps to sample"),
            SizeSampler::Atoms { sizes, cumulative } => {
                let u = rng.random::<f64>() * cumulative[cumulative.len() - 1];
                let i = cumulative.partition_point(|&c| c <= u).min(sizes.len() - 1);
                sizes[i]
            }
            SizeSampler::Pieces { pieces, cumulative } => {
                let u = rng.random::<f64>() * cumulative[cumulative.len() - 1];
                let i = cumulative.partition_point(|&c| c <= u).min(pieces.len() - 1);
                let (a, b, p) = pieces[i];
                let v: f64 = rng.random();
                if p.abs() < 1e-12 {
                    a * (b / a).powf(v)
                } else {
                    let ap = a.powf(p);
                    let bp = if b.is_infinite() { 0.0 } else { b.powf(p) };
                    (ap + v * (bp - ap)).powf(1.0 / p)
                }
            }
            SizeSampler::Thinned { base, removed } => loop {
                let size = base.sample(rng);
                if rng.random::<f64>() >= removed.eval(size) {
                    return size;
                }
            },
        }
    }
}

/// Increment law of the discretised process; shared by path sampling and
/// the exploration driver.
#[derive(Clone, Debug)]
pub struct LevyIncrements {
    /// Downward drift rate `α + ∫_{[ε,∞)} ℓ π(dℓ)`.
    pub drift: f64,
    /// Gaussian variance per unit time.
    pub variance_rate: f64,
    /// `π([ε, ∞))`.
    pub jump_rate: f64,
    /// `∫_{(0,ε)} ℓ² π(dℓ)`: matched under GaussianMatch, a bias bound under Drop.
    pub small_jump_second_moment: f64,
    pub policy: SmallJumpPolicy,
    sizes: SizeSampler,
    waits: Option<Exp<f64>>,
}

impl LevyIncrements {
    pub fn new(mech: &BranchingMechanism, grid: &SimGrid) -> Result<Self> {
        grid.check()?;
        let eps = grid.jump_cutoff;
        let jump_rate = mech.levy.mass_above(eps)?;
        let drift = mech.alpha + mech.levy.first_moment_above(eps)?;
        let small = mech.levy.second_moment_below(eps)?;
        let variance_rate = 2.0 * mech.beta
            + match grid.small_jump_policy {
                SmallJumpPolicy::GaussianMatch => small,
                SmallJumpPolicy::Drop => 0.0,
            };
        let sizes = if jump_rate > 0.0 { SizeSampler::new(&mech.levy, eps)? } else { SizeSampler::Empty };
        let waits = if jump_rate > 0.0 { Some(Exp::new(jump_rate).expect("positive rate")) } else { None };
        Ok(LevyIncrements {
            drift,
            variance_rate,
            jump_rate,
            small_jump_second_moment: small,
            policy: grid.small_jump_policy,
            sizes,
            waits,
        })
    }

    /// Waiting time until the next large jump (`∞` if there are none).
    #[inline]
    pub fn next_wait(&self, rng: &mut StreamRng) -> f64 {
        match &self.waits {
            Some(exp) => exp.sample(rng),
            None => f64::INFINITY,
        }
    }

    #[inline]
    pub fn jump_size(&self, rng: &mut StreamRng) -> f64 {
        self.sizes.sample(rng)
    }

    /// Continuous-part increment over `duration`.
    #[inline]
    pub fn continuous_increment(&self, duration: f64, rng: &mut StreamRng) -> f64 {
        let mean = -self.drift * duration;
        if self.variance_rate > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            mean + (self.variance_rate * duration).sqrt() * z
        } else {
            mean
        }
    }

    /// [`continuous_increment`](Self::continuous_increment) with the standard
    /// deviation `√(variance_rate · duration)` supplied by the caller.
    #[inline]
    pub fn continuous_increment_with_sd(&self, duration: f64, sd: f64, rng: &mut StreamRng) -> f64 {
        let mean = -self.drift * duration;
        if sd > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            mean + sd * z
        } else {
            mean
        }
    }

    /// Bias bound of the small-jump treatment per unit time.
    pub fn small_jump_bias(&self) -> f64 {
        match self.policy {
            SmallJumpPolicy::Drop => self.small_jump_second_moment,
            SmallJumpPolicy::GaussianMatch => 0.0,
        }
    }
}

/// Minimum of a Brownian bridge from 0 to `increment` with total variance
/// `variance`, sampled by inverting `P(min < y) = exp(−2y(y − increment)/variance)`
/// at `u = e^{−e}`; `e` is a standard exponential draw.
#[inline]
pub fn bridge_minimum(increment: f64, variance: f64, e: f64) -> f64 {
    if variance <= 0.0 {
        return increment.min(0.0);
    }
    let disc = increment * increment + 2.0 * variance * e;
    0.5 * (increment - disc.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub size: f64,
    pub node_marked: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    /// `dt`-free bound on the per-unit-time bias of dropped small jumps.
    pub small_jump_bias: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FirstPassage {
    Crossed(f64),
    Censored(f64),
}

impl FirstPassage {
    pub fn time(self) -> f64 {
        match self {
            FirstPassage::Crossed(t) | FirstPassage::Censored(t) => t,
        }
    }

    pub fn is_censored(self) -> bool {
        matches!(self, FirstPassage::Censored(_))
    }
}

/// Samples one path on the uniform grid. Deterministic in `(seed, path_index)`.
///
/// Finite-variation mechanisms are refused unless `allow_finite_variation`
/// is set (test mode).
pub fn sample_path(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    grid: &SimGrid,
    seed: u64,
    path_index: u64,
    allow_finite_variation: bool,
) -> Result<PathSample> {
    if !allow_finite_variation && !mech.is_infinite_variation() {
        return Err(PathError::FiniteVariation);
    }
    let inc = LevyIncrements::new(mech, grid)?;
    let steps = grid.steps()?;
    let mut rng = stream(seed, Purpose::Path, path_index);
    let mut mark_rng = stream(seed, Purpose::Marks, path_index);

    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut jumps = Vec::new();
    times.push(0.0);
    values.push(0.0);
    let mut x = 0.0;
    let mut t = 0.0;
    let mut next_jump = inc.next_wait(&mut rng);
    for k in 0..steps {
        let t_end = (grid.dt * (k + 1) as f64).min(grid.horizon);
        while next_jump <= t_end {
            x += inc.continuous_increment(next_jump - t, &mut rng);
            let size = inc.jump_size(&mut rng);
            let node_marked = mark_rng.random::<f64>() < marking.mark.eval(size);
            x += size;
            jumps.push(JumpEvent { time: next_jump, size, node_marked });
            t = next_jump;
            next_jump += inc.next_wait(&mut rng);
        }
        x += inc.continuous_increment(t_end - t, &mut rng);
        t = t_end;
        times.push(t);
        values.push(x);
    }
    Ok(PathSample { times, values, jumps, small_jump_bias: inc.small_jump_bias() })
}

impl PathSample {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Visits the piecewise-linear reconstruction as `(t0, x0, t1, x1)`
    /// segments of continuous motion; jumps sit between consecutive segments.
    fn for_each_segment(&self, mut f: impl FnMut(f64, f64, f64, f64) -> bool) {
        let mut j = 0;
        for k in 0..self.times.len().saturating_sub(1) {
            let (t0, t1) = (self.times[k], self.times[k + 1]);
            let first = j;
            while j < self.jumps.len() && self.jumps[j].time <= t1 {
                j += 1;
            }
            let in_step = &self.jumps[first..j];
            let jump_total: f64 = in_step.iter().map(|e| e.size).sum();
            let rate = if t1 > t0 { (self.values[k + 1] - self.values[k] - jump_total) / (t1 - t0) } else { 0.0 };
            let (mut s, mut x) = (t0, self.values[k]);
            for e in in_step {
                let x_end = x + rate * (e.time - s);
                if !f(s, x, e.time, x_end) {
                    return;
                }
                s = e.time;
                x = x_end + e.size;
            }
            if !f(s, x, t1, self.values[k + 1]) {
                return;
            }
        }
    }

    /// First time the path reaches `−level`, interpolating linearly within a
    /// step. Spectrally positive paths only cross downward continuously.
    pub fn first_passage(&self, level: f64) -> FirstPassage {
        let target = -level;
        if self.values.first().is_some_and(|&x| x <= target) {
            return FirstPassage::Crossed(self.times[0]);
        }
        let mut hit = None;
        self.for_each_segment(|t0, x0, t1, x1| {
            if x1 <= target {
                let frac = if x0 > x1 { (x0 - target) / (x0 - x1) } else { 1.0 };
                hit = Some(t0 + frac * (t1 - t0));
                false
            } else {
                true
            }
        });
        match hit {
            Some(t) => FirstPassage::Crossed(t),
            None => FirstPassage::Censored(self.horizon()),
        }
    }

    /// Running infimum `I_t` at the grid times, including pre-jump minima.
    pub fn infimum_process(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.times.len());
        let Some(&first) = self.values.first() else {
            return out;
        };
        let mut inf = first;
        out.push(inf);
        let mut k = 1;
        self.for_each_segment(|_, x0, t1, x1| {
            inf = inf.min(x0).min(x1);
            if k < self.times.len() && t1 == self.times[k] {
                out.push(inf);
                k += 1;
            }
            true
        });
        out
    }

    pub fn marked_jumps(&self) -> impl Iterator<Item = &JumpEvent> {
        self.jumps.iter().filter(|e| e.node_marked)
    }

    // Dump layout (all little-endian):
    //   magic "CRTPATH1" | config_hash u64 | n_points u64 | n_jumps u64
    //   | small_jump_bias f64 | n_points × (t f64, x f64)
    //   | n_jumps × (time f64, size f64, marked u8)
    pub const DUMP_MAGIC: [u8; 8] = *b"CRTPATH1";

    pub fn write_dump<W: Write>(&self, config_hash: u64, mut w: W) -> Result<()> {
        w.write_all(&Self::DUMP_MAGIC)?;
        w.write_all(&config_hash.to_le_bytes())?;
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        w.write_all(&(self.jumps.len() as u64).to_le_bytes())?;
        w.write_all(&self.small_jump_bias.to_le_bytes())?;
        for (t, x) in self.times.iter().zip(&self.values) {
            w.write_all(&t.to_le_bytes())?;
            w.write_all(&x.to_le_bytes())?;
        }
        for e in &self.jumps {
            w.write_all(&e.time.to_le_bytes())?;
            w.write_all(&e.size.to_le_bytes())?;
            w.write_all(&[e.node_marked as u8])?;
        }
        Ok(())
    }

    /// Returns the path and the config hash stored in its header.
    pub fn read_dump<R: Read>(mut r: R) -> Result<(Self, u64)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != Self::DUMP_MAGIC {
            return Err(PathError::Dump("bad magic".into()));
        }
        let mut u = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u)?;
            Ok(u64::from_le_bytes(u))
        };
        let hash = read_u64(&mut r)?;
        let n_points = read_u64(&mut r)? as usize;
        let n_jumps = read_u64(&mut r)? as usize;
        let read_f64 = |r: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let small_jump_bias = read_f64(&mut r)?;
        let mut times = Vec::with_capacity(n_points);
        let mut values = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            times.push(read_f64(&mut r)?);
            values.push(read_f64(&mut r)?);
        }
        let mut jumps = Vec::with_capacity(n_jumps);
        for _ in 0..n_jumps {
            let time = read_f64(&mut r)?;
            let size = read_f64(&mut r)?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            if flag[0] > 1 {
                return Err(PathError::Dump(format!("mark flag {} not 0/1", flag[0])));
            }
            jumps.push(JumpEvent { time, size, node_marked: flag[0] == 1 });
        }
        Ok((PathSample { times, values, jumps, small_jump_bias }, hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{catalog, JumpAtom};

    fn drift_only() -> BranchingMechanism {
        BranchingMechanism { alpha: 1.0, beta: 0.0, levy: LevyMeasure::Zero }
    }

    #[test]
    fn deterministic_drift() {
        let grid = SimGrid::new(0.01, 3.0, 1.0, SmallJumpPolicy::Drop).unwrap();
        let p = sample_path(&drift_only(), &MarkingSpec::none(), &grid, 1, 0, true).unwrap();
        for (t, x) in p.times.iter().zip(&p.values) {
            assert!((x + t).abs() < 1e-12);
        }
        match p.first_passage(2.0) {
            FirstPassage::Crossed(t) => assert!((t - 2.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        assert!(p.first_passage(5.0).is_censored());
        assert_eq!(p.infimum_process(), p.values);
    }

    #[test]
    fn finite_variation_refused_outside_test_mode() {
        let grid = SimGrid::new(0.01, 1.0, 1.0, SmallJumpPolicy::Drop).unwrap();
        assert!(matches!(
            sample_path(&drift_only(), &MarkingSpec::none(), &grid, 1, 0, false),
            Err(PathError::FiniteVariation)
        ));
    }

    #[test]
    fn single_jump_flattens_infimum() {
        let path = PathSample {
            times: vec![0.0, 1.0, 2.0, 3.0],
            values: vec![0.0, -1.0, 1.0, 0.5],
            jumps: vec![JumpEvent { time: 1.5, size: 2.5, node_marked: false }],
            small_jump_bias: 0.0,
        };
        let inf = path.infimum_process();
        // Continuous part on [1,2] has slope -0.5, so the pre-jump minimum is -1.25.
        assert_eq!(inf, vec![0.0, -1.0, -1.25, -1.25]);
        for (i, x) in inf.iter().zip(&path.values) {
            assert!(i <= x);
        }
    }

    #[test]
    fn paths_are_reproducible() {
        let mech = catalog::two_atoms();
        let grid = SimGrid::auto(&mech, 0.01, 2.0).unwrap();
        let marking = MarkingSpec { mark: MarkFunction::Constant { q: 0.5 }, alpha1: 0.0 };
        let a = sample_path(&mech, &marking, &grid, 9, 4, false).unwrap();
        let b = sample_path(&mech, &marking, &grid, 9, 4, false).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&mech, &marking, &grid, 9, 5, false).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn auto_cutoff_for_atoms_keeps_every_jump() {
        let grid = SimGrid::auto(&catalog::two_atoms(), 0.01, 1.0).unwrap();
        assert_eq!(grid.jump_cutoff, 0.5);
        let inc = LevyIncrements::new(&catalog::two_atoms(), &grid).unwrap();
        assert_eq!(inc.jump_rate, 2.5);
        assert_eq!(inc.small_jump_second_moment, 0.0);
    }

    #[test]
    fn stable_cutoff_respects_rate_cap() {
        let mech = catalog::stable_15();
        let grid = SimGrid::auto(&mech, 1e-3, 1.0).unwrap();
        let rate = mech.levy.mass_above(grid.jump_cutoff).unwrap();
        assert!(rate <= MAX_AUTO_JUMP_RATE * (1.0 + 1e-9));
    }

    #[test]
    fn dump_round_trip() {
        let mech = BranchingMechanism {
            alpha: 0.0,
            beta: 1.0,
            levy: LevyMeasure::FiniteAtoms { atoms: vec![JumpAtom { size: 1.0, weight: 3.0 }] },
        };
        let grid = SimGrid::auto(&mech, 0.05, 2.0).unwrap();
        let marking = MarkingSpec { mark: MarkFunction::Constant { q: 0.5 }, alpha1: 0.0 };
        let p = sample_path(&mech, &marking, &grid, 3, 1, false).unwrap();
        let mut buf = Vec::new();
        p.write_dump(0xABCD, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"CRTPATH1");
        assert_eq!(buf.len(), 40 + 16 * p.times.len() + 17 * p.jumps.len());
        let (q, hash) = PathSample::read_dump(&buf[..]).unwrap();
        assert_eq!(hash, 0xABCD);
        assert_eq!(p, q);
        assert!(PathSample::read_dump(&b"NOTAPATH"[..]).is_err());
    }

    #[test]
    fn bridge_minimum_bounds() {
        for &e in &[1e-9, 0.3, 20.0] {
            for &g in &[-1.0, 0.0, 2.0] {
                let m = bridge_minimum(g, 0.5, e);
                assert!(m <= g.min(0.0) + 1e-15);
            }
        }
        assert_eq!(bridge_minimum(-0.5, 0.0, 0.5), -0.5);
    }
}
