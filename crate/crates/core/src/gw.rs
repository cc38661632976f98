//! Galton–Watson trees with node and edge marks.
//!
//! Trees are stored in depth-first (preorder) order as offspring counts; the
//! Lukasiewicz walk `W_{n+1} = W_n + k_n − 1` first hits `−1` exactly at the
//! last node. A marked node survives pruning but its strict descendants do
//! not; a marked edge removes the node below it together with its subtree.
//!
//! [`scaled_run`] explores a forest of GW trees whose Lukasiewicz walk,
//! rescaled by a [`DiscretizationMap`], approximates the Lévy process with
//! mechanism ψ. Edge marks are placed per generation with probability
//! `1 − e^{−α₁h}`, which is how skeleton marks are handled when `β = 0`.
//!
//! Tree dump grammar (whitespace-free):
//!
//! ```text
//! tree  := node
//! node  := ("n" | "N") ["(" child ("," child)* ")"]
//! child := ["~"] node
//! ```
//!
//! `N` is a marked node, `~` marks the edge to the parent.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::exploration::MarkedExcursionReport;
use crate::mechanism::{BranchingMechanism, LevyMeasure, MarkingSpec, MechanismError};
use crate::streams::{stream, Purpose, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GwError {
    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),
    #[error("tree exceeded the size cap of {cap} nodes")]
    Censored { cap: usize },
    #[error("enumeration needs K ≤ {max}, got {k}")]
    TooLarge { k: usize, max: usize },
    #[error("no default discretization: {0}")]
    Unsupported(String),
    #[error("malformed tree: {0}")]
    Parse(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

pub type Result<T> = std::result::Result<T, GwError>;

/// Largest `K` accepted by [`pruned_offspring_oracle`].
pub const ORACLE_MAX_K: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct OffspringLaw {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl OffspringLaw {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(GwError::InvalidLaw("no probabilities".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(GwError::InvalidLaw(format!("probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(GwError::InvalidLaw(format!("probabilities sum to {total}")));
        }
        let law = Self::unchecked(probs);
        if law.mean() > 1.0 + 1e-12 {
            return Err(GwError::InvalidLaw(format!("supercritical mean {}", law.mean())));
        }
        Ok(law)
    }

    fn unchecked(probs: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        OffspringLaw { probs, cumulative }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_offspring(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn sample(&self, rng: &mut StreamRng) -> usize {
        let u = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative.partition_point(|&c| c <= u).min(self.probs.len() - 1)
    }
}

/// Node marks `p̂(k)` for nodes with `k ≥ threshold` children, and the edge
/// mark probability.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMarking {
    /// `p̂(k)` indexed by `k`; zero beyond the end.
    pub node: Vec<f64>,
    pub threshold: usize,
    pub edge: f64,
}

impl DiscreteMarking {
    pub fn none() -> Self {
        DiscreteMarking { node: Vec::new(), threshold: 0, edge: 0.0 }
    }

    /// Edge marks from a skeleton intensity on a mesh of height `h`.
    pub fn edge_for(alpha1: f64, h: f64) -> f64 {
        -(-alpha1 * h).exp_m1()
    }

    pub fn node_prob(&self, k: usize) -> f64 {
        if k < self.threshold {
            0.0
        } else {
            self.node.get(k).copied().unwrap_or(0.0)
        }
    }

    fn check(&self) -> Result<()> {
        let bad = self.node.iter().chain(std::iter::once(&self.edge)).find(|p| !(0.0..=1.0).contains(*p));
        match bad {
            Some(p) => Err(GwError::InvalidLaw(format!("mark probability {p} outside [0, 1]"))),
            None => Ok(()),
        }
    }
}

/// A plane tree in preorder with per-node and per-edge mark flags.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DiscreteTree {
    offspring: Vec<u32>,
    node_marked: Vec<bool>,
    /// Mark on the edge from node `i` to its parent (always false at the root).
    edge_marked: Vec<bool>,
}

impl DiscreteTree {
    /// An unmarked tree from its preorder offspring counts.
    pub fn from_offspring(offspring: Vec<u32>) -> Result<Self> {
        let n = offspring.len();
        Self::from_parts(offspring, vec![false; n], vec![false; n])
    }

    pub fn from_parts(offspring: Vec<u32>, node_marked: Vec<bool>, edge_marked: Vec<bool>) -> Result<Self> {
        if offspring.is_empty() {
            return Err(GwError::Parse("empty tree".into()));
        }
        if node_marked.len() != offspring.len() || edge_marked.len() != offspring.len() {
            return Err(GwError::Parse("mark vectors do not match the node count".into()));
        }
        if edge_marked[0] {
            return Err(GwError::Parse("the root has no edge to mark".into()));
        }
        let mut w: i64 = 0;
        for (i, &k) in offspring.iter().enumerate() {
            w += k as i64 - 1;
            if w < 0 && i + 1 != offspring.len() {
                return Err(GwError::Parse(format!("walk reaches −1 early at node {i}")));
            }
        }
        if w != -1 {
            return Err(GwError::Parse(format!("walk ends at {w}, not −1")));
        }
        Ok(DiscreteTree { offspring, node_marked, edge_marked })
    }

    pub fn len(&self) -> usize {
        self.offspring.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn offspring(&self) -> &[u32] {
        &self.offspring
    }

    pub fn node_marked(&self) -> &[bool] {
        &self.node_marked
    }

    pub fn edge_marked(&self) -> &[bool] {
        &self.edge_marked
    }

    /// `W_0 = 0, …, W_n = −1`.
    pub fn walk(&self) -> Vec<i64> {
        let mut w = Vec::with_capacity(self.len() + 1);
        w.push(0);
        let mut acc = 0i64;
        for &k in &self.offspring {
            acc += k as i64 - 1;
            w.push(acc);
        }
        w
    }

    /// Parent index of each node (`None` at the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = Vec::with_capacity(self.len());
        let mut open: Vec<(usize, u32)> = Vec::new();
        for (i, &k) in self.offspring.iter().enumerate() {
            let parent = match open.last_mut() {
                Some((p, left)) => {
                    *left -= 1;
                    let p = *p;
                    if *left == 0 {
                        open.pop();
                    }
                    Some(p)
                }
                None => None,
            };
            parents.push(parent);
            if k > 0 {
                open.push((i, k));
            }
        }
        parents
    }

    pub fn with_marks(&self, node_marked: Vec<bool>, edge_marked: Vec<bool>) -> Result<Self> {
        Self::from_parts(self.offspring.clone(), node_marked, edge_marked)
    }

    pub fn is_marked(&self) -> bool {
        self.node_marked.iter().chain(&self.edge_marked).any(|&m| m)
    }
}

impl fmt::Display for DiscreteTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // (children left, separator needed)
        let mut open: Vec<u32> = Vec::new();
        for i in 0..self.len() {
            if let Some(left) = open.last_mut() {
                if *left == 0 {
                    unreachable!();
                }
                *left -= 1;
            }
            if self.edge_marked[i] {
                f.write_str("~")?;
            }
            f.write_str(if self.node_marked[i] { "N" } else { "n" })?;
            if self.offspring[i] > 0 {
                f.write_str("(")?;
                open.push(self.offspring[i]);
            } else {
                while let Some(&left) = open.last() {
                    if left == 0 {
                        f.write_str(")")?;
                        open.pop();
                    } else {
                        f.write_str(",")?;
                        break;
                    }
                }
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for DiscreteTree {
    type Err = GwError;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut pos = 0;
        let mut offspring = Vec::new();
        let mut node_marked = Vec::new();
        let mut edge_marked = Vec::new();
        // Index of the node whose child list is open.
        let mut open: Vec<usize> = Vec::new();
        let err = |pos: usize, what: &str| GwError::Parse(format!("{what} at byte {pos}"));
        loop {
            let edge = bytes.get(pos) == Some(&b'~');
            if edge {
                if open.is_empty() {
                    return Err(err(pos, "edge mark on the root"));
                }
                pos += 1;
            }
            let marked = match bytes.get(pos) {
                Some(b'n') => false,
                Some(b'N') => true,
                _ => return Err(err(pos, "expected a node")),
            };
            pos += 1;
            let me = offspring.len();
            if let Some(&p) = open.last() {
                offspring[p] += 1;
            }
            offspring.push(0u32);
            node_marked.push(marked);
            edge_marked.push(edge);
            if bytes.get(pos) == Some(&b'(') {
                pos += 1;
                open.push(me);
                continue;
            }
            loop {
                match bytes.get(pos) {
                    Some(b',') if !open.is_empty() => {
                        pos += 1;
                        break;
                    }
                    Some(b')') if !open.is_empty() => {
                        pos += 1;
                        open.pop();
                    }
                    None if open.is_empty() => {
                        return DiscreteTree::from_parts(offspring, node_marked, edge_marked);
                    }
                    _ => return Err(err(pos, "unexpected input")),
                }
            }
        }
    }
}

/// Samples a GW tree in preorder; more than `cap` nodes is [`GwError::Censored`].
pub fn sample_tree(law: &OffspringLaw, seed: u64, index: u64, cap: usize) -> Result<DiscreteTree> {
    let mut rng = stream(seed, Purpose::Tree, index);
    let mut offspring = Vec::new();
    let mut pending: u64 = 1;
    while pending > 0 {
        if offspring.len() >= cap {
            return Err(GwError::Censored { cap });
        }
        let k = law.sample(&mut rng);
        offspring.push(k as u32);
        pending = pending + k as u64 - 1;
    }
    DiscreteTree::from_offspring(offspring)
}

/// Draws node and edge marks for `tree`.
pub fn mark(tree: &DiscreteTree, marking: &DiscreteMarking, seed: u64, index: u64) -> Result<DiscreteTree> {
    marking.check()?;
    let mut rng = stream(seed, Purpose::TreeMarks, index);
    let mut node = Vec::with_capacity(tree.len());
    let mut edge = Vec::with_capacity(tree.len());
    for (i, &k) in tree.offspring.iter().enumerate() {
        let p = marking.node_prob(k as usize);
        node.push(p > 0.0 && rng.random::<f64>() < p);
        edge.push(i > 0 && marking.edge > 0.0 && rng.random::<f64>() < marking.edge);
    }
    tree.with_marks(node, edge)
}

/// Preorder indices of the nodes kept by pruning.
pub fn prune_indices(tree: &DiscreteTree) -> Vec<usize> {
    let mut kept = Vec::new();
    // (children left, children alive)
    let mut open: Vec<(u32, bool)> = Vec::new();
    for i in 0..tree.len() {
        let parent_ok = match open.last_mut() {
            Some((left, alive)) => {
                *left -= 1;
                let alive = *alive;
                if *left == 0 {
                    open.pop();
                }
                alive
            }
            None => true,
        };
        let alive = parent_ok && !tree.edge_marked[i];
        if alive {
            kept.push(i);
        }
        if tree.offspring[i] > 0 {
            open.push((tree.offspring[i], alive && !tree.node_marked[i]));
        }
    }
    kept
}

/// The root component after removing every node with a marked edge on its
/// root path or a marked strict ancestor. Kept nodes retain their node marks.
pub fn prune(tree: &DiscreteTree) -> DiscreteTree {
    if !tree.is_marked() {
        return tree.clone();
    }
    let kept = prune_indices(tree);
    let parents = tree.parents();
    let mut slot = vec![usize::MAX; tree.len()];
    for (j, &i) in kept.iter().enumerate() {
        slot[i] = j;
    }
    let mut offspring = vec![0u32; kept.len()];
    for &i in &kept[1..] {
        let p = parents[i].expect("non-root");
        offspring[slot[p]] += 1;
    }
    let node_marked = kept.iter().map(|&i| tree.node_marked[i]).collect();
    DiscreteTree::from_parts(offspring, node_marked, vec![false; kept.len()]).expect("pruning keeps a plane tree")
}

/// Brute-force oracle: walk each node's ancestor path.
pub fn prune_indices_by_ancestor_scan(tree: &DiscreteTree) -> Vec<usize> {
    let parents = tree.parents();
    (0..tree.len())
        .filter(|&i| {
            if tree.edge_marked[i] {
                return false;
            }
            let mut v = i;
            while let Some(p) = parents[v] {
                if tree.node_marked[p] || tree.edge_marked[p] {
                    return false;
                }
                v = p;
            }
            true
        })
        .collect()
}

/// Exact law of the pruned root's offspring count, by enumerating the mark
/// event and every subset of marked child edges.
pub fn pruned_offspring_oracle(law: &OffspringLaw, marking: &DiscreteMarking) -> Result<OffspringLaw> {
    marking.check()?;
    let k_max = law.max_offspring();
    if k_max > ORACLE_MAX_K {
        return Err(GwError::TooLarge { k: k_max, max: ORACLE_MAX_K });
    }
    let q = marking.edge;
    let mut out = vec![0.0; k_max + 1];
    for (k, &pk) in law.probs().iter().enumerate() {
        if pk == 0.0 {
            continue;
        }
        let m = marking.node_prob(k);
        out[0] += pk * m;
        for subset in 0u32..(1 << k) {
            let cut = subset.count_ones() as i32;
            let w = q.powi(cut) * (1.0 - q).powi(k as i32 - cut);
            out[k - cut as usize] += pk * (1.0 - m) * w;
        }
    }
    Ok(OffspringLaw::unchecked(out))
}

/// All plane trees with `n` nodes, as preorder offspring sequences.
pub fn plane_trees(n: usize) -> Vec<Vec<u32>> {
    fn extend(prefix: &mut Vec<u32>, pending: usize, n: usize, out: &mut Vec<Vec<u32>>) {
        let left = n - prefix.len();
        if pending == 0 {
            if left == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        // Each pending node still needs one slot.
        if left < pending {
            return;
        }
        for k in 0..=(left - pending) {
            prefix.push(k as u32);
            extend(prefix, pending - 1 + k, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        extend(&mut Vec::with_capacity(n), 1, n, &mut out);
    }
    out
}

// ---------------------------------------------------------------------------
// Scaled exploration
// ---------------------------------------------------------------------------

/// A macroscopic node type: `children` offspring, drawn with `prob`, marked
/// with `mark_prob`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clump {
    pub jump: f64,
    pub children: u32,
    pub prob: f64,
    pub mark_prob: f64,
}

/// Offspring of ordinary (non-clump) nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaseOffspring {
    /// `P(k) = (1 − a) a^k`.
    Geometric { ratio: f64 },
    /// `k = 0` with probability `death`, else `k = 1`.
    Chain { death: f64 },
}

/// Mechanism → GW law with mass unit `δ` per node, time `Δt` per node and
/// height `h` per generation.
///
/// - `β > 0`: ordinary nodes are geometric with variance `s²` and mean
///   `1 − D h`; `δ = 2βh/s²` and `Δt = δh`, so the walk has mean `−αΔt` and
///   variance `2βΔt` per step.
/// - `β = 0`: ordinary nodes die with probability `D h` and otherwise have
///   one child; `δ = h`, `Δt = h²`.
///
/// An atom `(ℓ, w)` of `π` becomes a clump node with `1 + round(ℓ/δ)`
/// children, drawn with probability `wΔt`; `D` absorbs the atom drift so
/// the mean step is exactly `−αΔt`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizationMap {
    pub mesh: f64,
    pub mass_unit: f64,
    pub time_unit: f64,
    pub base: BaseOffspring,
    pub clumps: Vec<Clump>,
    pub edge_mark: f64,
    pub warnings: Vec<String>,
}

impl DiscretizationMap {
    /// The default map for mechanisms with `π` zero or finitely many atoms.
    pub fn default_for(mech: &BranchingMechanism, marking: &MarkingSpec, h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(GwError::InvalidLaw(format!("mesh {h} must lie in (0, 1)")));
        }
        let atoms = match &mech.levy {
            LevyMeasure::Zero => Vec::new(),
            LevyMeasure::FiniteAtoms { atoms } => atoms.clone(),
            other => {
                return Err(GwError::Unsupported(format!(
                    "only zero or finitely atomic Lévy measures have a default map, got {other:?}"
                )))
            }
        };
        if !(mech.alpha >= 0.0 && mech.beta >= 0.0) {
            return Err(GwError::InvalidLaw("alpha and beta must be ≥ 0".into()));
        }
        crate::mechanism::derive_pruned(mech, marking)?;
        let atom_drift: f64 = atoms.iter().map(|a| a.size * a.weight).sum();
        let mut warnings = Vec::new();

        let (base, mass_unit, time_unit, clumps) = if mech.beta > 0.0 {
            // The variance s² of the geometric law depends on its mean, which
            // depends on δ through the clump probabilities: iterate.
            let geometric_mean = |s2: f64, warnings: &mut Vec<String>| {
                let delta = 2.0 * mech.beta * h / s2;
                let dt = delta * h;
                let clumps = make_clumps(&atoms, delta, dt, marking, warnings);
                let clump_prob: f64 = clumps.iter().map(|c| c.prob).sum();
                let clump_mean: f64 = clumps.iter().map(|c| c.prob * (c.children as f64 - 1.0)).sum();
                // (1 − W)(m − 1) + Σ p_i (k_i − 1) = −αΔt/δ = −αh
                let m = 1.0 - (mech.alpha * h + clump_mean) / (1.0 - clump_prob);
                (m, delta, dt, clumps, clump_prob)
            };
            let mut s2 = 2.0;
            for _ in 0..100 {
                let (m, ..) = geometric_mean(s2, &mut Vec::new());
                let next = m * (1.0 + m);
                if !(m > 0.0 && m <= 1.0) || next == s2 {
                    break;
                }
                s2 = next;
            }
            let (m, delta, dt, clumps, clump_prob) = geometric_mean(s2, &mut warnings);
            if !(m > 0.0 && m <= 1.0 && clump_prob < 1.0) {
                return Err(GwError::InvalidLaw(format!("mesh {h} too coarse: geometric mean {m}")));
            }
            (BaseOffspring::Geometric { ratio: m / (1.0 + m) }, delta, dt, clumps)
        } else {
            if mech.alpha + atom_drift <= 0.0 {
                return Err(GwError::InvalidLaw("ψ vanishes identically".into()));
            }
            let (delta, dt) = (h, h * h);
            let clumps = make_clumps(&atoms, delta, dt, marking, &mut warnings);
            let clump_prob: f64 = clumps.iter().map(|c| c.prob).sum();
            let clump_mean: f64 = clumps.iter().map(|c| c.prob * (c.children as f64 - 1.0)).sum();
            // P(k = 0) = D h absolute, so the mean step is −αh.
            let death_abs = mech.alpha * h + clump_mean;
            let death = death_abs / (1.0 - clump_prob);
            if !(death <= 1.0) || clump_prob >= 1.0 {
                return Err(GwError::InvalidLaw(format!("mesh {h} too coarse: death probability {death}")));
            }
            (BaseOffspring::Chain { death }, delta, dt, clumps)
        };
        if h * (mech.alpha + atom_drift + marking.alpha1) > 0.1 {
            warnings.push(format!("mesh {h} is coarse relative to the drift; expect O(h) bias"));
        }
        Ok(DiscretizationMap {
            mesh: h,
            mass_unit,
            time_unit,
            base,
            clumps,
            edge_mark: DiscreteMarking::edge_for(marking.alpha1, h),
            warnings,
        })
    }

    fn clump_total(&self) -> f64 {
        self.clumps.iter().map(|c| c.prob).sum()
    }

    /// Offspring count and clump index (`None` for ordinary nodes).
    #[inline]
    fn sample(&self, clump_total: f64, rng: &mut StreamRng) -> (u32, Option<usize>) {
        let u: f64 = rng.random();
        if u < clump_total {
            let mut acc = 0.0;
            for (i, c) in self.clumps.iter().enumerate() {
                acc += c.prob;
                if u < acc {
                    return (c.children, Some(i));
                }
            }
            let last = self.clumps.len() - 1;
            return (self.clumps[last].children, Some(last));
        }
        match self.base {
            BaseOffspring::Chain { death } => {
                let v = (u - clump_total) / (1.0 - clump_total);
                (u32::from(v >= death), None)
            }
            BaseOffspring::Geometric { ratio } => {
                let v: f64 = rng.random();
                let k = ((1.0 - v).ln() / ratio.ln()).floor();
                (k.min(u32::MAX as f64 / 2.0) as u32, None)
            }
        }
    }

    /// Offspring law of ordinary plus clump nodes, truncated at `k_max` (for
    /// the oracle and for diagnostics).
    pub fn offspring_probs(&self, k_max: usize) -> Vec<f64> {
        let w = self.clump_total();
        let mut probs = vec![0.0; k_max + 1];
        match self.base {
            BaseOffspring::Chain { death } => {
                probs[0] += (1.0 - w) * death;
                if k_max >= 1 {
                    probs[1] += (1.0 - w) * (1.0 - death);
                }
            }
            BaseOffspring::Geometric { ratio } => {
                for (k, p) in probs.iter_mut().enumerate() {
                    *p += (1.0 - w) * (1.0 - ratio) * ratio.powi(k as i32);
                }
            }
        }
        for c in &self.clumps {
            if (c.children as usize) <= k_max {
                probs[c.children as usize] += c.prob;
            }
        }
        probs
    }
}

fn make_clumps(
    atoms: &[crate::mechanism::JumpAtom],
    delta: f64,
    dt: f64,
    marking: &MarkingSpec,
    warnings: &mut Vec<String>,
) -> Vec<Clump> {
    atoms
        .iter()
        .map(|a| {
            let units = (a.size / delta).round().max(1.0);
            if ((units * delta - a.size) / a.size).abs() > 1e-9 {
                warnings.push(format!("jump {} rounded to {} mass units", a.size, units * delta));
            }
            Clump { jump: a.size, children: 1 + units as u32, prob: a.weight * dt, mark_prob: marking.mark.eval(a.size) }
        })
        .collect()
}

/// One scaled discrete excursion setup under `P*_ℓ`.
#[derive(Clone, Debug)]
pub struct ScaledSetup {
    pub map: DiscretizationMap,
    pub initial_mass: f64,
    pub horizon: f64,
    pub sample_times: Vec<f64>,
    pub ledger_threshold: f64,
}

impl ScaledSetup {
    pub fn new(
        mech: &BranchingMechanism,
        marking: &MarkingSpec,
        h: f64,
        initial_mass: f64,
        horizon: f64,
        sample_times: &[f64],
    ) -> Result<Self> {
        if !(initial_mass > 0.0 && horizon > 0.0) {
            return Err(GwError::InvalidLaw("initial mass and horizon must be > 0".into()));
        }
        let map = DiscretizationMap::default_for(mech, marking, h)?;
        let mut sample_times = sample_times.to_vec();
        sample_times.sort_by(f64::total_cmp);
        Ok(ScaledSetup { map, initial_mass, horizon, sample_times, ledger_threshold: f64::INFINITY })
    }

    pub fn with_ledger_threshold(mut self, threshold: f64) -> Self {
        self.ledger_threshold = threshold;
        self
    }

    /// Number of roots: the initial mass in units of `δ`.
    pub fn roots(&self) -> u64 {
        (self.initial_mass / self.map.mass_unit).round().max(1.0) as u64
    }
}

/// Explores the forest of `ℓ/δ` trees depth first; `σ` counts every node,
/// `A_σ` the nodes kept by pruning, both times `Δt`.
pub fn scaled_run(setup: &ScaledSetup, seed: u64, index: u64) -> MarkedExcursionReport {
    let map = &setup.map;
    let mut tree_rng = stream(seed, Purpose::Tree, index);
    let mut mark_rng = stream(seed, Purpose::TreeMarks, index);
    let clump_total = map.clump_total();
    let dt = map.time_unit;
    let delta = map.mass_unit;
    let cap = (setup.horizon / dt).ceil() as u64;
    let roots = setup.roots();
    let sample_steps: Vec<u64> = setup.sample_times.iter().map(|t| (t / dt).floor() as u64).collect();

    // Pending nodes, top = next in preorder; `true` if not pruned.
    let mut pending: Vec<bool> = vec![true; roots as usize];
    let mut alive_pending = roots;
    let mut visited: u64 = 0;
    let mut kept: u64 = 0;
    let mut original_mass = vec![0.0; sample_steps.len()];
    let mut pruned_mass = vec![0.0; sample_steps.len()];
    let (mut next_orig, mut next_pruned) = (0usize, 0usize);
    let mut components = Vec::new();
    let mut dead_run: u64 = 0;
    let mut censored = false;

    while next_orig < sample_steps.len() && sample_steps[next_orig] == 0 {
        original_mass[next_orig] = delta * pending.len() as f64;
        next_orig += 1;
    }
    while next_pruned < sample_steps.len() && sample_steps[next_pruned] == 0 {
        pruned_mass[next_pruned] = delta * alive_pending as f64;
        next_pruned += 1;
    }

    while let Some(alive) = pending.pop() {
        if visited >= cap {
            censored = true;
            pending.push(alive);
            break;
        }
        visited += 1;
        let (k, clump) = map.sample(clump_total, &mut tree_rng);
        let node_marked = match clump {
            Some(i) => {
                let p = map.clumps[i].mark_prob;
                p > 0.0 && mark_rng.random::<f64>() < p
            }
            None => false,
        };
        let children_alive = alive && !node_marked;
        if alive {
            alive_pending -= 1;
            kept += 1;
            if dead_run > 0 {
                close_run(&mut components, dead_run, dt, setup.ledger_threshold);
                dead_run = 0;
            }
        } else {
            dead_run += 1;
        }
        if children_alive {
            let q = map.edge_mark;
            for _ in 0..k {
                let a = !(q > 0.0 && mark_rng.random::<f64>() < q);
                pending.push(a);
                alive_pending += u64::from(a);
            }
        } else {
            pending.extend(std::iter::repeat_n(false, k as usize));
        }
        while next_orig < sample_steps.len() && sample_steps[next_orig] <= visited {
            original_mass[next_orig] = delta * pending.len() as f64;
            next_orig += 1;
        }
        if alive {
            while next_pruned < sample_steps.len() && sample_steps[next_pruned] <= kept {
                pruned_mass[next_pruned] = delta * alive_pending as f64;
                next_pruned += 1;
            }
        }
    }
    if dead_run > 0 {
        close_run(&mut components, dead_run, dt, setup.ledger_threshold);
    }
    let unseen = if censored { f64::NAN } else { 0.0 };
    original_mass[next_orig..].fill(unseen);
    pruned_mass[next_pruned..].fill(unseen);
    MarkedExcursionReport {
        index,
        initial_mass: setup.initial_mass,
        sigma: visited as f64 * dt,
        a_sigma: kept as f64 * dt,
        censored,
        pruned_mass,
        original_mass,
        pruned_components: components,
        steps: visited,
    }
}

fn close_run(components: &mut Vec<f64>, run: u64, dt: f64, threshold: f64) {
    let d = run as f64 * dt;
    if d > threshold {
        components.push(d);
    }
}

pub fn scaled_batch(setup: &ScaledSetup, seed: u64, n: usize) -> Vec<MarkedExcursionReport> {
    (0..n as u64).into_par_iter().map(|i| scaled_run(setup, seed, i)).collect()
}
