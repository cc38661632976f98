//! Monte Carlo estimates and the checks against closed forms.
//!
//! Every identity about the excursion measure `N` is tested through its
//! `P*_ℓ` form: under `P*_ℓ` the exploration starts from one atom of mass
//! `ℓ`, which the Poisson representation of `ρ` turns into a Poisson number
//! of `N`-excursions, so `N[1 − e^{−F}] = v` becomes `E*_ℓ[e^{−F}] = e^{−ℓv}`:
//!
//! | statistic                      | analytic                               |
//! |--------------------------------|----------------------------------------|
//! | `e^{−λσ}`                      | `e^{−ℓψ⁻¹(λ)}`                         |
//! | `e^{−λA_σ}`                    | `e^{−ℓψ₀⁻¹(λ)}`                        |
//! | `e^{−ψ(γ)σ − κA_σ}`            | `e^{−ℓv}`, `ψ₀(v) = κ + ψ₀(γ)`         |
//! | `e^{−λ′(σ − A_σ)}`             | `e^{−ℓψ₀⁻¹(φ₁(ψ⁻¹(λ′)))}`              |
//!
//! The last row: given the pruned tree, the pruned-away components form a
//! Poisson measure with intensity `A_σ·(α₁N + ∫p(ℓ)π(dℓ)P*_ℓ)`, and
//! `N[1 − e^{−λ′σ}] = ψ⁻¹(λ′)`, `E*_u[e^{−λ′σ}] = e^{−uψ⁻¹(λ′)}`, so
//! `E*_ℓ[e^{−λ′(σ−A_σ)} | A_σ] = e^{−A_σ φ₁(ψ⁻¹(λ′))}`; integrating with the
//! second row at `λ = φ₁(ψ⁻¹(λ′))` gives the closed form. The conditional form
//! is checked by a binned weighted regression of the log statistic on `A_σ`.
//!
//! Gates: `|estimate − analytic| ≤ Z_THRESHOLD·SE + budget`, where the budget
//! `BUDGET_CONSTANT·(√dt + small-jump bias)` covers the discretisation bias.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exploration::{run_batch, ExcursionSetup, ExplorationError, MarkedExcursionReport};
use crate::gw::{scaled_batch, GwError, ScaledSetup};
use crate::mechanism::{derive_pruned, solve_joint_v, BranchingMechanism, MarkingSpec, MechanismError};
use crate::numeric::CompensatedSum;
use crate::pathgen::{PathError, SimGrid};
use crate::SimMode;

/// Default `|z|` gate.
pub const Z_THRESHOLD: f64 = 3.0;

/// Calibrated on the quadratic mechanism with `α₁ = 1`, `ℓ = 1`: the bias of
/// the `e^{−λA_σ}` estimate over the meshes `dt ∈ {4e−3, 1e−3, 2.5e−4}` stays
/// below `0.12·√dt`.
pub const BUDGET_CONSTANT: f64 = 0.12;

/// Per-time KS p-value floor. Three times are tested, so the family-wise
/// level under the null is at most `3 × 0.001`.
pub const KS_ALPHA: f64 = 0.001;

/// Bins of the special-Markov regression.
pub const REGRESSION_BINS: usize = 10;

/// Upper quantile of `A_σ` covered by the regression bins.
pub const REGRESSION_QUANTILE: f64 = 0.9;

/// Offset separating the direct `ψ₀` runs from the pruned runs of a suite.
const DIRECT_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Exploration(#[from] ExplorationError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Gw(#[from] GwError),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// Mergeable accumulator for the mean of a statistic in `[0, 1]`.
///
/// Each sample carries a point value and a lower value; they differ only
/// for censored samples.
#[derive(Clone, Debug, Default)]
pub struct MeanAccumulator {
    n: u64,
    censored: u64,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
    lower_sum: CompensatedSum,
}

impl MeanAccumulator {
    pub fn push(&mut self, point: f64, lower: f64, censored: bool) {
        self.n += 1;
        self.censored += u64::from(censored);
        self.sum.add(point);
        self.sum_sq.add(point * point);
        self.lower_sum.add(lower);
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        self.n += other.n;
        self.censored += other.censored;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
        self.lower_sum.merge(&other.lower_sum);
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn finish(&self) -> Result<MeanEstimate> {
        if self.n < 2 {
            return Err(EstimatorError::TooFewSamples(self.n as usize));
        }
        let n = self.n as f64;
        let mean = self.sum.value() / n;
        let var = ((self.sum_sq.value() - n * mean * mean) / (n - 1.0)).max(0.0);
        Ok(MeanEstimate {
            mean,
            se: (var / n).sqrt(),
            n: self.n,
            censored_fraction: self.censored as f64 / n,
            lower: self.lower_sum.value() / n,
            upper: mean,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
    pub censored_fraction: f64,
    /// Censored samples counted as 0.
    pub lower: f64,
    /// Censored samples evaluated at their observed (partial) value; equals `mean`.
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    pub lambda: f64,
    pub mean: f64,
    pub se: f64,
    pub n: u64,
    pub censored_fraction: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `e^{−x}` with `e^{−0·∞} = 1`.
fn exp_neg(x: f64) -> f64 {
    if x.is_nan() {
        1.0
    } else {
        (-x).exp()
    }
}

fn laplace_term(lambda: f64, value: f64) -> f64 {
    if lambda == 0.0 {
        1.0
    } else {
        exp_neg(lambda * value)
    }
}

/// Mean of `e^{−λS}` over `(S, censored)` samples. A censored `S` is a lower
/// bound on the true value, so its term `e^{−λS}` is an upper bound: the
/// point estimate uses it, the lower variant replaces it by 0.
pub fn mc_laplace(samples: &[(f64, bool)], lambda: f64) -> Result<LaplaceEstimate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(EstimatorError::Invalid(format!("lambda = {lambda}")));
    }
    if let Some((s, _)) = samples.iter().find(|(s, _)| !(*s >= 0.0)) {
        return Err(EstimatorError::Invalid(format!("negative or NaN sample {s}")));
    }
    let mut acc = MeanAccumulator::default();
    for &(s, censored) in samples {
        let term = laplace_term(lambda, s);
        acc.push(term, if censored { 0.0 } else { term }, censored);
    }
    let e = acc.finish()?;
    Ok(LaplaceEstimate {
        lambda,
        mean: e.mean,
        se: e.se,
        n: e.n,
        censored_fraction: e.censored_fraction,
        lower: e.lower,
        upper: e.upper,
    })
}

/// `BUDGET_CONSTANT·(√dt + small-jump bias)`.
pub fn discretization_budget(dt: f64, small_jump_bias: f64) -> f64 {
    BUDGET_CONSTANT * (dt.sqrt() + small_jump_bias)
}

/// Pass/fail rule shared by every gate.
pub fn gate(diff: f64, se: f64, threshold: f64, budget: f64) -> bool {
    diff.abs() <= threshold * se + budget + 1e-12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub check: String,
    pub label: String,
    pub analytic: f64,
    pub derivation: String,
    pub estimate: f64,
    pub se: f64,
    pub n: u64,
    pub lower: f64,
    pub upper: f64,
    pub censored_fraction: f64,
    /// `(estimate − analytic)/SE`; infinite when `SE = 0` and they differ.
    pub z: f64,
    pub budget: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl ComparisonReport {
    pub fn new(
        check: &str,
        label: String,
        analytic: f64,
        derivation: &str,
        est: &MeanEstimate,
        budget: f64,
        threshold: f64,
    ) -> Self {
        let diff = est.mean - analytic;
        let z = if est.se > 0.0 {
            diff / est.se
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        ComparisonReport {
            check: check.to_string(),
            label,
            analytic,
            derivation: derivation.to_string(),
            estimate: est.mean,
            se: est.se,
            n: est.n,
            lower: est.lower,
            upper: est.upper,
            censored_fraction: est.censored_fraction,
            z,
            budget,
            threshold,
            passed: gate(diff, est.se, threshold, budget),
        }
    }
}

/// Gate parameters of a suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gate {
    pub threshold: f64,
    pub budget: f64,
}

fn estimate_by(samples: &[MarkedExcursionReport], stat: impl Fn(&MarkedExcursionReport) -> f64) -> Result<MeanEstimate> {
    let mut acc = MeanAccumulator::default();
    for r in samples {
        let v = stat(r);
        acc.push(v, if r.censored { 0.0 } else { v }, r.censored);
    }
    acc.finish()
}

fn common_mass(samples: &[MarkedExcursionReport]) -> Result<f64> {
    let l = samples.first().map(|r| r.initial_mass).ok_or(EstimatorError::TooFewSamples(0))?;
    if samples.iter().any(|r| r.initial_mass != l) {
        return Err(EstimatorError::Invalid("samples mix initial masses".into()));
    }
    Ok(l)
}

/// `E*_ℓ[e^{−λσ}]` against `e^{−ℓψ⁻¹(λ)}`.
pub fn excursion_length_reports(
    mech: &BranchingMechanism,
    lambdas: &[f64],
    samples: &[MarkedExcursionReport],
    gate: Gate,
) -> Result<Vec<ComparisonReport>> {
    let l = common_mass(samples)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let analytic = exp_neg(l * mech.psi_inverse(lambda)?);
            let est = estimate_by(samples, |r| laplace_term(lambda, r.sigma))?;
            Ok(ComparisonReport::new(
                "excursion_length",
                format!("lambda={lambda}"),
                analytic,
                "exp(-l*psi_inv(lambda))",
                &est,
                gate.budget,
                gate.threshold,
            ))
        })
        .collect()
}

/// `E*_ℓ[e^{−λA_σ}]` against `e^{−ℓψ₀⁻¹(λ)}`.
pub fn pruned_length_reports(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    lambdas: &[f64],
    samples: &[MarkedExcursionReport],
    gate: Gate,
) -> Result<Vec<ComparisonReport>> {
    let l = common_mass(samples)?;
    let mech0 = derive_pruned(mech, marking)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let analytic = exp_neg(l * mech0.psi_inverse(lambda)?);
            let est = estimate_by(samples, |r| laplace_term(lambda, r.a_sigma))?;
            Ok(ComparisonReport::new(
                "pruned_length",
                format!("lambda={lambda}"),
                analytic,
                "exp(-l*psi0_inv(lambda))",
                &est,
                gate.budget,
                gate.threshold,
            ))
        })
        .collect()
}

/// `E*_ℓ[e^{−ψ(γ)σ − κA_σ}]` against `e^{−ℓv}` with `ψ₀(v) = κ + ψ₀(γ)`.
pub fn joint_length_reports(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    grid: &[(f64, f64)],
    samples: &[MarkedExcursionReport],
    gate: Gate,
) -> Result<Vec<ComparisonReport>> {
    let l = common_mass(samples)?;
    let mech0 = derive_pruned(mech, marking)?;
    grid.iter()
        .map(|&(gamma, kappa)| {
            let rate = mech.psi(gamma)?;
            let v = solve_joint_v(&mech0, gamma, kappa)?;
            let est = estimate_by(samples, |r| laplace_term(rate, r.sigma) * laplace_term(kappa, r.a_sigma))?;
            Ok(ComparisonReport::new(
                "joint_length",
                format!("gamma={gamma},kappa={kappa}"),
                exp_neg(l * v),
                "exp(-l*v), psi0(v)=kappa+psi0(gamma)",
                &est,
                gate.budget,
                gate.threshold,
            ))
        })
        .collect()
}

/// `φ₁(ψ⁻¹(λ′))`: the rate of `E[e^{−λ′(σ−A_σ)} | A_σ] = e^{−A_σ·rate}`.
pub fn special_markov_rate(mech: &BranchingMechanism, marking: &MarkingSpec, lambda_prime: f64) -> Result<f64> {
    Ok(marking.phi1(mech, mech.psi_inverse(lambda_prime)?)?)
}

/// `E*_ℓ[e^{−λ′(σ−A_σ)}]` against `e^{−ℓψ₀⁻¹(φ₁(ψ⁻¹(λ′)))}`.
pub fn special_markov_reports(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    lambda_primes: &[f64],
    samples: &[MarkedExcursionReport],
    gate: Gate,
) -> Result<Vec<ComparisonReport>> {
    let l = common_mass(samples)?;
    let mech0 = derive_pruned(mech, marking)?;
    lambda_primes
        .iter()
        .map(|&lp| {
            let rate = special_markov_rate(mech, marking, lp)?;
            let analytic = exp_neg(l * mech0.psi_inverse(rate)?);
            let est = estimate_by(samples, |r| laplace_term(lp, (r.sigma - r.a_sigma).max(0.0)))?;
            Ok(ComparisonReport::new(
                "special_markov",
                format!("lambda_prime={lp}"),
                analytic,
                "exp(-l*psi0_inv(phi1(psi_inv(lambda_prime))))",
                &est,
                gate.budget,
                gate.threshold,
            ))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub mean_a: f64,
    pub log_mean: f64,
    pub log_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub check: String,
    pub label: String,
    pub target: f64,
    pub slope: f64,
    pub se: f64,
    pub intercept: f64,
    pub z: f64,
    pub budget: f64,
    pub threshold: f64,
    pub passed: bool,
    pub bins: Vec<RegressionBin>,
}

/// Weighted least squares `y = a + b x` with weights `1/se²`; returns
/// `(a, b, se(b))`.
pub fn weighted_line(x: &[f64], y: &[f64], se: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() < 3 || x.len() != y.len() || x.len() != se.len() {
        return Err(EstimatorError::Invalid(format!("weighted fit needs ≥ 3 points, got {}", x.len())));
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let w = 1.0 / (se[i] * se[i]);
        sw += w;
        sx += w * x[i];
        sy += w * y[i];
        sxx += w * x[i] * x[i];
        sxy += w * x[i] * y[i];
    }
    let det = sw * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(EstimatorError::Invalid("degenerate regressors".into()));
    }
    let b = (sw * sxy - sx * sy) / det;
    let a = (sy - b * sx) / sw;
    Ok((a, b, (sw / det).sqrt()))
}

/// Binned regression of `log E[e^{−λ′(σ−A_σ)} | A_σ ∈ bin]` on the bin mean
/// of `A_σ`; the slope should be `−φ₁(ψ⁻¹(λ′))`. Bins split `[0, q]` evenly,
/// `q` the [`REGRESSION_QUANTILE`] of `A_σ`; censored samples are left out.
pub fn special_markov_slope(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    lambda_prime: f64,
    samples: &[MarkedExcursionReport],
    gate: Gate,
) -> Result<SlopeReport> {
    let target = -special_markov_rate(mech, marking, lambda_prime)?;
    let done: Vec<&MarkedExcursionReport> = samples.iter().filter(|r| !r.censored).collect();
    if done.len() < 2 * REGRESSION_BINS {
        return Err(EstimatorError::TooFewSamples(done.len()));
    }
    let mut a_sorted: Vec<f64> = done.iter().map(|r| r.a_sigma).collect();
    a_sorted.sort_by(f64::total_cmp);
    let top = a_sorted[((a_sorted.len() - 1) as f64 * REGRESSION_QUANTILE).round() as usize];
    let width = top / REGRESSION_BINS as f64;
    let mut acc = vec![(MeanAccumulator::default(), CompensatedSum::default()); REGRESSION_BINS];
    for r in &done {
        if r.a_sigma > top || width <= 0.0 {
            continue;
        }
        let b = ((r.a_sigma / width) as usize).min(REGRESSION_BINS - 1);
        let v = laplace_term(lambda_prime, (r.sigma - r.a_sigma).max(0.0));
        acc[b].0.push(v, v, false);
        acc[b].1.add(r.a_sigma);
    }
    let mut bins = Vec::new();
    for (i, (m, sum_a)) in acc.iter().enumerate() {
        if m.len() < 2 {
            continue;
        }
        let e = m.finish()?;
        if !(e.mean > 0.0 && e.se > 0.0) {
            continue;
        }
        bins.push(RegressionBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count: e.n,
            mean_a: sum_a.value() / e.n as f64,
            log_mean: e.mean.ln(),
            log_se: e.se / e.mean,
        });
    }
    let x: Vec<f64> = bins.iter().map(|b| b.mean_a).collect();
    let y: Vec<f64> = bins.iter().map(|b| b.log_mean).collect();
    let s: Vec<f64> = bins.iter().map(|b| b.log_se).collect();
    let (intercept, slope, se) = weighted_line(&x, &y, &s)?;
    let diff = slope - target;
    Ok(SlopeReport {
        check: "special_markov_slope".into(),
        label: format!("lambda_prime={lambda_prime}"),
        target,
        slope,
        se,
        intercept,
        z: diff / se,
        budget: gate.budget,
        threshold: gate.threshold,
        passed: self::gate(diff, se, gate.threshold, gate.budget),
        bins,
    })
}

// ---------------------------------------------------------------------------
// Two-sample tests
// ---------------------------------------------------------------------------

/// Kolmogorov survival function `Q(λ) = 2Σ(−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series, fast for small λ.
        let y = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=6).map(|k| ((2 * k - 1) as f64).powi(2) * y).map(f64::exp).sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k: i32| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value (with the
/// Stephens small-sample correction). Ties are handled by evaluating both
/// empirical CDFs after each distinct value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(EstimatorError::TooFewSamples(a.len().min(b.len())));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(EstimatorError::Invalid("NaN in KS sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let sq = ne.sqrt();
    Ok((d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub check: String,
    pub time: f64,
    pub n_pruned: u64,
    pub n_direct: u64,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub absorbed_pruned: f64,
    pub absorbed_direct: f64,
    pub absorption_se: f64,
    pub absorption_passed: bool,
    pub passed: bool,
    pub note: String,
}

/// Compares `Ỹ_t` of pruned runs with `Y⁰_t` of direct `ψ₀` runs at each
/// sample time: KS on the full samples (absorbed runs are the atom at 0) and
/// the absorption probabilities within `Z_THRESHOLD·SE`. Samples censored
/// before `t` are left out.
pub fn total_mass_reports(
    times: &[f64],
    pruned: &[MarkedExcursionReport],
    direct: &[MarkedExcursionReport],
) -> Result<Vec<TwoSampleReport>> {
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let pick = |rs: &[MarkedExcursionReport], f: fn(&MarkedExcursionReport) -> &Vec<f64>| -> Result<Vec<f64>> {
                rs.iter()
                    .map(|r| f(r).get(k).copied().ok_or_else(|| EstimatorError::Invalid(format!("no sample at t={t}"))))
                    .filter(|v| !matches!(v, Ok(x) if x.is_nan()))
                    .collect()
            };
            let a = pick(pruned, |r| &r.pruned_mass)?;
            let b = pick(direct, |r| &r.original_mass)?;
            if a.len() < 2 || b.len() < 2 {
                return Err(EstimatorError::TooFewSamples(a.len().min(b.len())));
            }
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let pa = a.iter().filter(|&&x| x == 0.0).count() as f64 / na;
            let pb = b.iter().filter(|&&x| x == 0.0).count() as f64 / nb;
            let se = (pa * (1.0 - pa) / na + pb * (1.0 - pb) / nb).sqrt();
            let absorption_passed = gate(pa - pb, se, Z_THRESHOLD, 0.0);
            let (d, p, note) = if pa == 1.0 && pb == 1.0 {
                (0.0, 1.0, "all samples absorbed; compared absorption only".to_string())
            } else {
                let (d, p) = ks_two_sample(&a, &b)?;
                let dropped = (pruned.len() - a.len()) + (direct.len() - b.len());
                let note = if dropped > 0 { format!("{dropped} censored samples left out") } else { String::new() };
                (d, p, note)
            };
            Ok(TwoSampleReport {
                check: "total_mass".into(),
                time: t,
                n_pruned: a.len() as u64,
                n_direct: b.len() as u64,
                ks_statistic: d,
                p_value: p,
                alpha: KS_ALPHA,
                absorbed_pruned: pa,
                absorbed_direct: pb,
                absorption_se: se,
                absorption_passed,
                passed: p >= KS_ALPHA && absorption_passed,
                note,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Simulating checks
// ---------------------------------------------------------------------------

/// Simulation settings shared by the `check_*` functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub initial_mass: f64,
    pub n: usize,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub mode: SimMode,
    /// Generation height `h` of discrete mode.
    pub mesh: f64,
    pub threshold: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings {
            initial_mass: 1.0,
            n: 10_000,
            seed: 1,
            dt: 1e-4,
            horizon: 1e5,
            mode: SimMode::Continuum,
            mesh: 1.0 / 128.0,
            threshold: Z_THRESHOLD,
        }
    }
}

/// Runs `settings.n` excursions of `(mech, marking)` and returns them with
/// the gate. Discrete mode has no budget: its mesh bias is what the mesh
/// study measures.
pub fn simulate(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    settings: &CheckSettings,
    sample_times: &[f64],
    ledger_threshold: f64,
) -> Result<(Vec<MarkedExcursionReport>, Gate)> {
    match settings.mode {
        SimMode::Continuum => {
            let grid = SimGrid::auto(mech, settings.dt, settings.horizon)?;
            let setup = ExcursionSetup::new(mech, marking, &grid, settings.initial_mass, sample_times)?
                .with_ledger_threshold(ledger_threshold);
            let budget = discretization_budget(settings.dt, setup.increments().small_jump_bias());
            Ok((run_batch(&setup, settings.seed, settings.n), Gate { threshold: settings.threshold, budget }))
        }
        SimMode::Discrete => {
            let setup = ScaledSetup::new(mech, marking, settings.mesh, settings.initial_mass, settings.horizon, sample_times)?
                .with_ledger_threshold(ledger_threshold);
            Ok((scaled_batch(&setup, settings.seed, settings.n), Gate { threshold: settings.threshold, budget: 0.0 }))
        }
    }
}

pub fn check_excursion_length(
    mech: &BranchingMechanism,
    lambdas: &[f64],
    settings: &CheckSettings,
) -> Result<Vec<ComparisonReport>> {
    let (samples, gate) = simulate(mech, &MarkingSpec::none(), settings, &[], f64::INFINITY)?;
    excursion_length_reports(mech, lambdas, &samples, gate)
}

pub fn check_pruned_length(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    lambdas: &[f64],
    settings: &CheckSettings,
) -> Result<Vec<ComparisonReport>> {
    let (samples, gate) = simulate(mech, marking, settings, &[], f64::INFINITY)?;
    pruned_length_reports(mech, marking, lambdas, &samples, gate)
}

pub fn check_joint_length(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    grid: &[(f64, f64)],
    settings: &CheckSettings,
) -> Result<Vec<ComparisonReport>> {
    let (samples, gate) = simulate(mech, marking, settings, &[], f64::INFINITY)?;
    joint_length_reports(mech, marking, grid, &samples, gate)
}

/// Integrated reports for every `λ′`, then one slope report per `λ′`.
pub fn check_special_markov(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    lambda_primes: &[f64],
    settings: &CheckSettings,
) -> Result<(Vec<ComparisonReport>, Vec<SlopeReport>)> {
    let (samples, gate) = simulate(mech, marking, settings, &[], f64::INFINITY)?;
    let reports = special_markov_reports(mech, marking, lambda_primes, &samples, gate)?;
    let slopes = lambda_primes
        .iter()
        .filter(|&&lp| lp > 0.0)
        .map(|&lp| special_markov_slope(mech, marking, lp, &samples, gate))
        .collect::<Result<Vec<_>>>()?;
    Ok((reports, slopes))
}

/// Seed of the direct `ψ₀` runs paired with a suite seed.
pub fn direct_seed(seed: u64) -> u64 {
    seed ^ DIRECT_SEED_OFFSET
}

/// Pruned total mass `Ỹ_t` against direct `ψ₀` runs (unmarked) at `times`.
pub fn check_total_mass(
    mech: &BranchingMechanism,
    marking: &MarkingSpec,
    times: &[f64],
    settings: &CheckSettings,
) -> Result<Vec<TwoSampleReport>> {
    let mech0 = derive_pruned(mech, marking)?;
    let (pruned, _) = simulate(mech, marking, settings, times, f64::INFINITY)?;
    let direct_settings = CheckSettings { seed: direct_seed(settings.seed), ..settings.clone() };
    let (direct, _) = simulate(&mech0, &MarkingSpec::none(), &direct_settings, times, f64::INFINITY)?;
    total_mass_reports(times, &pruned, &direct)
}

/// Merges per-shard accumulators in shard order.
pub fn merge_all(parts: &[MeanAccumulator]) -> MeanAccumulator {
    parts.iter().fold(MeanAccumulator::default(), |mut acc, p| {
        acc.merge(p);
        acc
    })
}

/// `mc_laplace` sharded across workers; shards are merged in order, so the
/// result does not depend on the thread count.
pub fn mc_laplace_sharded(samples: &[(f64, bool)], lambda: f64, shard: usize) -> Result<LaplaceEstimate> {
    let parts: Vec<MeanAccumulator> = samples
        .par_chunks(shard.max(1))
        .map(|chunk| {
            let mut acc = MeanAccumulator::default();
            for &(s, c) in chunk {
                let t = laplace_term(lambda, s);
                acc.push(t, if c { 0.0 } else { t }, c);
            }
            acc
        })
        .collect();
    let e = merge_all(&parts).finish()?;
    Ok(LaplaceEstimate {
        lambda,
        mean: e.mean,
        se: e.se,
        n: e.n,
        censored_fraction: e.censored_fraction,
        lower: e.lower,
        upper: e.upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_examples() {
        let zeros = vec![(0.0, false); 10];
        let e = mc_laplace(&zeros, 1.0).unwrap();
        assert_eq!((e.mean, e.se), (1.0, 0.0));
        let e = mc_laplace(&[(0.0, false), (1e300, false)], 1.0).unwrap();
        assert_eq!(e.mean, 0.5);
        assert!(matches!(mc_laplace(&[(1.0, false)], 1.0), Err(EstimatorError::TooFewSamples(1))));
        assert!(mc_laplace(&[], 1.0).is_err());
    }

    #[test]
    fn censored_variants_bracket() {
        let s = [(1.0, false), (2.0, true), (0.5, false)];
        let e = mc_laplace(&s, 1.0).unwrap();
        assert!(e.lower < e.upper);
        assert_eq!(e.mean, e.upper);
        assert!((e.censored_fraction - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let (d, p) = ks_two_sample(&a, &a).unwrap();
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        let (d, p) = ks_two_sample(&a, &b).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        assert!(p < 1e-6);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        for l in [1.1, 1.15, 1.2, 1.25] {
            let s: f64 = (1..=100)
                .map(|k: i32| (if k % 2 == 1 { 2.0 } else { -2.0 }) * (-2.0 * (k * k) as f64 * l * l).exp())
                .sum();
            assert!((kolmogorov_q(l) - s).abs() < 1e-10, "{l}");
        }
        // Critical value of the 5% test.
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn weighted_line_recovers_exact_fit() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|x| 0.5 - 2.0 * x).collect();
        let (a, b, _) = weighted_line(&x, &y, &[1.0, 0.5, 1.0, 2.0]).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && (b + 2.0).abs() < 1e-12);
    }
}
