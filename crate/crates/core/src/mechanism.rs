//! Branching-mechanism algebra.
//!
//! A mechanism `ψ(λ) = αλ + βλ² + ∫(e^{-λℓ} − 1 + λℓ) π(dℓ)` is described by
//! [`BranchingMechanism`]; a pruning rule (mark function `p` on node sizes
//! plus a skeleton intensity `α₁`) by [`MarkingSpec`]. Pruning produces the
//! mechanism `ψ₀ = ψ + φ₁` with `φ₁(λ) = α₁λ + ∫(1 − e^{-λℓ}) p(ℓ) π(dℓ)`.
//!
//! Atomic measures are evaluated exactly. Continuous measures are stored as
//! piecewise power-law densities; the neighbourhood of zero is integrated by
//! power series, the far tail in closed form, and the rest by adaptive
//! Gauss–Kronrod on `log ℓ`. The relative tolerance of the quadrature is
//! [`QUAD_REL_TOL`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature;
use crate::SimMode;

/// Relative tolerance requested from every adaptive quadrature call.
pub const QUAD_REL_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("divergent jump integral: {condition}")]
    Divergent { condition: &'static str },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("ψ is identically zero; its inverse is undefined")]
    Degenerate,
}

pub type Result<T> = std::result::Result<T, MechanismError>;

const MOMENT_CONDITION: &str = "∫(ℓ ∧ ℓ²) π(dℓ) < ∞";
const MARK_CONDITION: &str = "∫ ℓ p(ℓ) π(dℓ) < ∞";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpAtom {
    pub size: f64,
    pub weight: f64,
}

/// Lévy measure `π` of a branching mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevyMeasure {
    Zero,
    FiniteAtoms {
        atoms: Vec<JumpAtom>,
    },
    /// `π(dℓ) = C_c ℓ^{-1-c} dℓ`, with `C_c` chosen so that the jump part of
    /// ψ is exactly `λ^c`.
    StableTail {
        index: f64,
    },
    /// Density samples on an increasing grid, interpolated log-log linearly.
    /// Below the first node the density is extended as `ℓ^{-1-small_exponent}`,
    /// above the last node as `ℓ^{-1-large_exponent}`.
    Tabulated {
        sizes: Vec<f64>,
        density: Vec<f64>,
        small_exponent: f64,
        large_exponent: f64,
    },
    /// `(1 − p(ℓ)) base(dℓ)`; produced by pruning a continuous measure.
    Thinned {
        base: Box<LevyMeasure>,
        removed: MarkFunction,
    },
}

/// Mark probability as a function of the jump size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkFunction {
    Constant { q: f64 },
    /// `p(ℓ) = 1` for `ℓ ≥ a`, else 0.
    Threshold { a: f64 },
    /// Piecewise-linear interpolation of `values` at `sizes`, clamped to
    /// `[0, 1]`; constant beyond the end nodes.
    Tabulated { sizes: Vec<f64>, values: Vec<f64> },
}

impl MarkFunction {
    pub fn none() -> Self {
        MarkFunction::Constant { q: 0.0 }
    }

    pub fn eval(&self, size: f64) -> f64 {
        let v = match self {
            MarkFunction::Constant { q } => *q,
            MarkFunction::Threshold { a } => {
                if size >= *a {
                    1.0
                } else {
                    0.0
                }
            }
            MarkFunction::Tabulated { sizes, values } => {
                let n = sizes.len();
                if n == 0 {
                    0.0
                } else if size <= sizes[0] {
                    values[0]
                } else if size >= sizes[n - 1] {
                    values[n - 1]
                } else {
                    let i = sizes.partition_point(|&x| x <= size) - 1;
                    let t = (size - sizes[i]) / (sizes[i + 1] - sizes[i]);
                    values[i] + t * (values[i + 1] - values[i])
                }
            }
        };
        v.clamp(0.0, 1.0)
    }

    /// True when `p` vanishes everywhere.
    pub fn is_zero(&self) -> bool {
        match self {
            MarkFunction::Constant { q } => *q <= 0.0,
            MarkFunction::Threshold { a } => a.is_infinite(),
            MarkFunction::Tabulated { values, .. } => values.iter().all(|&v| v <= 0.0),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            MarkFunction::Constant { .. } => Vec::new(),
            MarkFunction::Threshold { a } => vec![*a],
            MarkFunction::Tabulated { sizes, .. } => sizes.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            MarkFunction::Constant { q } if !(0.0..=1.0).contains(q) => {
                Err(MechanismError::Invalid(format!("constant mark probability {q} outside [0,1]")))
            }
            MarkFunction::Threshold { a } if !(*a > 0.0) => {
                Err(MechanismError::Invalid(format!("mark threshold {a} must be positive")))
            }
            MarkFunction::Tabulated { sizes, values } => {
                if sizes.is_empty() || sizes.len() != values.len() {
                    return Err(MechanismError::Invalid(
                        "tabulated mark function needs matching, non-empty sizes and values".into(),
                    ));
                }
                if sizes.windows(2).any(|w| !(w[1] > w[0])) || !(sizes[0] > 0.0) {
                    return Err(MechanismError::Invalid(
                        "tabulated mark sizes must be positive and strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Node-mark function plus skeleton mark intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkingSpec {
    pub mark: MarkFunction,
    pub alpha1: f64,
}

impl MarkingSpec {
    /// No marks at all: pruning is the identity.
    pub fn none() -> Self {
        MarkingSpec { mark: MarkFunction::none(), alpha1: 0.0 }
    }

    pub fn skeleton(alpha1: f64) -> Self {
        MarkingSpec { mark: MarkFunction::none(), alpha1 }
    }

    pub fn is_degenerate(&self) -> bool {
        self.alpha1 == 0.0 && self.mark.is_zero()
    }

    /// `φ₁(λ) = α₁λ + ∫(1 − e^{-λℓ}) p(ℓ) π(dℓ)`.
    pub fn phi1(&self, mech: &BranchingMechanism, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let jumps = mech.levy.integrate(
            Kernel::Phi(lambda),
            &Weighting::marked(&self.mark),
            0.0,
            f64::INFINITY,
        )?;
        Ok(self.alpha1 * lambda + jumps)
    }

    /// `∫ ℓ p(ℓ) π(dℓ)`, the mass removed from the drift by node marks.
    pub fn marked_first_moment(&self, mech: &BranchingMechanism) -> Result<f64> {
        mech.levy
            .integrate(Kernel::Power(1), &Weighting::marked(&self.mark), 0.0, f64::INFINITY)
            .map_err(|e| match e {
                MechanismError::Divergent { .. } => MechanismError::Divergent { condition: MARK_CONDITION },
                other => other,
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchingMechanism {
    pub alpha: f64,
    pub beta: f64,
    pub levy: LevyMeasure,
}

/// Normalising constant `c(c−1)/Γ(2−c)` of the stable Lévy density, for
/// which `∫(e^{-λℓ} − 1 + λℓ) C ℓ^{-1-c} dℓ = λ^c`.
pub fn stable_constant(index: f64) -> f64 {
    index * (index - 1.0) / statrs::function::gamma::gamma(2.0 - index)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(MechanismError::Invalid(format!("argument {lambda} must be finite and non-negative")))
    }
}

impl BranchingMechanism {
    pub fn quadratic(beta: f64) -> Self {
        BranchingMechanism { alpha: 0.0, beta, levy: LevyMeasure::Zero }
    }

    pub fn stable(index: f64) -> Self {
        BranchingMechanism { alpha: 0.0, beta: 0.0, levy: LevyMeasure::StableTail { index } }
    }

    pub fn psi(&self, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let jumps =
            self.levy.integrate(Kernel::Psi(lambda), &Weighting::one(), 0.0, f64::INFINITY)?;
        Ok(self.alpha * lambda + self.beta * lambda * lambda + jumps)
    }

    pub fn psi_prime(&self, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        if lambda == 0.0 {
            // The jump integrand vanishes, but the measure must still be valid.
            self.levy.moment_condition()?;
            return Ok(self.alpha);
        }
        let jumps =
            self.levy.integrate(Kernel::PsiPrime(lambda), &Weighting::one(), 0.0, f64::INFINITY)?;
        Ok(self.alpha + 2.0 * self.beta * lambda + jumps)
    }

    /// Unique `λ ≥ 0` with `ψ(λ) = v`.
    ///
    /// Newton's method started to the right of the root (where convexity
    /// makes the iterates decrease monotonically), guarded by a bisection
    /// bracket.
    pub fn psi_inverse(&self, v: f64) -> Result<f64> {
        check_lambda(v)?;
        if v == 0.0 {
            return Ok(0.0);
        }
        let mut hi = 1.0f64;
        if self.alpha > 0.0 {
            hi = hi.max(v / self.alpha);
        }
        if self.beta > 0.0 {
            hi = hi.max((v / self.beta).sqrt());
        }
        let mut f_hi = self.psi(hi)? - v;
        let mut doublings = 0;
        while f_hi < 0.0 {
            hi *= 2.0;
            f_hi = self.psi(hi)? - v;
            doublings += 1;
            if doublings > 2000 {
                return Err(MechanismError::Degenerate);
            }
        }
        let tol = 1e-13 * (1.0 + v);
        let mut lo = 0.0f64;
        let mut x = hi;
        let mut fx = f_hi;
        for _ in 0..300 {
            if fx.abs() <= tol {
                return Ok(x);
            }
            if fx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.psi_prime(x)?;
            let mut next = if d > 0.0 { x - fx / d } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if next == x || hi - lo <= f64::EPSILON * hi {
                return Ok(x);
            }
            x = next;
            fx = self.psi(x)? - v;
        }
        Ok(x)
    }

    /// `β > 0` or `∫_{(0,1)} ℓ π(dℓ) = ∞`.
    pub fn is_infinite_variation(&self) -> bool {
        self.beta > 0.0 || self.levy.small_jump_variation().is_err()
    }

    fn check(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(MechanismError::Invalid(format!(
                "sub-criticality violated: alpha = {} < 0",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(MechanismError::Invalid(format!("beta = {} must be ≥ 0", self.beta)));
        }
        self.levy.check()
    }
}

/// `ψ₀ = ψ + φ₁`: Lévy measure `(1 − p)π`, drift `α + α₁ + ∫ℓpπ`, same β.
pub fn derive_pruned(mech: &BranchingMechanism, marking: &MarkingSpec) -> Result<BranchingMechanism> {
    mech.check()?;
    marking.mark.check()?;
    if !(marking.alpha1 >= 0.0) {
        return Err(MechanismError::Invalid(format!("alpha1 = {} must be ≥ 0", marking.alpha1)));
    }
    let removed_drift = marking.marked_first_moment(mech)?;
    let levy = if marking.mark.is_zero() {
        mech.levy.clone()
    } else {
        match &mech.levy {
            LevyMeasure::Zero => LevyMeasure::Zero,
            LevyMeasure::FiniteAtoms { atoms } => {
                let atoms: Vec<JumpAtom> = atoms
                    .iter()
                    .map(|a| JumpAtom { size: a.size, weight: a.weight * (1.0 - marking.mark.eval(a.size)) })
                    .filter(|a| a.weight > 0.0)
                    .collect();
                if atoms.is_empty() {
                    LevyMeasure::Zero
                } else {
                    LevyMeasure::FiniteAtoms { atoms }
                }
            }
            continuous => LevyMeasure::Thinned {
                base: Box::new(continuous.clone()),
                removed: marking.mark.clone(),
            },
        }
    };
    Ok(BranchingMechanism {
        alpha: mech.alpha + marking.alpha1 + removed_drift,
        beta: mech.beta,
        levy,
    })
}

/// The `v ≥ 0` solving `ψ₀(v) = κ + ψ₀(γ)`.
pub fn solve_joint_v(mech0: &BranchingMechanism, gamma: f64, kappa: f64) -> Result<f64> {
    check_lambda(kappa)?;
    if kappa == 0.0 {
        return Ok(gamma);
    }
    mech0.psi_inverse(kappa + mech0.psi(gamma)?)
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    /// Blocks continuum-mode simulation only.
    ContinuumOnly,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub check: String,
    pub passed: bool,
    /// Severity if the check did not pass.
    pub severity: Severity,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub findings: Vec<Finding>,
}

impl Diagnostics {
    fn push(&mut self, check: &str, passed: bool, severity: Severity, message: impl Into<String>) {
        self.findings.push(Finding { check: check.into(), passed, severity, message: message.into() });
    }

    pub fn failures(&self, mode: SimMode) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(move |f| {
            !f.passed
                && (f.severity == Severity::Error
                    || (f.severity == Severity::ContinuumOnly && mode == SimMode::Continuum))
        })
    }

    pub fn is_ok(&self, mode: SimMode) -> bool {
        self.failures(mode).next().is_none()
    }

    pub fn get(&self, check: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.check == check)
    }
}

impl std::fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for finding in &self.findings {
            let status = if finding.passed {
                "ok".to_string()
            } else {
                format!("{:?}", finding.severity).to_lowercase()
            };
            writeln!(f, "[{status:>14}] {:<22} {}", finding.check, finding.message)?;
        }
        Ok(())
    }
}

/// Standing-assumption report for a mechanism/marking pair. Never fails;
/// every problem is a finding.
pub fn validate(mech: &BranchingMechanism, marking: &MarkingSpec) -> Diagnostics {
    let mut d = Diagnostics::default();

    match mech.levy.check() {
        Ok(()) => d.push("levy-measure", true, Severity::Error, "measure parameters well formed"),
        Err(e) => d.push("levy-measure", false, Severity::Error, e.to_string()),
    }

    let moment = mech.levy.moment_condition();
    match &moment {
        Ok(m) => d.push("moment-condition", true, Severity::Error, format!("∫(ℓ∧ℓ²)π = {m:.6e}")),
        Err(e) => d.push("moment-condition", false, Severity::Error, e.to_string()),
    }

    let subcritical = mech.alpha >= 0.0 && mech.beta >= 0.0;
    d.push(
        "sub-criticality",
        subcritical,
        Severity::Error,
        if subcritical {
            format!("alpha = {} ≥ 0, beta = {} ≥ 0", mech.alpha, mech.beta)
        } else {
            format!("sub-criticality violated: alpha = {}, beta = {}", mech.alpha, mech.beta)
        },
    );

    let infinite_variation = mech.is_infinite_variation();
    d.push(
        "infinite-variation",
        infinite_variation,
        Severity::ContinuumOnly,
        if infinite_variation {
            "beta > 0 or ∫_(0,1) ℓπ(dℓ) = ∞".to_string()
        } else {
            "finite variation: beta = 0 and ∫_(0,1) ℓπ(dℓ) < ∞; continuum paths refused".to_string()
        },
    );

    let mark_ok = marking.mark.check();
    let mark_moment = mark_ok.clone().and_then(|_| marking.marked_first_moment(mech));
    match &mark_moment {
        Ok(m) => d.push("mark-integrability", true, Severity::Error, format!("∫ℓpπ = {m:.6e}")),
        Err(e) => d.push("mark-integrability", false, Severity::Error, e.to_string()),
    }

    let alpha1_ok = marking.alpha1 >= 0.0 && marking.alpha1.is_finite();
    d.push(
        "skeleton-intensity",
        alpha1_ok,
        Severity::Error,
        format!("alpha1 = {}", marking.alpha1),
    );

    if let Ok(m) = &mark_moment {
        let alpha0 = mech.alpha + marking.alpha1 + m;
        if marking.is_degenerate() {
            d.push("alpha0-positive", true, Severity::Info, "no marks: pruning is the identity");
        } else {
            d.push(
                "alpha0-positive",
                alpha0 > 0.0,
                Severity::Error,
                format!("alpha0 = {alpha0:.6e}"),
            );
        }
    }

    if moment.is_ok() {
        let continuous = h_continuity(mech);
        d.push(
            "height-continuity",
            continuous,
            Severity::Info,
            if continuous {
                "∫_1^∞ du/ψ(u) < ∞: the height process is continuous"
            } else {
                "∫_1^∞ du/ψ(u) = ∞: the height process has no continuous version"
            },
        );
    }

    let skeleton_ok = marking.alpha1 == 0.0 || mech.beta > 0.0;
    d.push(
        "skeleton-continuum",
        skeleton_ok,
        Severity::ContinuumOnly,
        if skeleton_ok {
            "skeleton marks representable on the continuum stack".to_string()
        } else {
            "continuum skeleton marking ineligible (alpha1 > 0 needs beta > 0); use discrete mode"
                .to_string()
        },
    );
    d
}

/// Grey's criterion `∫_1^∞ du/ψ(u) < ∞`, decided from the growth of ψ:
/// quadratic when β > 0, otherwise the power of the small-jump density.
fn h_continuity(mech: &BranchingMechanism) -> bool {
    mech.beta > 0.0 || mech.levy.small_jump_index().is_some_and(|c| c > 1.0)
}

// ---------------------------------------------------------------------------
// Jump integrals
// ---------------------------------------------------------------------------

/// Integrand `f(ℓ)` multiplying `π(dℓ)`.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Kernel {
    /// `e^{-λℓ} − 1 + λℓ`
    Psi(f64),
    /// `ℓ(1 − e^{-λℓ})`
    PsiPrime(f64),
    /// `1 − e^{-λℓ}`
    Phi(f64),
    /// `ℓ^k`
    Power(i32),
}

impl Kernel {
    fn eval(self, l: f64) -> f64 {
        match self {
            Kernel::Psi(lambda) => psi_kernel(lambda * l),
            Kernel::PsiPrime(lambda) => -l * (-lambda * l).exp_m1(),
            Kernel::Phi(lambda) => -(-lambda * l).exp_m1(),
            Kernel::Power(k) => l.powi(k),
        }
    }

    fn lambda(self) -> Option<f64> {
        match self {
            Kernel::Psi(l) | Kernel::PsiPrime(l) | Kernel::Phi(l) => Some(l),
            Kernel::Power(_) => None,
        }
    }

    fn divergence(self) -> MechanismError {
        let condition = match self {
            Kernel::Phi(_) => MARK_CONDITION,
            _ => MOMENT_CONDITION,
        };
        MechanismError::Divergent { condition }
    }

    /// `∫_0^x f(ℓ) ℓ^s dℓ` by term-wise integration of the power series of
    /// `f`; requires `λx ≤ 1/2` for the exponential kernels.
    fn lower_series(self, x: f64, s: f64) -> Result<f64> {
        let (first_power, mut coef, lambda) = match self {
            Kernel::Power(k) => {
                let p = k as f64 + s + 1.0;
                if p <= 0.0 {
                    return Err(self.divergence());
                }
                return Ok(x.powf(p) / p);
            }
            Kernel::Psi(l) => (2, 0.5 * l * l, l),
            Kernel::PsiPrime(l) => (2, l, l),
            Kernel::Phi(l) => (1, l, l),
        };
        let mut j = first_power;
        if j as f64 + s + 1.0 <= 0.0 {
            return Err(self.divergence());
        }
        let mut sum = 0.0;
        let mut xp = x.powf(j as f64 + s + 1.0);
        for _ in 0..60 {
            let term = coef * xp / (j as f64 + s + 1.0);
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            // Next coefficient of the alternating exponential series.
            let order = match self {
                Kernel::PsiPrime(_) => j as f64, // coef_j = -(-λ)^{j-1}/(j-1)!
                _ => (j + 1) as f64,
            };
            coef *= -lambda / order;
            xp *= x;
            j += 1;
        }
        Ok(sum)
    }

    /// `∫_x^∞ f(ℓ) ℓ^s dℓ` with `e^{-λx}` negligible.
    fn upper_tail(self, x: f64, s: f64) -> Result<f64> {
        let power = |k: f64| -> Result<f64> {
            let p = k + s + 1.0;
            if p >= 0.0 {
                Err(self.divergence())
            } else {
                Ok(-x.powf(p) / p)
            }
        };
        match self {
            Kernel::Psi(l) => Ok(l * power(1.0)? - power(0.0)?),
            Kernel::PsiPrime(_) => power(1.0),
            Kernel::Phi(_) => power(0.0),
            Kernel::Power(k) => power(k as f64),
        }
    }
}

/// `e^{-x} − 1 + x` without cancellation for small `x`.
fn psi_kernel(x: f64) -> f64 {
    if x < 0.1 {
        let mut term = 0.5 * x * x;
        let mut sum = term;
        let mut k = 2.0;
        while term.abs() > 1e-18 * sum {
            k += 1.0;
            term *= -x / k;
            sum += term;
        }
        sum
    } else {
        (-x).exp_m1() + x
    }
}

/// Product of mark-function factors `p` or `1 − p` weighting the measure.
#[derive(Clone, Debug, Default)]
pub(crate) struct Weighting<'a> {
    factors: Vec<(&'a MarkFunction, bool)>,
}

impl<'a> Weighting<'a> {
    pub(crate) fn one() -> Self {
        Weighting { factors: Vec::new() }
    }

    pub(crate) fn marked(p: &'a MarkFunction) -> Self {
        Weighting { factors: vec![(p, false)] }
    }

    fn with_complement(&self, p: &'a MarkFunction) -> Self {
        let mut factors = self.factors.clone();
        factors.push((p, true));
        Weighting { factors }
    }

    fn eval(&self, l: f64) -> f64 {
        self.factors
            .iter()
            .map(|(p, complement)| {
                let v = p.eval(l);
                if *complement {
                    1.0 - v
                } else {
                    v
                }
            })
            .product()
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.factors.iter().flat_map(|(p, _)| p.breakpoints()).collect()
    }
}

/// Density `coef · ℓ^exponent` on `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct PowerPiece {
    pub lo: f64,
    pub hi: f64,
    pub coef: f64,
    pub exponent: f64,
}

impl PowerPiece {
    #[cfg(test)]
    pub(crate) fn density(&self, l: f64) -> f64 {
        self.coef * l.powf(self.exponent)
    }

    /// `∫_a^b ℓ^k · density` for `lo ≤ a ≤ b ≤ hi`, finite `a > 0` or convergent.
    pub(crate) fn moment(&self, k: f64, a: f64, b: f64) -> f64 {
        let p = k + self.exponent + 1.0;
        let prim = |x: f64| -> f64 {
            if p.abs() < 1e-12 {
                x.ln()
            } else {
                x.powf(p) / p
            }
        };
        let upper = if b.is_infinite() { 0.0 } else { prim(b) };
        let lower = if a == 0.0 { 0.0 } else { prim(a) };
        self.coef * (upper - lower)
    }
}

impl LevyMeasure {
    fn check(&self) -> Result<()> {
        match self {
            LevyMeasure::Zero => Ok(()),
            LevyMeasure::FiniteAtoms { atoms } => {
                for a in atoms {
                    if !(a.size > 0.0 && a.size.is_finite() && a.weight > 0.0 && a.weight.is_finite()) {
                        return Err(MechanismError::Invalid(format!(
                            "atom sizes and weights must be positive (size {}, weight {})",
                            a.size, a.weight
                        )));
                    }
                }
                Ok(())
            }
            LevyMeasure::StableTail { index } => {
                if *index > 1.0 && *index < 2.0 {
                    Ok(())
                } else {
                    Err(MechanismError::Invalid(format!("stable index {index} outside (1,2)")))
                }
            }
            LevyMeasure::Tabulated { sizes, density, small_exponent, large_exponent } => {
                if sizes.len() < 2 || sizes.len() != density.len() {
                    return Err(MechanismError::Invalid(
                        "tabulated density needs ≥ 2 matching sizes and values".into(),
                    ));
                }
                if !(sizes[0] > 0.0) || sizes.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(MechanismError::Invalid(
                        "tabulated sizes must be positive and strictly increasing".into(),
                    ));
                }
                if density.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
                    return Err(MechanismError::Invalid("tabulated density must be positive".into()));
                }
                if !small_exponent.is_finite() || !large_exponent.is_finite() {
                    return Err(MechanismError::Invalid("tail exponents must be finite".into()));
                }
                Ok(())
            }
            LevyMeasure::Thinned { base, removed } => {
                removed.check()?;
                base.check()
            }
        }
    }

    /// `∫(ℓ ∧ ℓ²) π(dℓ)`.
    pub fn moment_condition(&self) -> Result<f64> {
        let w = Weighting::one();
        Ok(self.integrate(Kernel::Power(2), &w, 0.0, 1.0)?
            + self.integrate(Kernel::Power(1), &w, 1.0, f64::INFINITY)?)
    }

    /// `∫_{(0,1)} ℓ π(dℓ)`; an error means infinite variation.
    pub fn small_jump_variation(&self) -> Result<f64> {
        self.integrate(Kernel::Power(1), &Weighting::one(), 0.0, 1.0)
    }

    /// `π([ε, ∞))`.
    pub fn mass_above(&self, eps: f64) -> Result<f64> {
        self.integrate(Kernel::Power(0), &Weighting::one(), eps, f64::INFINITY)
    }

    /// `∫_{[ε,∞)} ℓ π(dℓ)`.
    pub fn first_moment_above(&self, eps: f64) -> Result<f64> {
        self.integrate(Kernel::Power(1), &Weighting::one(), eps, f64::INFINITY)
    }

    /// `∫_{(0,ε)} ℓ² π(dℓ)`.
    pub fn second_moment_below(&self, eps: f64) -> Result<f64> {
        self.integrate(Kernel::Power(2), &Weighting::one(), 0.0, eps)
    }

    /// Power `c` with density `~ ℓ^{-1-c}` near zero, if continuous there.
    fn small_jump_index(&self) -> Option<f64> {
        match self {
            LevyMeasure::Zero | LevyMeasure::FiniteAtoms { .. } => None,
            LevyMeasure::StableTail { index } => Some(*index),
            LevyMeasure::Tabulated { small_exponent, .. } => Some(*small_exponent),
            LevyMeasure::Thinned { base, removed } => {
                let near_zero = match removed {
                    MarkFunction::Constant { q } => 1.0 - q,
                    MarkFunction::Threshold { .. } => 1.0,
                    MarkFunction::Tabulated { values, .. } => 1.0 - values[0].clamp(0.0, 1.0),
                };
                if near_zero > 0.0 {
                    base.small_jump_index()
                } else {
                    None
                }
            }
        }
    }

    /// Power-law pieces covering `[0, ∞)` for continuous measures.
    pub(crate) fn pieces(&self) -> Option<Vec<PowerPiece>> {
        match self {
            LevyMeasure::StableTail { index } => Some(vec![PowerPiece {
                lo: 0.0,
                hi: f64::INFINITY,
                coef: stable_constant(*index),
                exponent: -1.0 - index,
            }]),
            LevyMeasure::Tabulated { sizes, density, small_exponent, large_exponent } => {
                let n = sizes.len();
                let mut out = Vec::with_capacity(n + 1);
                let s0 = -1.0 - small_exponent;
                out.push(PowerPiece { lo: 0.0, hi: sizes[0], coef: density[0] / sizes[0].powf(s0), exponent: s0 });
                for i in 0..n - 1 {
                    let s = (density[i + 1] / density[i]).ln() / (sizes[i + 1] / sizes[i]).ln();
                    out.push(PowerPiece {
                        lo: sizes[i],
                        hi: sizes[i + 1],
                        coef: density[i] / sizes[i].powf(s),
                        exponent: s,
                    });
                }
                let s1 = -1.0 - large_exponent;
                out.push(PowerPiece {
                    lo: sizes[n - 1],
                    hi: f64::INFINITY,
                    coef: density[n - 1] / sizes[n - 1].powf(s1),
                    exponent: s1,
                });
                Some(out)
            }
            _ => None,
        }
    }

    /// `∫_{[lo,hi)} f(ℓ) w(ℓ) π(dℓ)`.
    pub(crate) fn integrate(&self, kernel: Kernel, weight: &Weighting<'_>, lo: f64, hi: f64) -> Result<f64> {
        match self {
            LevyMeasure::Zero => Ok(0.0),
            LevyMeasure::FiniteAtoms { atoms } => Ok(atoms
                .iter()
                .filter(|a| a.size >= lo && a.size < hi)
                .map(|a| a.weight * weight.eval(a.size) * kernel.eval(a.size))
                .sum()),
            LevyMeasure::Thinned { base, removed } => {
                base.integrate(kernel, &weight.with_complement(removed), lo, hi)
            }
            continuous => {
                let pieces = continuous.pieces().expect("continuous measure");
                integrate_pieces(&pieces, kernel, weight, lo, hi)
            }
        }
    }
}

fn integrate_pieces(
    pieces: &[PowerPiece],
    kernel: Kernel,
    weight: &Weighting<'_>,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if !(hi > lo) {
        return Ok(0.0);
    }
    let mut cuts: Vec<f64> = vec![lo, hi, 1.0];
    cuts.extend(pieces.iter().map(|p| p.lo));
    cuts.extend(weight.breakpoints());
    cuts.retain(|&c| c >= lo && c <= hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = if b.is_infinite() { a * 2.0 + 1.0 } else if a == 0.0 { 0.5 * b } else { (a * b).sqrt() };
        let piece = pieces
            .iter()
            .find(|p| mid >= p.lo && mid < p.hi)
            .copied()
            .expect("pieces cover (0, ∞)");
        let w_const = weight.eval(mid);
        let log_integrand = |u: f64| {
            let l = u.exp();
            kernel.eval(l) * weight.eval(l) * piece.coef * (u * (piece.exponent + 1.0)).exp()
        };
        let gk = |x0: f64, x1: f64| {
            if x1 > x0 {
                quadrature::integrate(log_integrand, x0.ln(), x1.ln(), QUAD_REL_TOL, 0.0)
            } else {
                0.0
            }
        };

        if a == 0.0 {
            if w_const == 0.0 {
                continue;
            }
            let split = match kernel.lambda() {
                Some(lambda) => b.min(0.5 / lambda),
                None => b,
            };
            let series = kernel.lower_series(split, piece.exponent)? * piece.coef * w_const;
            total += series + gk(split, b);
        } else if b.is_infinite() {
            if w_const == 0.0 {
                continue;
            }
            let split = match kernel.lambda() {
                Some(lambda) => a.max(60.0 / lambda),
                None => a,
            };
            let tail = kernel.upper_tail(split, piece.exponent)? * piece.coef * w_const;
            total += gk(a, split) + tail;
        } else {
            total += gk(a, b);
        }
    }
    Ok(total)
}

/// Mechanisms exercised by the verification suites and tests.
pub mod catalog {
    use super::*;

    pub fn quadratic() -> BranchingMechanism {
        BranchingMechanism::quadratic(1.0)
    }

    pub fn quadratic_subcritical() -> BranchingMechanism {
        BranchingMechanism { alpha: 0.5, beta: 1.0, levy: LevyMeasure::Zero }
    }

    /// Unit atom of unit weight on top of a Brownian part.
    pub fn unit_atom_diffusive() -> BranchingMechanism {
        BranchingMechanism {
            alpha: 0.0,
            beta: 1.0,
            levy: LevyMeasure::FiniteAtoms { atoms: vec![JumpAtom { size: 1.0, weight: 1.0 }] },
        }
    }

    pub fn two_atoms() -> BranchingMechanism {
        BranchingMechanism {
            alpha: 0.2,
            beta: 0.5,
            levy: LevyMeasure::FiniteAtoms {
                atoms: vec![JumpAtom { size: 0.5, weight: 2.0 }, JumpAtom { size: 2.0, weight: 0.5 }],
            },
        }
    }

    /// Finite-variation mechanism used for the discrete skeleton-marking case.
    pub fn unit_atom_finite_variation() -> BranchingMechanism {
        BranchingMechanism {
            alpha: 1.0,
            beta: 0.0,
            levy: LevyMeasure::FiniteAtoms { atoms: vec![JumpAtom { size: 1.0, weight: 1.0 }] },
        }
    }

    pub fn stable_15() -> BranchingMechanism {
        BranchingMechanism::stable(1.5)
    }

    pub fn stable_12_mixed() -> BranchingMechanism {
        BranchingMechanism { alpha: 0.1, beta: 0.3, levy: LevyMeasure::StableTail { index: 1.2 } }
    }

    /// Tempered-stable shape `ℓ^{-2.5} e^{-ℓ}` sampled on a log grid.
    pub fn tabulated_tempered() -> BranchingMechanism {
        let sizes: Vec<f64> = (0..=40).map(|i| 10f64.powf(-3.0 + 0.1 * i as f64)).collect();
        let density = sizes.iter().map(|&l| l.powf(-2.5) * (-l).exp()).collect();
        BranchingMechanism {
            alpha: 0.0,
            beta: 0.0,
            levy: LevyMeasure::Tabulated { sizes, density, small_exponent: 1.5, large_exponent: 3.0 },
        }
    }

    pub fn mechanisms() -> Vec<(&'static str, BranchingMechanism)> {
        vec![
            ("quadratic", quadratic()),
            ("quadratic-subcritical", quadratic_subcritical()),
            ("unit-atom-diffusive", unit_atom_diffusive()),
            ("two-atoms", two_atoms()),
            ("unit-atom-finite-variation", unit_atom_finite_variation()),
            ("stable-1.5", stable_15()),
            ("stable-1.2-mixed", stable_12_mixed()),
            ("tabulated-tempered", tabulated_tempered()),
        ]
    }

    pub fn markings() -> Vec<(&'static str, MarkingSpec)> {
        vec![
            ("none", MarkingSpec::none()),
            ("skeleton-1", MarkingSpec::skeleton(1.0)),
            ("constant-0.3", MarkingSpec { mark: MarkFunction::Constant { q: 0.3 }, alpha1: 0.5 }),
            ("threshold-1", MarkingSpec { mark: MarkFunction::Threshold { a: 1.0 }, alpha1: 0.0 }),
            (
                "tabulated-ramp",
                MarkingSpec {
                    mark: MarkFunction::Tabulated { sizes: vec![0.5, 1.0, 4.0], values: vec![0.0, 0.4, 1.0] },
                    alpha1: 0.25,
                },
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::catalog::*;
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn quadratic_values() {
        let m = quadratic();
        assert_eq!(m.psi(2.0).unwrap(), 4.0);
        assert_eq!(m.psi(0.0).unwrap(), 0.0);
        assert_eq!(m.psi_prime(3.0).unwrap(), 6.0);
        assert_eq!(m.psi_inverse(4.0).unwrap(), 2.0);
        assert_eq!(m.psi_inverse(0.0).unwrap(), 0.0);
    }

    #[test]
    fn psi_at_zero_vanishes_for_catalog() {
        for (_, m) in mechanisms() {
            assert_eq!(m.psi(0.0).unwrap(), 0.0);
            assert_eq!(m.psi_prime(0.0).unwrap(), m.alpha);
        }
    }

    #[test]
    fn stable_psi_is_power() {
        let m = stable_15();
        for &l in &[1e-3, 0.1, 1.0, 7.0, 1e3] {
            let got = m.psi(l).unwrap();
            assert!(((got - l.powf(1.5)) / l.powf(1.5)).abs() < 1e-10, "λ={l}: {got}");
        }
        assert!((m.psi(1.0).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn stable_derivative_matches_finite_difference() {
        let m = stable_15();
        let h = 1e-6;
        let fd = (m.psi(1.0 + h).unwrap() - m.psi(1.0 - h).unwrap()) / (2.0 * h);
        assert!((fd - 1.5).abs() < 1e-5);
        assert!((m.psi_prime(1.0).unwrap() - 1.5).abs() < 1e-9);
    }

    #[test]
    fn stable_constant_from_independent_quadrature() {
        // ∫(e^{-ℓ} − 1 + ℓ) ℓ^{-2.5} dℓ by plain substitution ℓ = e^u.
        let raw = quadrature::integrate(
            |u| {
                let l = f64::exp(u);
                psi_kernel(l) * l.powf(-1.5)
            },
            -60.0,
            8.0,
            1e-13,
            0.0,
        ) + 2.0 * f64::exp(8.0).powf(-0.5) - f64::exp(8.0).powf(-1.5) / 1.5;
        assert!((1.0 / raw - stable_constant(1.5)).abs() < 1e-9);
    }

    #[test]
    fn phi1_simple_cases() {
        let zero_p = MarkingSpec::skeleton(2.0);
        assert_eq!(zero_p.phi1(&quadratic(), 3.0).unwrap(), 6.0);

        let atom = BranchingMechanism {
            alpha: 0.0,
            beta: 0.0,
            levy: LevyMeasure::FiniteAtoms { atoms: vec![JumpAtom { size: 1.0, weight: 1.0 }] },
        };
        let all = MarkingSpec { mark: MarkFunction::Constant { q: 1.0 }, alpha1: 0.0 };
        assert!((all.phi1(&atom, 60.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn phi1_all_marked_stable_diverges() {
        let all = MarkingSpec { mark: MarkFunction::Constant { q: 1.0 }, alpha1: 0.0 };
        assert!(matches!(all.phi1(&stable_15(), 1.0), Err(MechanismError::Divergent { .. })));
    }

    #[test]
    fn phi1_threshold_stable_matches_direct_quadrature() {
        let marking = MarkingSpec { mark: MarkFunction::Threshold { a: 1.0 }, alpha1: 0.0 };
        let c = stable_constant(1.5);
        // Independent route: ∫_1^∞ (1 − e^{-ℓ}) C ℓ^{-2.5} dℓ in the variable t = 1/ℓ.
        let direct = quadrature::integrate(
            |t: f64| {
                if t == 0.0 {
                    return 0.0;
                }
                let l = 1.0 / t;
                (1.0 - (-l).exp()) * c * l.powf(-2.5) / (t * t)
            },
            0.0,
            1.0,
            1e-14,
            0.0,
        );
        let got = marking.phi1(&stable_15(), 1.0).unwrap();
        assert!((got - direct).abs() < 1e-10 * direct, "{got} vs {direct}");
    }

    #[test]
    fn derive_pruned_examples() {
        let none = MarkingSpec::none();
        assert_eq!(derive_pruned(&quadratic(), &none).unwrap(), quadratic());
        assert_eq!(derive_pruned(&two_atoms(), &none).unwrap(), two_atoms());

        let pruned = derive_pruned(&quadratic(), &MarkingSpec::skeleton(1.5)).unwrap();
        assert_eq!(pruned.psi(2.0).unwrap(), 4.0 + 3.0);

        let mech = BranchingMechanism {
            alpha: 0.0,
            beta: 1.0,
            levy: LevyMeasure::FiniteAtoms { atoms: vec![JumpAtom { size: 1.0, weight: 1.0 }] },
        };
        let all = MarkingSpec { mark: MarkFunction::Constant { q: 1.0 }, alpha1: 0.0 };
        let pruned = derive_pruned(&mech, &all).unwrap();
        assert_eq!(pruned.alpha, 1.0);
        assert_eq!(pruned.levy, LevyMeasure::Zero);
        for &l in &[0.1, 1.0, 5.0] {
            assert!(close(pruned.psi(l).unwrap(), l + l * l, 1e-15));
            let sum = mech.psi(l).unwrap() + all.phi1(&mech, l).unwrap();
            assert!(close(pruned.psi(l).unwrap(), sum, 1e-14));
        }
    }

    #[test]
    fn pure_atom_without_diffusion_is_finite_variation() {
        let mech = BranchingMechanism {
            alpha: 0.0,
            beta: 0.0,
            levy: LevyMeasure::FiniteAtoms { atoms: vec![JumpAtom { size: 1.0, weight: 1.0 }] },
        };
        assert!(!mech.is_infinite_variation());
        let d = validate(&mech, &MarkingSpec::none());
        assert!(!d.get("infinite-variation").unwrap().passed);
        assert!(d.is_ok(SimMode::Discrete));
        assert!(!d.is_ok(SimMode::Continuum));
    }

    #[test]
    fn joint_v_examples() {
        assert_eq!(solve_joint_v(&quadratic(), 1.3, 0.0).unwrap(), 1.3);
        assert!((solve_joint_v(&quadratic(), 1.0, 3.0).unwrap() - 2.0).abs() < 1e-12);
        let m0 = derive_pruned(&quadratic(), &MarkingSpec::skeleton(1.0)).unwrap();
        let v = solve_joint_v(&m0, 1.0, 4.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert!((m0.psi(v).unwrap() - 6.0).abs() < 1e-11);
    }

    #[test]
    fn validate_examples() {
        let d = validate(&quadratic(), &MarkingSpec::skeleton(1.0));
        assert!(d.findings.iter().all(|f| f.passed), "{d}");
        assert!(d.get("height-continuity").unwrap().passed);

        let d = validate(&stable_15(), &MarkingSpec::skeleton(1.0));
        let f = d.get("skeleton-continuum").unwrap();
        assert!(!f.passed && f.message.contains("discrete"));
        assert!(d.is_ok(SimMode::Discrete));

        let neg = BranchingMechanism { alpha: -1.0, ..quadratic() };
        let d = validate(&neg, &MarkingSpec::none());
        assert!(!d.is_ok(SimMode::Discrete));
        assert!(d.get("sub-criticality").unwrap().message.contains("sub-criticality violated"));
    }

    #[test]
    fn divergent_tabulated_is_reported() {
        let m = BranchingMechanism {
            alpha: 0.0,
            beta: 0.0,
            levy: LevyMeasure::Tabulated {
                sizes: vec![0.5, 2.0],
                density: vec![1.0, 0.1],
                small_exponent: 2.5,
                large_exponent: 1.5,
            },
        };
        let err = m.psi(1.0).unwrap_err();
        assert_eq!(err, MechanismError::Divergent { condition: MOMENT_CONDITION });
        let d = validate(&m, &MarkingSpec::none());
        assert!(!d.get("moment-condition").unwrap().passed);
    }

    #[test]
    fn tabulated_matches_piecewise_reference() {
        // Moments of a log-log-linear table are exact per piece; compare
        // against brute-force trapezoid in log space.
        let m = tabulated_tempered();
        let pieces = m.levy.pieces().unwrap();
        let got = m.levy.first_moment_above(0.01).unwrap();
        let n = 400_000;
        let (a, b) = (0.01f64.ln(), 400f64.ln());
        let h = (b - a) / n as f64;
        let mut brute = 0.0;
        for i in 0..=n {
            let u = a + h * i as f64;
            let l = u.exp();
            let p = pieces.iter().find(|p| l >= p.lo && l < p.hi).unwrap();
            let f = l * p.density(l) * l;
            brute += if i == 0 || i == n { 0.5 * f } else { f };
        }
        brute *= h;
        let tail = pieces.last().unwrap().moment(1.0, 400.0, f64::INFINITY);
        assert!((got - brute - tail).abs() < 1e-8 * got, "{got} vs {}", brute + tail);
    }
}
