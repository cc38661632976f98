//! Monte Carlo construction and pruning of marked Lévy continuum random trees.
//!
//! - [`mechanism`]: branching mechanisms ψ, marking rules, the pruned
//!   mechanism ψ₀ = ψ + φ₁ and numerical inverses.
//! - [`pathgen`]: spectrally positive Lévy paths with a marked jump ledger.
//! - [`exploration`]: the marked LIFO exploration stack, pruned time change
//!   and excursion reports.
//! - [`gw`]: Galton–Watson trees, discrete pruning, and the scaled discrete
//!   exploration used when the continuum stack cannot carry skeleton marks.
//! - [`estimators`]: Monte Carlo Laplace estimates, KS tests and the
//!   verification suites comparing simulation with closed forms.
//! - [`config`]: experiment configuration, report emission and the command
//!   implementations behind the `crt-prune` binary.
//!
//! All randomness flows from [`streams`]: one master seed, with independent
//! per-path streams, so every run is reproducible regardless of how work is
//! spread across threads.

use serde::{Deserialize, Serialize};

pub mod config;
pub mod estimators;
pub mod exploration;
pub mod gw;
pub mod mechanism;
pub mod pathgen;
pub mod streams;
mod numeric;
mod quadrature;

/// Whether skeleton marks live on the continuum stack or on a discretised tree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    #[default]
    Continuum,
    Discrete,
}
