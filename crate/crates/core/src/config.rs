//! Experiment configuration, report files and the commands behind the
//! `crt-prune` binary.
//!
//! A configuration is one TOML file:
//!
//! ```toml
//! seed = 7
//!
//! [mechanism]            # ψ(λ) = αλ + βλ² + ∫(e^{−λℓ} − 1 + λℓ)π(dℓ)
//! alpha = 0.0
//! beta = 1.0
//! levy = { variant = "zero" }
//!
//! [marking]              # node marks p(ℓ) and skeleton intensity α₁
//! alpha1 = 1.0
//! mark = { variant = "constant", q = 0.0 }
//!
//! [simulation]
//! mode = "continuum"     # or "discrete"
//! n = 10000
//! dt = 1e-4
//! horizon = 1e5
//! lambdas = [0.5, 1.0, 2.0, 4.0]
//! ```
//!
//! Every other field has a default (see [`SimulationSection`]). The config
//! hash is the SHA-256 of the canonical JSON form (keys sorted), so it does
//! not depend on key order or formatting in the TOML file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimators::{
    self, excursion_length_reports, joint_length_reports, pruned_length_reports, special_markov_reports,
    special_markov_slope, CheckSettings, ComparisonReport, MeanEstimate, SlopeReport,
    TwoSampleReport,
};
use crate::exploration::MarkedExcursionReport;
use crate::gw::{self, DiscreteMarking, DiscretizationMap, OffspringLaw};
use crate::mechanism::{derive_pruned, validate, BranchingMechanism, Diagnostics, MarkingSpec, Severity};
use crate::SimMode;

/// Version of the CSV and JSON layouts written here.
pub const SCHEMA_VERSION: u32 = 1;

pub const SUITES: [&str; 7] = ["excursion", "pruned", "joint", "total-mass", "special-markov", "gw-oracle", "all"];

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input or unusable request (exit code 2).
    #[error("{0}")]
    Usage(String),
    /// Validation or gate failure (exit code 1).
    #[error("{0}")]
    Failed(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) | CliError::Io { .. } => 1,
        }
    }
}

impl From<estimators::EstimatorError> for CliError {
    fn from(e: estimators::EstimatorError) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub mechanism: BranchingMechanism,
    #[serde(default = "MarkingSpec::none")]
    pub marking: MarkingSpec,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gw: Option<GwSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub mode: SimMode,
    pub n: usize,
    pub dt: f64,
    /// Jump cutoff ε; chosen automatically when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub horizon: f64,
    pub initial_mass: f64,
    pub mark_initial_atom: bool,
    /// Generation height of discrete mode.
    pub mesh: f64,
    pub threshold: f64,
    pub sample_times: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `(γ, κ)` pairs.
    pub joint_grid: Vec<(f64, f64)>,
    pub lambda_primes: Vec<f64>,
    /// Marked stretches longer than this are counted in `simulate` output.
    pub ledger_threshold: f64,
    pub histogram_bins: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let c = CheckSettings::default();
        SimulationSection {
            mode: c.mode,
            n: c.n,
            dt: c.dt,
            epsilon: None,
            horizon: c.horizon,
            initial_mass: c.initial_mass,
            mark_initial_atom: false,
            mesh: c.mesh,
            threshold: c.threshold,
            sample_times: vec![0.25, 0.5, 1.0],
            lambdas: vec![0.5, 1.0, 2.0, 4.0],
            joint_grid: vec![(0.5, 0.0), (0.5, 1.0), (0.5, 4.0), (1.0, 0.0), (1.0, 1.0), (1.0, 4.0)],
            lambda_primes: vec![0.5, 1.0, 2.0],
            ledger_threshold: 0.01,
            histogram_bins: 50,
        }
    }
}

/// Discrete oracle suite: an explicit offspring law and marking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GwSection {
    pub offspring: Vec<f64>,
    #[serde(default)]
    pub node_marks: Vec<f64>,
    #[serde(default)]
    pub node_threshold: usize,
    #[serde(default)]
    pub edge_mark: f64,
    #[serde(default = "default_gw_trees")]
    pub trees: usize,
    /// Plane trees up to this size are pruned exhaustively against the oracle.
    #[serde(default = "default_gw_enumeration")]
    pub enumerate_up_to: usize,
}

fn default_gw_trees() -> usize {
    100_000
}

fn default_gw_enumeration() -> usize {
    7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("crt-prune-out") }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output section
    /// is left out: where results go does not change what they are.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn settings(&self) -> CheckSettings {
        let s = &self.simulation;
        CheckSettings {
            initial_mass: s.initial_mass,
            n: s.n,
            seed: self.seed,
            dt: s.dt,
            horizon: s.horizon,
            mode: s.mode,
            mesh: s.mesh,
            threshold: s.threshold,
        }
    }
}

/// Mechanism diagnostics plus the mode-specific checks.
pub fn diagnostics(config: &ExperimentConfig) -> Diagnostics {
    let mut d = validate(&config.mechanism, &config.marking);
    let s = &config.simulation;
    let mut push = |check: &str, passed: bool, message: String| {
        d.findings.push(crate::mechanism::Finding { check: check.into(), passed, severity: Severity::Error, message })
    };
    let grid_ok = s.dt > 0.0 && s.horizon > s.dt && s.initial_mass > 0.0 && s.threshold > 0.0;
    push(
        "simulation-grid",
        grid_ok,
        format!("dt = {}, horizon = {}, initial mass = {}, threshold = {}", s.dt, s.horizon, s.initial_mass, s.threshold),
    );
    if s.mode == SimMode::Discrete {
        match DiscretizationMap::default_for(&config.mechanism, &config.marking, s.mesh) {
            Ok(map) => {
                let msg = if map.warnings.is_empty() {
                    format!("mesh {}: δ = {:.4e}, Δt = {:.4e}", s.mesh, map.mass_unit, map.time_unit)
                } else {
                    map.warnings.join("; ")
                };
                push("discrete-map", true, msg)
            }
            Err(e) => push("discrete-map", false, e.to_string()),
        }
    }
    d
}

/// `validate`: diagnostics text and whether the config is usable in its mode.
pub fn cmd_validate(config: &ExperimentConfig) -> (String, bool) {
    let d = diagnostics(config);
    let ok = d.is_ok(config.simulation.mode);
    let mut text = d.to_string();
    let _ = writeln!(text, "mode: {:?}; verdict: {}", config.simulation.mode, if ok { "valid" } else { "invalid" });
    (text, ok)
}

fn require_valid(config: &ExperimentConfig) -> Result<(), CliError> {
    let (text, ok) = cmd_validate(config);
    if ok {
        Ok(())
    } else {
        Err(CliError::Failed(text))
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub suite: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: SimMode,
    pub comparisons: Vec<ComparisonReport>,
    pub slopes: Vec<SlopeReport>,
    pub two_sample: Vec<TwoSampleReport>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(suite: &str, config: &ExperimentConfig, hash: &str) -> Self {
        SuiteReport {
            schema_version: SCHEMA_VERSION,
            suite: suite.into(),
            config_hash: hash.into(),
            seed: config.seed,
            mode: config.simulation.mode,
            ..Default::default()
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.comparisons.iter().all(|c| c.passed)
            && self.slopes.iter().all(|s| s.passed)
            && self.two_sample.iter().all(|t| t.passed);
        self
    }

    /// One row per gate: suite, check, label, analytic, estimate, se, z, budget, verdict.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for c in &self.comparisons {
            rows.push(format!(
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{}",
                self.suite, c.check, c.label, c.analytic, c.estimate, c.se, c.z, c.budget, verdict(c.passed)
            ));
        }
        for s in &self.slopes {
            rows.push(format!(
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{}",
                self.suite, s.check, s.label, s.target, s.slope, s.se, s.z, s.budget, verdict(s.passed)
            ));
        }
        for t in &self.two_sample {
            rows.push(format!(
                "{},{},t={},{:e},{:e},{:e},{:e},{:e},{}",
                self.suite,
                t.check,
                t.time,
                t.absorbed_direct,
                t.absorbed_pruned,
                t.absorption_se,
                t.p_value,
                t.ks_statistic,
                verdict(t.passed)
            ));
        }
        rows
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for c in &self.comparisons {
            let _ = writeln!(
                out,
                "{:<16} {:<22} analytic {:>10.6} estimate {:>10.6} se {:>9.2e} z {:>7.2} budget {:>8.2e}  {}",
                c.check,
                c.label,
                c.analytic,
                c.estimate,
                c.se,
                c.z,
                c.budget,
                verdict(c.passed)
            );
        }
        for s in &self.slopes {
            let _ = writeln!(
                out,
                "{:<16} {:<22} target   {:>10.6} slope    {:>10.6} se {:>9.2e} z {:>7.2}                  {}",
                "slope",
                s.label,
                s.target,
                s.slope,
                s.se,
                s.z,
                verdict(s.passed)
            );
        }
        for t in &self.two_sample {
            let _ = writeln!(
                out,
                "{:<16} t={:<20} KS D {:>10.6} p {:>10.3e} absorbed {:.4}/{:.4} (se {:.1e})  {}",
                t.check,
                t.time,
                t.ks_statistic,
                t.p_value,
                t.absorbed_pruned,
                t.absorbed_direct,
                t.absorption_se,
                verdict(t.passed)
            );
        }
        out
    }
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

pub const REPORT_CSV_HEADER: &str = "suite,check,label,reference,estimate,se,z,budget,verdict";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub library_version: String,
    pub wall_time_seconds: f64,
    pub suites: Vec<(String, bool)>,
    pub files: Vec<String>,
}

/// Expands `all` and checks the suite name.
pub fn suite_list(suite: &str) -> Result<Vec<&'static str>, CliError> {
    match suite {
        "all" => Ok(SUITES[..6].to_vec()),
        s => SUITES[..6]
            .iter()
            .find(|&&known| known == s)
            .map(|&k| vec![k])
            .ok_or_else(|| CliError::Usage(format!("unknown suite {s:?}; expected one of {}", SUITES.join(", ")))),
    }
}

/// Runs the requested suites. The marked batch is simulated once and serves
/// every Laplace suite: `σ` does not depend on the marks, so the excursion
/// suite and the κ = 0 column of the joint suite use the same samples.
pub fn run_suites(config: &ExperimentConfig, suite: &str) -> Result<Vec<SuiteReport>, CliError> {
    let suites = suite_list(suite)?;
    let hash = config.hash();
    // `all` skips the discrete oracle when there is nothing to run it on.
    if suite == "gw-oracle" && config.gw.is_none() {
        return Err(CliError::Usage("suite gw-oracle needs a [gw] section".into()));
    }
    let simulated: Vec<&str> = suites.iter().copied().filter(|s| *s != "gw-oracle").collect();
    if !simulated.is_empty() {
        require_valid(config)?;
    }
    let settings = config.settings();
    let (mech, marking, sim) = (&config.mechanism, &config.marking, &config.simulation);

    let laplace = ["excursion", "pruned", "joint", "special-markov"];
    let batch = if simulated.iter().any(|s| laplace.contains(s)) {
        Some(simulate_batch(config, &[])?)
    } else {
        None
    };

    let mut reports = Vec::new();
    for &s in &suites {
        let mut r = SuiteReport::new(s, config, &hash);
        match s {
            "excursion" => {
                let (samples, gate) = batch.as_ref().expect("batch");
                r.comparisons = excursion_length_reports(mech, &sim.lambdas, samples, *gate)?;
            }
            "pruned" => {
                let (samples, gate) = batch.as_ref().expect("batch");
                r.comparisons = pruned_length_reports(mech, marking, &sim.lambdas, samples, *gate)?;
            }
            "joint" => {
                let (samples, gate) = batch.as_ref().expect("batch");
                r.comparisons = joint_length_reports(mech, marking, &sim.joint_grid, samples, *gate)?;
            }
            "special-markov" => {
                let (samples, gate) = batch.as_ref().expect("batch");
                r.comparisons = special_markov_reports(mech, marking, &sim.lambda_primes, samples, *gate)?;
                if !marking.is_degenerate() {
                    r.slopes = sim
                        .lambda_primes
                        .iter()
                        .filter(|&&lp| lp > 0.0)
                        .map(|&lp| special_markov_slope(mech, marking, lp, samples, *gate))
                        .collect::<Result<_, _>>()?;
                }
            }
            "total-mass" => {
                r.two_sample = estimators::check_total_mass(mech, marking, &sim.sample_times, &settings)?;
            }
            "gw-oracle" => match &config.gw {
                Some(g) => r.comparisons = gw_oracle_reports(g, config.seed, settings.threshold)?,
                None => continue,
            },
            _ => unreachable!(),
        }
        reports.push(r.finish());
    }
    Ok(reports)
}

fn simulate_batch(
    config: &ExperimentConfig,
    sample_times: &[f64],
) -> Result<(Vec<MarkedExcursionReport>, estimators::Gate), CliError> {
    let sim = &config.simulation;
    let settings = config.settings();
    if sim.epsilon.is_none() && !sim.mark_initial_atom {
        return Ok(estimators::simulate(
            &config.mechanism,
            &config.marking,
            &settings,
            sample_times,
            sim.ledger_threshold,
        )?);
    }
    match sim.mode {
        SimMode::Discrete => Err(CliError::Usage("epsilon and mark_initial_atom apply to continuum mode only".into())),
        SimMode::Continuum => {
            use crate::exploration::{run_batch, ExcursionSetup};
            use crate::pathgen::{SimGrid, SmallJumpPolicy};
            let fail = |e: &dyn std::fmt::Display| CliError::Failed(e.to_string());
            let grid = match sim.epsilon {
                Some(eps) => SimGrid::new(sim.dt, sim.horizon, eps, SmallJumpPolicy::GaussianMatch),
                None => SimGrid::auto(&config.mechanism, sim.dt, sim.horizon),
            }
            .map_err(|e| fail(&e))?;
            let setup = ExcursionSetup::new(&config.mechanism, &config.marking, &grid, sim.initial_mass, sample_times)
                .map_err(|e| fail(&e))?
                .with_ledger_threshold(sim.ledger_threshold)
                .with_initial_mark(sim.mark_initial_atom);
            let budget = estimators::discretization_budget(sim.dt, setup.increments().small_jump_bias());
            Ok((
                run_batch(&setup, config.seed, sim.n),
                estimators::Gate { threshold: sim.threshold, budget },
            ))
        }
    }
}

/// Root offspring of pruned GW trees against the exact oracle, one report
/// per class `k`. The SE of a class frequency is the binomial SE under the
/// oracle probability.
pub fn gw_oracle_reports(g: &GwSection, seed: u64, threshold: f64) -> Result<Vec<ComparisonReport>, CliError> {
    let fail = |e: gw::GwError| CliError::Failed(e.to_string());
    let usage = |e: gw::GwError| CliError::Usage(e.to_string());
    let law = OffspringLaw::new(g.offspring.clone()).map_err(usage)?;
    let marking = DiscreteMarking { node: g.node_marks.clone(), threshold: g.node_threshold, edge: g.edge_mark };
    let oracle = gw::pruned_offspring_oracle(&law, &marking).map_err(usage)?;
    let mut reports = Vec::new();

    // Exhaustive pruning cross-check on small trees.
    let mut mismatches = 0u64;
    let mut cases = 0u64;
    for n in 1..=g.enumerate_up_to {
        for offspring in gw::plane_trees(n) {
            let tree = gw::DiscreteTree::from_offspring(offspring).map_err(fail)?;
            for (node, edge) in mark_assignments(n) {
                let t = tree.with_marks(node, edge).map_err(fail)?;
                cases += 1;
                mismatches += u64::from(gw::prune_indices(&t) != gw::prune_indices_by_ancestor_scan(&t));
            }
        }
    }
    let exact = MeanEstimate {
        mean: mismatches as f64,
        se: 0.0,
        n: cases,
        censored_fraction: 0.0,
        lower: mismatches as f64,
        upper: mismatches as f64,
    };
    reports.push(ComparisonReport::new(
        "prune_vs_ancestor_scan",
        format!("trees<= {} nodes, {cases} assignments", g.enumerate_up_to),
        0.0,
        "mismatch count",
        &exact,
        0.0,
        threshold,
    ));

    // Root degree only needs the root's children and their edge marks, but
    // full trees are sampled and pruned so the whole pipeline is exercised.
    const CAP: usize = 10_000_000;
    let degrees: Vec<Result<usize, gw::GwError>> = {
        use rayon::prelude::*;
        (0..g.trees as u64)
            .into_par_iter()
            .map(|i| {
                let tree = gw::sample_tree(&law, seed, i, CAP)?;
                let marked = gw::mark(&tree, &marking, seed, i)?;
                Ok(gw::prune(&marked).offspring()[0] as usize)
            })
            .collect()
    };
    let mut counts = vec![0u64; law.max_offspring() + 1];
    for d in degrees {
        counts[d.map_err(fail)?] += 1;
    }
    let n = g.trees as f64;
    for (k, (&p, &c)) in oracle.probs().iter().zip(&counts).enumerate() {
        let est = MeanEstimate {
            mean: c as f64 / n,
            se: (p * (1.0 - p) / n).sqrt(),
            n: g.trees as u64,
            censored_fraction: 0.0,
            lower: c as f64 / n,
            upper: c as f64 / n,
        };
        reports.push(ComparisonReport::new(
            "pruned_root_degree",
            format!("k={k}"),
            p,
            "pruned_offspring_oracle",
            &est,
            0.0,
            threshold,
        ));
    }
    Ok(reports)
}

/// Every node/edge mark assignment on `n` nodes (the root edge stays unmarked).
pub fn mark_assignments(n: usize) -> impl Iterator<Item = (Vec<bool>, Vec<bool>)> {
    let bits = 2 * n - 1;
    (0u64..(1u64 << bits)).map(move |m| {
        let node = (0..n).map(|i| m >> i & 1 == 1).collect();
        let edge = (0..n).map(|i| i > 0 && m >> (n + i - 1) & 1 == 1).collect();
        (node, edge)
    })
}

/// `check`: runs the suites and writes `<suite>.json`, `report.csv` and
/// `manifest.json` under `out`. Returns the printed table and the verdict.
pub fn cmd_check(config: &ExperimentConfig, suite: &str, out: &Path) -> Result<(String, bool), CliError> {
    let start = Instant::now();
    let reports = run_suites(config, suite)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut files = Vec::new();
    let mut csv = format!("{REPORT_CSV_HEADER}\n");
    let mut table = String::new();
    for r in &reports {
        let name = format!("{}.json", r.suite);
        let path = out.join(&name);
        fs::write(&path, serde_json::to_string_pretty(r).expect("report serializes") + "\n").map_err(io_err(&path))?;
        files.push(name);
        for row in r.csv_rows() {
            csv.push_str(&row);
            csv.push('\n');
        }
        let _ = writeln!(table, "== {} [{}]", r.suite, verdict(r.passed));
        table.push_str(&r.table());
    }
    let csv_path = out.join("report.csv");
    fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    files.push("report.csv".into());
    let passed = reports.iter().all(|r| r.passed);
    write_manifest(config, out, start, reports.iter().map(|r| (r.suite.clone(), r.passed)).collect(), files)?;
    Ok((table, passed))
}

fn write_manifest(
    config: &ExperimentConfig,
    out: &Path,
    start: Instant,
    suites: Vec<(String, bool)>,
    files: Vec<String>,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: config.hash(),
        library_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        suites,
        files,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n").map_err(io_err(&path))
}

pub const SAMPLES_CSV_HEADER: &str =
    "index,seed,initial_mass,sigma,a_sigma,censored,marked_components_over_threshold,config_hash";

/// `simulate`: per-excursion rows in `samples.csv`, histograms of `σ` and
/// `A_σ` in `histogram_sigma.csv` / `histogram_a_sigma.csv`, and the manifest.
pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<usize, CliError> {
    let start = Instant::now();
    require_valid(config)?;
    let hash = config.hash();
    let samples = if config.simulation.n == 0 { Vec::new() } else { simulate_batch(config, &[])?.0 };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut csv = format!("{SAMPLES_CSV_HEADER}\n");
    for r in &samples {
        let _ = writeln!(
            csv,
            "{},{},{},{:e},{:e},{},{},{}",
            r.index,
            config.seed,
            r.initial_mass,
            r.sigma,
            r.a_sigma,
            u8::from(r.censored),
            r.pruned_components.len(),
            hash
        );
    }
    let path = out.join("samples.csv");
    fs::write(&path, csv).map_err(io_err(&path))?;
    let mut files = vec!["samples.csv".to_string()];
    let bins = config.simulation.histogram_bins.max(1);
    for (name, values) in [
        ("histogram_sigma.csv", samples.iter().map(|r| r.sigma).collect::<Vec<_>>()),
        ("histogram_a_sigma.csv", samples.iter().map(|r| r.a_sigma).collect()),
    ] {
        let path = out.join(name);
        fs::write(&path, histogram_csv(&values, bins, &hash)).map_err(io_err(&path))?;
        files.push(name.into());
    }
    write_manifest(config, out, start, Vec::new(), files)?;
    Ok(samples.len())
}

/// Equal-width bins on `[0, q99]` plus an overflow row, as CSV.
pub fn histogram_csv(values: &[f64], bins: usize, hash: &str) -> String {
    let mut out = String::from("bin_lo,bin_hi,count,config_hash\n");
    if values.is_empty() {
        return out;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let top = sorted[((sorted.len() - 1) as f64 * 0.99).round() as usize].max(f64::MIN_POSITIVE);
    let width = top / bins as f64;
    let mut counts = vec![0u64; bins + 1];
    for &v in values {
        let b = if v > top { bins } else { ((v / width) as usize).min(bins - 1) };
        counts[b] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let (lo, hi) = if i < bins { (i as f64 * width, (i + 1) as f64 * width) } else { (top, f64::INFINITY) };
        let _ = writeln!(out, "{lo:e},{hi:e},{c},{hash}");
    }
    out
}

/// Pruned mechanism for display.
pub fn pruned_mechanism(config: &ExperimentConfig) -> Result<BranchingMechanism, CliError> {
    derive_pruned(&config.mechanism, &config.marking).map_err(|e| CliError::Failed(e.to_string()))
}
